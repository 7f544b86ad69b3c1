// Command-line front end: data generation, training, evaluation and analysis.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gat/analysis.hpp"
#include "gat/error.hpp"
#include "gat/run_config.hpp"

namespace fs = std::filesystem;
using namespace gat;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "key=value configuration file");
  cmd->add_option("--set", c.sets, "override one config key (key=value), repeatable");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  for (const auto& s : c.sets) cfg.set(s);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw DataError(DataError::Kind::kIo, "cannot write " + path.string());
}

// Writes to `path`, or to stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_text(path, text);
    std::cerr << "wrote " << path << "\n";
  }
}

Dataset load_data(const RunConfig& cfg, const std::string& override_path) {
  const std::string path = override_path.empty() ? cfg.dataset : override_path;
  if (path.empty()) throw ConfigError("no dataset given: set dataset=<path> or pass --data");
  return read_dataset(path, ReadOptions{cfg.fit_frames});
}

Dataset select_split(const RunConfig& cfg, Dataset data, const std::string& which) {
  if (which == "all") return data;
  Splits s = split(data, cfg.split_fractions(), cfg.split_seed);
  if (which == "train") return std::move(s.train);
  if (which == "val") return std::move(s.val);
  if (which == "test") return std::move(s.test);
  throw ConfigError("unknown split '" + which + "' (expected all, train, val or test)");
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    RunConfig probe;
    probe.set("attack_epsilon", item);  // reuses the strict number parser
    grid.push_back(probe.attack_epsilon);
  }
  if (grid.empty()) throw ConfigError("empty grid");
  return grid;
}

std::string partitions_json(const PartitionSummary& s) {
  using nlohmann::ordered_json;
  auto summary = [](const MetricsReport& r) {
    return ordered_json{{"gap", r.gap}, {"map", r.map}, {"perr", r.perr}, {"hit_at_1", r.hit_at_1}};
  };
  ordered_json parts = ordered_json::array();
  for (const auto& p : s.parts) parts.push_back(summary(p));
  ordered_json doc = {{"partitions", s.parts.size()},
                      {"k", s.mean.k},
                      {"mean", summary(s.mean)},
                      {"sd", summary(s.sd)},
                      {"parts", parts}};
  return doc.dump(2) + "\n";
}

// ---- commands ----

int cmd_gen_data(const Common& common, const std::string& out) {
  const RunConfig cfg = resolve(common);
  const Dataset data = generate(cfg.gen_spec());
  fs::path path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_dataset(data, path);
  write_text(path.string() + ".manifest", "# generation settings for " + path.filename().string() + "\n" +
                                              cfg.gen_text());
  std::cerr << "wrote " << data.size() << " examples to " << path.string() << "\n";
  return kOk;
}

int cmd_train(const Common& common, const std::string& mode, const std::string& data_path, const std::string& out) {
  RunConfig cfg = resolve(common);
  if (!mode.empty()) cfg.set("mode", mode);
  if (!data_path.empty()) cfg.dataset = data_path;
  const Dataset data = load_data(cfg, "");
  const Splits s = split(data, cfg.split_fractions(), cfg.split_seed);
  const fs::path dir(out);
  fs::create_directories(dir);
  write_text(dir / "config.txt", cfg.to_text());

  std::cerr << "training " << to_string(cfg.train.mode) << " on " << s.train.size() << " examples ("
            << s.val.size() << " val, " << s.test.size() << " test)\n";
  const TrainResult r = train(s.train, s.val, cfg.model_for(data), cfg.train);

  std::string log;
  for (const auto& line : r.log) log += line + "\n";
  write_text(dir / "train_log.jsonl", log);
  save_checkpoint(r.best, dir / "checkpoint.bin");
  const Dataset& report_set = s.test.size() > 0 ? s.test : s.val;
  write_text(dir / "metrics.json", to_json(evaluate(r.best, report_set, cfg.train.gap_k)));
  std::cerr << "steps " << r.steps << ", epochs " << r.epochs_run << (r.stopped_early ? " (early stop)" : "")
            << ", best val GAP " << r.best_val_gap << "\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", out;
  std::size_t partitions = 0;
};

int cmd_eval(const Common& common, const EvalArgs& a) {
  const RunConfig cfg = resolve(common);
  const GatParams params = load_checkpoint(a.checkpoint);
  const Dataset data = select_split(cfg, load_data(cfg, a.data), a.split);
  if (data.size() == 0) throw DataError(DataError::Kind::kInconsistent, "split '" + a.split + "' is empty");
  if (a.partitions > 0) {
    emit(a.out, partitions_json(partitioned_metrics(predict(params, data), a.partitions, cfg.train.gap_k)));
  } else {
    emit(a.out, to_json(evaluate(params, data, cfg.train.gap_k)));
  }
  return kOk;
}

int cmd_attack(const Common& common, const EvalArgs& a, std::optional<double> epsilon, const std::string& drift_out) {
  const RunConfig cfg = resolve(common);
  const double eps = epsilon.value_or(cfg.attack_epsilon);
  const GatParams params = load_checkpoint(a.checkpoint);
  const Dataset data = select_split(cfg, load_data(cfg, a.data), a.split);
  emit(a.out, to_json(attack_eval(params, data, eps, cfg.train.gap_k)));
  if (!drift_out.empty()) {
    const DriftReport d = drift_norm(params, data, eps);
    nlohmann::ordered_json doc = {{"epsilon", eps}, {"video", d.video}, {"audio", d.audio}, {"total", d.total}};
    emit(drift_out, doc.dump(2) + "\n");
  }
  return kOk;
}

int cmd_attention(const Common& common, const EvalArgs& a, std::size_t id, const std::string& modality,
                  std::optional<double> epsilon) {
  const RunConfig cfg = resolve(common);
  if (modality != "video" && modality != "audio") throw ConfigError("--modality must be video or audio");
  const GatParams params = load_checkpoint(a.checkpoint);
  const Dataset data = select_split(cfg, load_data(cfg, a.data), a.split);
  check_compatible(params.config, data);
  const Example* found = nullptr;
  for (const auto& ex : data.examples) {
    if (ex.id == id) found = &ex;
  }
  if (found == nullptr) {
    throw DataError(DataError::Kind::kInconsistent, "example id " + std::to_string(id) + " not found in split '" +
                                                        a.split + "'");
  }
  const ExampleAttention att = example_attention(params, *found, epsilon.value_or(cfg.attack_epsilon));
  if (a.out.empty()) throw ConfigError("attention needs --out <csv>");
  write_profile_csv(att, modality == "audio", a.out);
  std::cerr << "wrote " << a.out << "\n";
  return kOk;
}

int cmd_sweep(const Common& common, const std::string& data_path, const std::string& param, const std::string& grid,
              const std::string& mode, std::size_t jobs, const std::string& out) {
  RunConfig cfg = resolve(common);
  if (!mode.empty()) cfg.set("mode", mode);
  const SweepParam p = parse_sweep_param(param);
  const std::vector<double> values = parse_grid(grid);
  const Dataset data = load_data(cfg, data_path);
  const Splits s = split(data, cfg.split_fractions(), cfg.split_seed);
  const SweepResult r = sweep(p, values, cfg.experiment_for(data), s.train, s.val, jobs);
  write_sweep_csv(r, out);
  std::size_t failed = 0;
  for (const auto& pt : r.points) {
    if (!pt.error.empty()) {
      ++failed;
      std::cerr << param << "=" << format_double(pt.value) << " failed: " << pt.error << "\n";
    }
  }
  std::cerr << "wrote " << out << " (" << r.points.size() - failed << "/" << r.points.size() << " points ok)\n";
  return kOk;
}

MetricsReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kIo, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return metrics_from_json(ss.str());
}

int cmd_compare(const std::string& a, const std::string& b, std::size_t top, const std::string& out) {
  const ClassApDelta d = class_ap_delta(read_report(a), read_report(b));
  if (!out.empty()) write_delta_csv(d, out);
  std::cout << "top " << top << " (a better):\n";
  for (const auto& c : d.top(top)) std::cout << "  class " << c.cls << "  " << format_double(c.delta) << "\n";
  std::cout << "bottom " << top << " (b better):\n";
  for (const auto& c : d.bottom(top)) std::cout << "  class " << c.cls << "  " << format_double(c.delta) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated multi-level attention classifier for two-modality clips, with adversarial attention "
               "regularization."};
  app.require_subcommand(1);

  Common common;
  std::string out, data_path, mode;
  EvalArgs ev;
  std::optional<double> epsilon;
  std::string drift_out, modality = "video";
  std::size_t example_id = 0, jobs = 1, top = 5;
  std::string param, grid, report_a, report_b;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, common);
  gen->add_option("-o,--out", out, "dataset file (JSONL)")->required();

  auto* tr = app.add_subcommand("train", "train a model and write checkpoint, log and test metrics");
  add_common(tr, common);
  tr->add_option("-m,--mode", mode, "sa-ce, gmsa-ce, gmsa-adv, gat-fr or gat-js");
  tr->add_option("-d,--data", data_path, "dataset file (overrides dataset=)");
  tr->add_option("-o,--out", out, "output directory")->required();

  auto add_eval_args = [&](CLI::App* cmd, const std::string& default_split) {
    add_common(cmd, common);
    ev.split = default_split;
    cmd->add_option("-k,--checkpoint", ev.checkpoint, "checkpoint file")->required();
    cmd->add_option("-d,--data", ev.data, "dataset file (overrides dataset=)");
    cmd->add_option("--split", ev.split, "all, train, val or test (split settings from the config)");
    cmd->add_option("-o,--out", ev.out, "output file (stdout when omitted)");
  };

  auto* eval = app.add_subcommand("eval", "metrics of a checkpoint on a dataset split");
  add_eval_args(eval, "test");
  eval->add_option("--partitions", ev.partitions, "report mean and sd over this many contiguous partitions");

  auto* attack = app.add_subcommand("attack", "metrics on FGSM examples built against the checkpoint");
  add_eval_args(attack, "test");
  attack->add_option("-e,--epsilon", epsilon, "perturbation radius (default attack_epsilon)");
  attack->add_option("--drift-out", drift_out, "also write the attention drift norm as JSON");

  auto* att = app.add_subcommand("attention", "per-frame attention profile of one example as CSV");
  add_eval_args(att, "test");
  att->get_option("--split")->description("all, train, val or test (default all)");
  att->add_option("-i,--example-id", example_id, "example id")->required();
  att->add_option("--modality", modality, "video or audio");
  att->add_option("-e,--epsilon", epsilon, "radius for the adversarial columns (default attack_epsilon)");

  auto* sw = app.add_subcommand("sweep", "train once per grid value and record validation GAP and drift");
  add_common(sw, common);
  sw->add_option("-d,--data", data_path, "dataset file (overrides dataset=)");
  sw->add_option("-p,--param", param, "epsilon, alpha or window")->required();
  sw->add_option("-g,--grid", grid, "comma-separated values")->required();
  sw->add_option("-m,--mode", mode, "training mode (default from config)");
  sw->add_option("-j,--jobs", jobs, "grid points trained in parallel");
  sw->add_option("-o,--out", out, "CSV file")->required();

  auto* cmp = app.add_subcommand("compare-classes", "per-class AP differences between two metrics files");
  cmp->add_option("a", report_a, "metrics.json of model a")->required();
  cmp->add_option("b", report_b, "metrics.json of model b")->required();
  cmp->add_option("-n,--top", top, "how many classes to list at each end");
  cmp->add_option("-o,--out", out, "CSV file with every class delta");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common, out);
    if (tr->parsed()) return cmd_train(common, mode, data_path, out);
    if (eval->parsed()) return cmd_eval(common, ev);
    if (attack->parsed()) return cmd_attack(common, ev, epsilon, drift_out);
    if (att->parsed() && att->get_option("--split")->count() == 0) ev.split = "all";
    if (att->parsed()) return cmd_attention(common, ev, example_id, modality, epsilon);
    if (sw->parsed()) return cmd_sweep(common, data_path, param, grid, mode, jobs, out);
    if (cmp->parsed()) return cmd_compare(report_a, report_b, top, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
