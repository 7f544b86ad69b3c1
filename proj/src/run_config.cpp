#include "gat/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "gat/error.hpp"

namespace gat {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config key '" + key + "': cannot use '" + value + "' (expected " + expected + ")");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* expected) {
  T out{};
  const char* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (value.empty() || res.ec != std::errc() || res.ptr != end) bad_value(key, value, expected);
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return parse_number<std::size_t>(key, value, "a non-negative integer");
}

double parse_real(const std::string& key, const std::string& value) {
  const double v = parse_number<double>(key, value, "a number");
  if (!std::isfinite(v)) bad_value(key, value, "a finite number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::string show(double v) { return format_double(v); }
std::string show(std::size_t v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }

struct Key {
  const char* name;
  bool generation;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SIZE_KEY(name, gen, field) \
  Key{name, gen, [](const RunConfig& c) { return show(c.field); }, \
      [](RunConfig& c, const std::string& v) { c.field = parse_size(name, v); }}
#define REAL_KEY(name, gen, field) \
  Key{name, gen, [](const RunConfig& c) { return show(c.field); }, \
      [](RunConfig& c, const std::string& v) { c.field = parse_real(name, v); }}
#define BOOL_KEY(name, gen, field) \
  Key{name, gen, [](const RunConfig& c) { return show(c.field); }, \
      [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      SIZE_KEY("count", true, gen.count),
      SIZE_KEY("frames", true, gen.frames),
      SIZE_KEY("video_dim", true, gen.video_dim),
      SIZE_KEY("audio_dim", true, gen.audio_dim),
      SIZE_KEY("classes", true, gen.classes),
      SIZE_KEY("min_labels", true, gen.min_labels),
      SIZE_KEY("max_labels", true, gen.max_labels),
      Key{"motifs", true, [](const RunConfig& c) { return c.motifs; },
          [](RunConfig& c, const std::string& v) {
            if (v != "alternate" && v != "global" && v != "local") bad_value("motifs", v, "alternate, global or local");
            c.motifs = v;
          }},
      REAL_KEY("strength", true, gen.strength),
      REAL_KEY("noise", true, gen.noise),
      SIZE_KEY("burst_length", true, gen.burst_length),
      SIZE_KEY("data_seed", true, gen.seed),

      Key{"dataset", false, [](const RunConfig& c) { return c.dataset; },
          [](RunConfig& c, const std::string& v) { c.dataset = v; }},
      Key{"split", false,
          [](const RunConfig& c) { return show(c.split[0]) + "," + show(c.split[1]) + "," + show(c.split[2]); },
          [](RunConfig& c, const std::string& v) {
            const auto parts = split_commas(v);
            if (parts.size() != 3) bad_value("split", v, "three comma-separated weights");
            for (std::size_t i = 0; i < 3; ++i) c.split[i] = parse_real("split", parts[i]);
          }},
      SIZE_KEY("split_seed", false, split_seed),
      BOOL_KEY("fit_frames", false, fit_frames),

      SIZE_KEY("heads", false, model.heads),
      SIZE_KEY("hidden", false, model.hidden),
      SIZE_KEY("layers", false, model.layers),
      SIZE_KEY("ffn_multiplier", false, model.ffn_multiplier),
      Key{"experts", false,
          [](const RunConfig& c) {
            std::string s;
            for (std::size_t i = 0; i < c.model.experts.size(); ++i) s += (i ? "," : "") + show(c.model.experts[i]);
            return s;
          },
          [](RunConfig& c, const std::string& v) {
            std::vector<std::size_t> experts;
            for (const auto& part : split_commas(v)) experts.push_back(parse_size("experts", part));
            if (experts.empty()) bad_value("experts", v, "a comma-separated list of windows");
            c.model.experts = std::move(experts);
          }},

      Key{"mode", false, [](const RunConfig& c) { return to_string(c.train.mode); },
          [](RunConfig& c, const std::string& v) { c.train.mode = parse_mode(v); }},
      SIZE_KEY("epochs", false, train.epochs),
      SIZE_KEY("batch_size", false, train.batch_size),
      REAL_KEY("lr", false, train.lr),
      REAL_KEY("beta1", false, train.beta1),
      REAL_KEY("beta2", false, train.beta2),
      REAL_KEY("adam_eps", false, train.adam_eps),
      SIZE_KEY("eval_every", false, train.eval_every),
      SIZE_KEY("early_stop_patience", false, train.early_stop_patience),
      REAL_KEY("lr_decay_factor", false, train.lr_decay_factor),
      SIZE_KEY("lr_decay_patience", false, train.lr_decay_patience),
      REAL_KEY("grad_clip", false, train.grad_clip),
      SIZE_KEY("max_steps", false, train.max_steps),
      SIZE_KEY("gap_k", false, train.gap_k),
      SIZE_KEY("seed", false, train.seed),

      REAL_KEY("epsilon", false, train.adv.epsilon),
      REAL_KEY("alpha", false, train.adv.alpha),
      REAL_KEY("beta_fr", false, train.adv.beta_fr),
      REAL_KEY("beta_js", false, train.adv.beta_js),
      BOOL_KEY("regularize_local", false, train.adv.regularize_local),

      REAL_KEY("attack_epsilon", false, attack_epsilon),
  };
  return table;
}

#undef SIZE_KEY
#undef REAL_KEY
#undef BOOL_KEY

std::string render(const RunConfig& cfg, bool generation_only) {
  std::string out;
  for (const Key& k : key_table()) {
    if (generation_only && !k.generation) continue;
    out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  }
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const Key& k : key_table()) {
    if (key == k.name) {
      k.set(*this, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string RunConfig::to_text() const { return render(*this, false); }
std::string RunConfig::gen_text() const { return render(*this, true); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Key& k : key_table()) out.emplace_back(k.name);
  return out;
}

GenSpec RunConfig::gen_spec() const {
  GenSpec spec = gen;
  if (motifs == "global") spec.kinds.assign(spec.classes, MotifKind::kGlobalMean);
  else if (motifs == "local") spec.kinds.assign(spec.classes, MotifKind::kLocalBurst);
  else spec.kinds.clear();
  return spec;
}

ModelConfig RunConfig::model_for(const Dataset& data) const {
  ModelConfig m = model;
  m.frames = data.frames;
  m.video_dim = data.video_dim;
  m.audio_dim = data.audio_dim;
  m.classes = data.classes;
  return m;
}

std::array<double, 3> RunConfig::split_fractions() const {
  const double total = split[0] + split[1] + split[2];
  if (split[0] < 0 || split[1] < 0 || split[2] < 0 || !(total > 0)) {
    throw ConfigError("split weights must be non-negative with a positive sum");
  }
  return {split[0] / total, split[1] / total, split[2] / total};
}

Experiment RunConfig::experiment_for(const Dataset& data) const { return {model_for(data), train, attack_epsilon}; }

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      base.set(t);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

}  // namespace gat
