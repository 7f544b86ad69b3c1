#include "gat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

#include "gat/error.hpp"

namespace gat {

namespace {

using nlohmann::json;

constexpr const char* kFormatName = "gat-dataset";
// Separates the direction stream from per-example streams.
constexpr std::uint64_t kDirectionStream = 0x6d6f74696673ULL;

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(n);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (auto& x : v) {
      x = gauss(rng);
      sq += x * x;
    }
  } while (sq < 1e-24);
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& x : v) x *= inv;
  return v;
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32)};
  return std::mt19937_64(seq);
}

[[noreturn]] void fail(DataError::Kind kind, const std::string& what) { throw DataError(kind, what); }

json matrix_json(const Tensor& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < t.dim(1); ++c) row.push_back(t.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Tensor matrix_from_json(const json& rows, std::size_t width, const std::string& where) {
  if (!rows.is_array()) fail(DataError::Kind::kMalformed, where + " is not an array of rows");
  std::vector<double> values;
  values.reserve(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const json& row = rows[r];
    if (!row.is_array() || row.size() != width) {
      fail(DataError::Kind::kInconsistent,
           where + " row " + std::to_string(r) + " does not have " + std::to_string(width) + " columns");
    }
    for (const json& v : row) {
      if (!v.is_number()) fail(DataError::Kind::kMalformed, where + " row " + std::to_string(r) + " has a non-number");
      values.push_back(v.get<double>());
    }
  }
  return Tensor({rows.size(), width}, std::move(values));
}

}  // namespace

std::string to_string(MotifKind kind) { return kind == MotifKind::kGlobalMean ? "global" : "local"; }

std::vector<MotifKind> GenSpec::resolved_kinds() const {
  if (!kinds.empty()) return kinds;
  std::vector<MotifKind> out(classes);
  for (std::size_t c = 0; c < classes; ++c) out[c] = c % 2 == 0 ? MotifKind::kGlobalMean : MotifKind::kLocalBurst;
  return out;
}

std::size_t GenSpec::resolved_burst_length() const {
  return burst_length != 0 ? burst_length : std::max<std::size_t>(1, frames / 8);
}

void GenSpec::validate() const {
  if (count == 0) throw ConfigError("gen: count must be positive");
  if (frames == 0 || video_dim == 0 || audio_dim == 0) throw ConfigError("gen: T, D_v and D_a must be positive");
  if (classes < 2) throw ConfigError("gen: K must be at least 2, got " + std::to_string(classes));
  if (min_labels < 1 || min_labels > max_labels || max_labels > classes) {
    throw ConfigError("gen: label range [" + std::to_string(min_labels) + ", " + std::to_string(max_labels) +
                      "] must satisfy 1 <= min <= max <= K");
  }
  if (!(strength > 0.0) || !std::isfinite(strength)) throw ConfigError("gen: strength must be positive");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("gen: noise must be >= 0");
  if (resolved_burst_length() > frames) throw ConfigError("gen: burst length exceeds T");
  const auto k = resolved_kinds();
  if (k.size() != classes) throw ConfigError("gen: motif kind list must have K entries");
  if (std::count(k.begin(), k.end(), MotifKind::kGlobalMean) == 0 ||
      std::count(k.begin(), k.end(), MotifKind::kLocalBurst) == 0) {
    throw ConfigError("gen: need at least one global-mean and one local-burst class");
  }
}

MotifDirections motif_directions(const GenSpec& spec) {
  std::mt19937_64 rng = stream(spec.seed, kDirectionStream);
  MotifDirections d;
  // Audio directions are a fixed random projection of the video latent, renormalized.
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> projection(spec.audio_dim * spec.video_dim);
  for (auto& p : projection) p = gauss(rng);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::vector<double> u = random_unit(rng, spec.video_dim);
    std::vector<double> a(spec.audio_dim, 0.0);
    for (std::size_t i = 0; i < spec.audio_dim; ++i) {
      for (std::size_t j = 0; j < spec.video_dim; ++j) a[i] += projection[i * spec.video_dim + j] * u[j];
    }
    double sq = 0.0;
    for (double x : a) sq += x * x;
    if (sq < 1e-24) {
      a = random_unit(rng, spec.audio_dim);
      sq = 1.0;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& x : u) x *= spec.strength;
    for (auto& x : a) x *= spec.strength * inv;
    d.video.push_back(std::move(u));
    d.audio.push_back(std::move(a));
  }
  return d;
}

Dataset generate(const GenSpec& spec) {
  spec.validate();
  const auto kinds = spec.resolved_kinds();
  const std::size_t burst = spec.resolved_burst_length();
  const MotifDirections dirs = motif_directions(spec);
  const std::size_t t = spec.frames;

  Dataset data{spec.frames, spec.video_dim, spec.audio_dim, spec.classes, {}};
  data.examples.reserve(spec.count);
  for (std::size_t id = 0; id < spec.count; ++id) {
    std::mt19937_64 rng = stream(spec.seed, id);
    Example ex;
    ex.id = id;
    const std::size_t n = std::uniform_int_distribution<std::size_t>(spec.min_labels, spec.max_labels)(rng);
    std::vector<std::size_t> classes(spec.classes);
    std::iota(classes.begin(), classes.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, spec.classes - 1)(rng);
      std::swap(classes[i], classes[j]);
    }
    ex.labels.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(ex.labels.begin(), ex.labels.end());

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> video(t * spec.video_dim), audio(t * spec.audio_dim);
    for (auto& v : video) v = spec.noise * gauss(rng);
    for (auto& a : audio) a = spec.noise * gauss(rng);

    for (std::size_t c : ex.labels) {
      std::size_t start = 0, len = t;
      if (kinds[c] == MotifKind::kLocalBurst) {
        start = std::uniform_int_distribution<std::size_t>(0, t - burst)(rng);
        len = burst;
      }
      for (std::size_t f = start; f < start + len; ++f) {
        for (std::size_t i = 0; i < spec.video_dim; ++i) video[f * spec.video_dim + i] += dirs.video[c][i];
        for (std::size_t i = 0; i < spec.audio_dim; ++i) audio[f * spec.audio_dim + i] += dirs.audio[c][i];
      }
    }
    ex.video = Tensor({t, spec.video_dim}, std::move(video));
    ex.audio = Tensor({t, spec.audio_dim}, std::move(audio));
    data.examples.push_back(std::move(ex));
  }
  return data;
}

void Dataset::validate() const {
  for (const auto& ex : examples) {
    const std::string where = "record id " + std::to_string(ex.id);
    if (ex.video.shape() != Shape{frames, video_dim} || ex.audio.shape() != Shape{frames, audio_dim}) {
      fail(DataError::Kind::kInconsistent,
           where + ": video " + to_string(ex.video.shape()) + ", audio " + to_string(ex.audio.shape()) +
               " do not match T = " + std::to_string(frames) + ", D_v = " + std::to_string(video_dim) +
               ", D_a = " + std::to_string(audio_dim));
    }
    if (ex.labels.empty()) fail(DataError::Kind::kBadLabel, where + " has no labels");
    for (std::size_t c : ex.labels) {
      if (c >= classes) {
        fail(DataError::Kind::kBadLabel,
             where + ": label " + std::to_string(c) + " >= K = " + std::to_string(classes));
      }
    }
  }
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(DataError::Kind::kIo, "cannot write dataset " + path.string());
  json header = {{"format", kFormatName}, {"version", kDatasetVersion}, {"T", data.frames},
                 {"D_v", data.video_dim},  {"D_a", data.audio_dim},     {"K", data.classes},
                 {"count", data.size()}};
  out << header.dump() << '\n';
  for (const auto& ex : data.examples) {
    json rec = {{"id", ex.id}, {"labels", ex.labels}, {"video", matrix_json(ex.video)},
                {"audio", matrix_json(ex.audio)}};
    out << rec.dump() << '\n';
  }
  if (!out) fail(DataError::Kind::kIo, "write failed for " + path.string());
}

Tensor fit_frames(const Tensor& x, std::size_t frames) {
  const std::size_t width = x.dim(1);
  std::vector<double> values(frames * width, 0.0);
  const std::size_t keep = std::min(frames, x.dim(0));
  std::copy_n(x.values().begin(), keep * width, values.begin());
  return Tensor({frames, width}, std::move(values));
}

Dataset read_dataset(const std::filesystem::path& path, const ReadOptions& options) {
  std::ifstream in(path);
  if (!in) fail(DataError::Kind::kIo, "cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.empty()) fail(DataError::Kind::kNoHeader, path.string() + ": no header line");

  Dataset data;
  std::size_t count = 0;
  try {
    const json h = json::parse(line);
    if (h.value("format", "") != kFormatName) fail(DataError::Kind::kNoHeader, path.string() + ": not a dataset file");
    const int version = h.at("version").get<int>();
    if (version != kDatasetVersion) {
      fail(DataError::Kind::kVersion, path.string() + ": dataset format version " + std::to_string(version) +
                                          ", expected " + std::to_string(kDatasetVersion));
    }
    data.frames = h.at("T").get<std::size_t>();
    data.video_dim = h.at("D_v").get<std::size_t>();
    data.audio_dim = h.at("D_a").get<std::size_t>();
    data.classes = h.at("K").get<std::size_t>();
    count = h.at("count").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(DataError::Kind::kNoHeader, path.string() + " line 1: bad header: " + e.what());
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + " line " + std::to_string(line_no);
    Example ex;
    try {
      const json rec = json::parse(line);
      ex.id = rec.at("id").get<std::size_t>();
      ex.labels = rec.at("labels").get<std::vector<std::size_t>>();
      const std::string name = where + " (record id " + std::to_string(ex.id) + ")";
      ex.video = matrix_from_json(rec.at("video"), data.video_dim, name + " video");
      ex.audio = matrix_from_json(rec.at("audio"), data.audio_dim, name + " audio");
    } catch (const json::exception& e) {
      fail(DataError::Kind::kMalformed, where + ": " + e.what());
    }
    if (options.fit_frames) {
      ex.video = fit_frames(ex.video, data.frames);
      ex.audio = fit_frames(ex.audio, data.frames);
    }
    std::sort(ex.labels.begin(), ex.labels.end());
    data.examples.push_back(std::move(ex));
  }
  if (data.size() != count) {
    fail(DataError::Kind::kInconsistent, path.string() + ": header promises " + std::to_string(count) +
                                             " records, file has " + std::to_string(data.size()));
  }
  data.validate();
  return data;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out{data.frames, data.video_dim, data.audio_dim, data.classes, {}};
  out.examples.reserve(indices.size());
  for (std::size_t i : indices) out.examples.push_back(data.examples.at(i));
  return out;
}

Splits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split: fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions sum to " + std::to_string(total));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(data.size());
  const std::size_t n_train = std::min(data.size(), static_cast<std::size_t>(std::llround(fractions[0] * n)));
  const std::size_t n_val =
      std::min(data.size() - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
  std::span<const std::size_t> all(order);
  return {subset(data, all.subspan(0, n_train)), subset(data, all.subspan(n_train, n_val)),
          subset(data, all.subspan(n_train + n_val))};
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  Batch b;
  std::vector<double> targets(indices.size() * data.classes, 0.0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Example& ex = data.examples.at(indices[r]);
    b.video.push_back(ex.video);
    b.audio.push_back(ex.audio);
    for (std::size_t c : ex.labels) targets[r * data.classes + c] = 1.0;
  }
  b.targets = Tensor({indices.size(), data.classes}, std::move(targets));
  return b;
}

}  // namespace gat
