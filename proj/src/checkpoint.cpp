#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gat/error.hpp"
#include "gat/model.hpp"

namespace gat {

namespace {

constexpr char kMagic[8] = {'G', 'A', 'T', 'C', 'K', 'P', 'T', '\0'};

// All integers and floats are written little-endian regardless of host order.
class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& data() const { return buf_; }

 private:
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> data) : buf_(std::move(data)) {}

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::kTruncated,
                            "checkpoint truncated at byte " + std::to_string(pos_) + " (needed " +
                                std::to_string(n) + " more)");
    }
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const ModelConfig& c) {
  for (std::size_t v : {c.frames, c.video_dim, c.audio_dim, c.heads, c.classes, c.hidden, c.layers,
                        c.ffn_multiplier}) {
    w.u64(v);
  }
  w.u64(c.experts.size());
  for (std::size_t e : c.experts) w.u64(e);
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  for (std::size_t* f : {&c.frames, &c.video_dim, &c.audio_dim, &c.heads, &c.classes, &c.hidden,
                         &c.layers, &c.ffn_multiplier}) {
    *f = r.u64();
  }
  const std::uint64_t experts = r.u64();
  // Guards against allocating from a garbage count before the truncation check fires.
  if (experts > r.remaining() / 8) {
    throw CheckpointError(CheckpointError::Kind::kTruncated, "checkpoint truncated in expert list");
  }
  c.experts.resize(experts);
  for (auto& e : c.experts) e = r.u64();
  return c;
}

[[noreturn]] void inconsistent(const std::string& what) {
  throw CheckpointError(CheckpointError::Kind::kInconsistent, "checkpoint inconsistent: " + what);
}

}  // namespace

void save_checkpoint(const GatParams& params, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  write_config(w, params.config);
  const auto named = params.named_parameters();
  w.u64(named.size());
  for (const auto& [name, t] : named) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) w.u64(d);
    for (double v : t->values()) w.f64(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed for " + path.string());
}

GatParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open checkpoint " + path.string());
  Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));

  char magic[sizeof kMagic] = {};
  try {
    r.bytes(magic, sizeof magic);
  } catch (const CheckpointError&) {
    throw CheckpointError(CheckpointError::Kind::kBadMagic, path.string() + " is not a checkpoint");
  }
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(CheckpointError::Kind::kBadMagic, path.string() + " is not a checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::kVersion,
                          "checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  const ModelConfig config = read_config(r);
  try {
    config.validate();
  } catch (const ConfigError& e) {
    inconsistent(std::string("hyperparameters invalid: ") + e.what());
  }

  // The expected layout comes from the stored hyperparameters; every record must match it.
  GatParams params = GatParams::init(config, 0);
  auto named = params.named_parameters();
  const std::uint64_t count = r.u64();
  if (count != named.size()) {
    inconsistent(std::to_string(count) + " tensors stored, hyperparameters imply " +
                 std::to_string(named.size()));
  }
  for (auto& [name, t] : named) {
    const std::string stored = r.str();
    if (stored != name) inconsistent("expected tensor " + name + ", found " + stored);
    const std::uint32_t rank = r.u32();
    if (rank > 3) inconsistent("tensor " + name + " has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != t->shape()) {
      inconsistent("tensor " + name + " has shape " + to_string(shape) + ", hyperparameters imply " +
                   to_string(t->shape()));
    }
    auto values = t->mutable_values();
    for (auto& v : values) v = r.f64();
  }
  if (!r.done()) inconsistent(std::to_string(r.remaining()) + " trailing bytes");
  return params;
}

}  // namespace gat
