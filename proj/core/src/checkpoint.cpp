#include "omni/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "omni/rng.hpp"

namespace omni {

namespace {

constexpr char kMagic[8] = {'O', 'M', 'N', 'I', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void le(T v) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U u = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  void str(std::string_view s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(const std::vector<float>& v) {
    for (float f : v) le(f);
  }
  std::string take() { return std::move(out_); }
  const std::string& buffer() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointTruncatedError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  template <typename T>
  T le() {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    need(sizeof(T));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return std::bit_cast<T>(u);
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    for (auto& f : v) f = le<float>();
    return v;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

ModelConfig Checkpoint::model_config() const { return read_model_config(config); }

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

std::uint64_t parameter_hash(const std::vector<StoredTensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    h = fnv1a(p.name, h);
    for (auto d : p.shape) h = fnv1a(std::string_view(reinterpret_cast<const char*>(&d), sizeof d), h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p.data.data()), p.data.size() * sizeof(float)), h);
  }
  return h;
}

std::uint64_t parameter_hash(const LayerHetModel& model) { return parameter_hash(snapshot_parameters(model)); }

std::vector<StoredTensor> snapshot_parameters(const LayerHetModel& model) {
  std::vector<StoredTensor> out;
  for (const auto& p : model.named_parameters()) {
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return out;
}

Checkpoint make_checkpoint(const LayerHetModel& model, KeyValues config) {
  Checkpoint c;
  write_model_config(config, model.config());
  c.config = std::move(config);
  c.params = snapshot_parameters(model);
  c.base_hash = parameter_hash(c.params);
  return c;
}

LayerHetModel model_from_checkpoint(const Checkpoint& ckpt) {
  const ModelConfig cfg = ckpt.model_config();
  LayerHetModel model = LayerHetModel::init(cfg, 0);
  const auto expected = model.named_parameters();
  if (expected.size() != ckpt.params.size()) {
    throw CheckpointShapeError("checkpoint holds " + std::to_string(ckpt.params.size()) + " tensors, config implies " +
                               std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& want = expected[i];
    const auto& have = ckpt.params[i];
    if (want.name != have.name) {
      throw CheckpointShapeError("checkpoint tensor " + std::to_string(i) + " is '" + have.name + "', expected '" + want.name + "'");
    }
    if (want.tensor.shape() != have.shape || have.data.size() != want.tensor.numel()) {
      throw CheckpointShapeError("tensor '" + have.name + "' has shape " + shape_str(have.shape) + ", config implies " +
                                 shape_str(want.tensor.shape()));
    }
    Tensor t = want.tensor;
    std::copy(have.data.begin(), have.data.end(), t.mutable_data().begin());
  }
  return model;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le(Checkpoint::kVersion);
  w.le(ckpt.step);
  w.le(ckpt.rng_state);
  w.le(ckpt.base_hash);
  w.str(ckpt.config.to_text());
  w.le(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    w.str(p.name);
    w.le(static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) w.le(static_cast<std::uint64_t>(d));
    w.floats(p.data);
  }
  w.le(static_cast<std::uint32_t>(ckpt.optimizer ? 1 : 0));
  if (ckpt.optimizer) {
    w.le(static_cast<std::uint32_t>(ckpt.optimizer->size()));
    for (const auto& s : *ckpt.optimizer) {
      w.str(s.name);
      w.le(s.t);
      w.le(static_cast<std::uint64_t>(s.m.size()));
      w.floats(s.m);
      w.floats(s.v);
    }
  }
  w.le(fnv1a(w.buffer()));
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  const std::size_t head = std::min(bytes.size(), sizeof kMagic);
  if (std::memcmp(bytes.data(), kMagic, head) != 0) {
    throw CheckpointVersionError("not a checkpoint: bad magic bytes");
  }
  if (head < sizeof kMagic) throw CheckpointTruncatedError("checkpoint truncated inside the magic bytes");
  r.raw(sizeof kMagic);
  const auto version = r.le<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                 std::to_string(Checkpoint::kVersion) + ")");
  }
  if (bytes.size() < 8 + 4 + 8) throw CheckpointTruncatedError("checkpoint truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[body.size() + i])) << (8 * i);
  if (fnv1a(body) != stored) throw CheckpointTruncatedError("checkpoint checksum mismatch (truncated or corrupted file)");

  Reader br(body);
  br.raw(sizeof kMagic);
  br.le<std::uint32_t>();
  Checkpoint c;
  c.step = br.le<std::uint64_t>();
  c.rng_state = br.le<std::uint64_t>();
  c.base_hash = br.le<std::uint64_t>();
  c.config = KeyValues::parse(br.str());
  const auto n = br.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    StoredTensor t;
    t.name = br.str();
    const auto rank = br.le<std::uint32_t>();
    if (rank == 0 || rank > 2) throw CheckpointShapeError("tensor '" + t.name + "' has unsupported rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<std::size_t>(br.le<std::uint64_t>()));
    t.data = br.floats(shape_numel(t.shape));
    c.params.push_back(std::move(t));
  }
  if (br.le<std::uint32_t>() != 0) {
    std::vector<OptimizerSlot> slots;
    const auto m = br.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < m; ++i) {
      OptimizerSlot s;
      s.name = br.str();
      s.t = br.le<std::uint64_t>();
      const auto len = static_cast<std::size_t>(br.le<std::uint64_t>());
      s.m = br.floats(len);
      s.v = br.floats(len);
      slots.push_back(std::move(s));
    }
    c.optimizer = std::move(slots);
  }
  if (br.pos() != body.size()) throw CheckpointTruncatedError("trailing bytes in checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace omni
