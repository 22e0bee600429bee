#include "poda/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "poda/error.hpp"

namespace poda {

namespace {

constexpr char kMagic[4] = {'P', 'O', 'D', 'A'};

// Little-endian primitive writers over an in-memory buffer.
class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf_.append(s);
  }
  void tensors(const std::vector<std::pair<std::string, Tensor<Real>>>& ts) {
    u32(static_cast<uint32_t>(ts.size()));
    for (const auto& [name, t] : ts) {
      str(name);
      u32(static_cast<uint32_t>(t.shape().size()));
      for (int64_t d : t.shape()) i64(d);
      for (Real v : t.data()) f32(v);
    }
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string section) : data_(data), section_(std::move(section)) {}

  uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
  uint32_t u32() {
    const char* p = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const char* p = take(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    const char* p = take(n);
    return std::string(p, n);
  }
  std::vector<std::pair<std::string, Tensor<Real>>> tensors() {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    uint32_t count = u32();
    out.reserve(count);
    for (uint32_t k = 0; k < count; ++k) {
      std::string name = str();
      uint32_t ndim = u32();
      std::vector<int64_t> shape(ndim);
      for (auto& d : shape) d = i64();
      std::vector<Real> data(static_cast<size_t>(shape_numel(shape)));
      for (auto& v : data) v = f32();
      out.emplace_back(std::move(name), Tensor<Real>::from(std::move(shape), std::move(data)));
    }
    return out;
  }
  bool exhausted() const { return pos_ == data_.size(); }

 private:
  const char* take(size_t n) {
    if (pos_ + n > data_.size())
      throw CheckpointError("checkpoint section '" + section_ + "' is truncated");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::string& data_;
  std::string section_;
  size_t pos_ = 0;
};

void write_section(std::string& out, const std::string& name, const Writer& w) {
  Writer header;
  header.str(name);
  header.u64(w.bytes().size());
  out += header.bytes();
  out += w.bytes();
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out(kMagic, 4);
  {
    Writer w;
    w.u32(Checkpoint::kVersion);
    out += w.bytes();
  }
  {
    Writer w;
    w.u64(ckpt.iteration);
    w.u64(ckpt.epoch);
    w.u64(ckpt.batch_in_epoch);
    w.u64(ckpt.root_seed);
    w.f64(ckpt.epoch_train_loss_sum);
    w.u64(ckpt.epoch_train_batches);
    write_section(out, "meta", w);
  }
  {
    Writer w;
    const ModelConfig& c = ckpt.model_config;
    w.u32(static_cast<uint32_t>(c.n_layers_enc));
    w.u32(static_cast<uint32_t>(c.n_layers_dec));
    w.u32(static_cast<uint32_t>(c.d_model));
    w.u32(static_cast<uint32_t>(c.n_heads));
    w.u32(static_cast<uint32_t>(c.d_ffn));
    w.i64(c.vocab_size);
    w.f64(c.dropout);
    w.u8(c.tie_embeddings ? 1 : 0);
    w.u32(static_cast<uint32_t>(c.max_positions));
    write_section(out, "model_config", w);
  }
  {
    Writer w;
    w.u64(ckpt.vocab_hash);
    write_section(out, "vocab_hash", w);
  }
  {
    Writer w;
    w.tensors(ckpt.params);
    write_section(out, "params", w);
  }
  {
    Writer w;
    w.f64(ckpt.ema_decay);
    w.tensors(ckpt.ema);
    write_section(out, "ema", w);
  }
  {
    Writer w;
    w.f64(ckpt.learning_rate);
    w.f64(ckpt.momentum);
    w.tensors(ckpt.velocity);
    write_section(out, "optimizer", w);
  }
  {
    Writer w;
    w.f64(ckpt.schedule.best_val_loss);
    w.f64(ckpt.schedule.lr_floor);
    w.u32(static_cast<uint32_t>(ckpt.schedule.patience));
    w.u32(static_cast<uint32_t>(ckpt.schedule.bad_epochs));
    w.u32(static_cast<uint32_t>(ckpt.schedule.halvings));
    write_section(out, "schedule", w);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed while writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string data = ss.str();

  if (data.size() < 8 || std::memcmp(data.data(), kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint file (bad magic): " + path);
  {
    Reader r(data, "header");
    // skip magic
    r.u32();
    uint32_t version = r.u32();
    if (version != Checkpoint::kVersion)
      throw CheckpointError("checkpoint format version " + std::to_string(version) +
                            " is not supported (expected " + std::to_string(Checkpoint::kVersion) + ")");
  }

  Checkpoint ckpt;
  size_t pos = 8;
  bool saw_params = false;
  while (pos < data.size()) {
    std::string rest = data.substr(pos);
    Reader head(rest, "section header");
    std::string name = head.str();
    uint64_t len = head.u64();
    size_t header_len = 4 + name.size() + 8;
    if (pos + header_len + len > data.size())
      throw CheckpointError("checkpoint section '" + name + "' is truncated");
    std::string payload = data.substr(pos + header_len, len);
    Reader r(payload, name);
    if (name == "meta") {
      ckpt.iteration = r.u64();
      ckpt.epoch = r.u64();
      ckpt.batch_in_epoch = r.u64();
      ckpt.root_seed = r.u64();
      ckpt.epoch_train_loss_sum = r.f64();
      ckpt.epoch_train_batches = r.u64();
    } else if (name == "model_config") {
      ModelConfig& c = ckpt.model_config;
      c.n_layers_enc = static_cast<int>(r.u32());
      c.n_layers_dec = static_cast<int>(r.u32());
      c.d_model = static_cast<int>(r.u32());
      c.n_heads = static_cast<int>(r.u32());
      c.d_ffn = static_cast<int>(r.u32());
      c.vocab_size = r.i64();
      c.dropout = r.f64();
      c.tie_embeddings = r.u8() != 0;
      c.max_positions = static_cast<int>(r.u32());
    } else if (name == "vocab_hash") {
      ckpt.vocab_hash = r.u64();
    } else if (name == "params") {
      ckpt.params = r.tensors();
      saw_params = true;
    } else if (name == "ema") {
      ckpt.ema_decay = r.f64();
      ckpt.ema = r.tensors();
    } else if (name == "optimizer") {
      ckpt.learning_rate = r.f64();
      ckpt.momentum = r.f64();
      ckpt.velocity = r.tensors();
    } else if (name == "schedule") {
      ckpt.schedule.best_val_loss = r.f64();
      ckpt.schedule.lr_floor = r.f64();
      ckpt.schedule.patience = static_cast<int>(r.u32());
      ckpt.schedule.bad_epochs = static_cast<int>(r.u32());
      ckpt.schedule.halvings = static_cast<int>(r.u32());
    } else {
      throw CheckpointError("unknown checkpoint section '" + name + "'");
    }
    if (!r.exhausted()) throw CheckpointError("checkpoint section '" + name + "' has trailing bytes");
    pos += header_len + len;
  }
  if (!saw_params) throw CheckpointError("checkpoint is missing the 'params' section");
  return ckpt;
}

Checkpoint snapshot(const TransformerPg<Real>& model, const OptimizerState<Real>& opt,
                    const EmaState<Real>& ema, const LrSchedule& schedule, uint64_t vocab_hash) {
  Checkpoint c;
  c.model_config = model.config;
  c.vocab_hash = vocab_hash;
  size_t idx = 0;
  for (const auto& [name, t] : model.params) {
    c.params.emplace_back(name, t.clone_detached());
    c.ema.emplace_back(name, ema.shadow[idx].clone_detached());
    c.velocity.emplace_back(name, opt.velocity[idx].clone_detached());
    ++idx;
  }
  c.ema_decay = ema.decay;
  c.learning_rate = opt.learning_rate;
  c.momentum = opt.momentum;
  c.schedule = schedule;
  return c;
}

TransformerPg<Real> restore_model(const Checkpoint& ckpt, bool use_ema_weights) {
  Rng scratch(0);
  TransformerPg<Real> model = TransformerPg<Real>::init(ckpt.model_config, scratch);
  const auto& source = use_ema_weights ? ckpt.ema : ckpt.params;
  if (source.size() != model.params.size())
    throw CheckpointError("checkpoint parameter count does not match the model configuration");
  size_t idx = 0;
  for (auto& [name, t] : model.params) {
    const auto& [sname, st] = source[idx++];
    if (sname != name || st.shape() != t.shape())
      throw CheckpointError("checkpoint parameter '" + sname + "' does not match model parameter '" +
                            name + "'");
    t.data() = st.data();
  }
  return model;
}

}  // namespace poda
