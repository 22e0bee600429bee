#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "poda/corpus.hpp"
#include "poda/ops.hpp"
#include "poda/rng.hpp"
#include "poda/tensor.hpp"

namespace poda {

enum class Mode { train, eval };

struct ModelConfig {
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 256;
  int64_t vocab_size = 0;  // including specials; filled from the vocabulary
  double dropout = 0.2;
  bool tie_embeddings = true;
  int max_positions = 256;

  void validate() const {
    if (n_layers_enc < 1 || n_layers_dec < 1 || d_model < 1 || n_heads < 1 || d_ffn < 1 ||
        max_positions < 1)
      throw ConfigError("ModelConfig: all counts must be >= 1");
    if (d_model % n_heads != 0) throw ConfigError("ModelConfig: d_model must be divisible by n_heads");
    if (vocab_size < kNumSpecials) throw ConfigError("ModelConfig: vocab_size must include the specials");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ModelConfig: dropout must be in [0, 1)");
  }

  bool operator==(const ModelConfig& o) const = default;

  /// Full-scale architecture: 6+6 blocks, width 512, 8 heads, ffn 4096.
  static ModelConfig paper_preset() {
    ModelConfig c;
    c.n_layers_enc = 6;
    c.n_layers_dec = 6;
    c.d_model = 512;
    c.n_heads = 8;
    c.d_ffn = 4096;
    c.dropout = 0.2;
    c.tie_embeddings = true;
    c.max_positions = 1024;
    return c;
  }

  /// Toy architecture for CPU-sized experiments.
  static ModelConfig desk_preset() {
    ModelConfig c;  // defaults above are the desk values
    return c;
  }
};

/// Named map of all model weights, iterated in a fixed order. When
/// tie_embeddings is set, one "embed" tensor serves as encoder input table,
/// decoder input table, and (transposed) output projection.
template <typename T>
class ParameterSet {
 public:
  void add(const std::string& name, Tensor<T> t) {
    if (find(name)) throw ConfigError("ParameterSet: duplicate name " + name);
    entries_.emplace_back(name, std::move(t));
  }

  Tensor<T>* find(const std::string& name) {
    for (auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }
  Tensor<T>& at(const std::string& name) {
    if (auto* t = find(name)) return *t;
    throw ConfigError("ParameterSet: missing parameter " + name);
  }
  const Tensor<T>& at(const std::string& name) const {
    if (auto* t = find(name)) return *t;
    throw ConfigError("ParameterSet: missing parameter " + name);
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  size_t size() const { return entries_.size(); }

  void attach(Tape<T>& tape) {
    for (auto& [n, t] : entries_) t.watch(tape);
  }
  void detach() {
    for (auto& [n, t] : entries_) t.unwatch();
  }
  void zero_grad() {
    for (auto& [n, t] : entries_) t.zero_grad();
  }

  int64_t numel() const {
    int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, t] : entries_)
      for (T v : t.data())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

/// Sinusoidal positional encoding: dim 2i = sin(pos/10000^(2i/d)),
/// dim 2i+1 = cos(pos/10000^(2i/d)).
template <typename T>
std::vector<T> positional_encoding(int64_t position, int d_model) {
  std::vector<T> pe(static_cast<size_t>(d_model));
  for (int i = 0; i < d_model; i += 2) {
    double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
    double angle = static_cast<double>(position) * freq;
    pe[static_cast<size_t>(i)] = static_cast<T>(std::sin(angle));
    if (i + 1 < d_model) pe[static_cast<size_t>(i + 1)] = static_cast<T>(std::cos(angle));
  }
  return pe;
}

template <typename T>
Tensor<T> positional_encoding_rows(int64_t start, int64_t len, int d_model) {
  Tensor<T> pe = Tensor<T>::zeros({len, d_model});
  for (int64_t p = 0; p < len; ++p) {
    auto row = positional_encoding<T>(start + p, d_model);
    std::copy(row.begin(), row.end(), pe.ptr() + p * d_model);
  }
  return pe;
}

template <typename T>
struct AttentionResult {
  Tensor<T> output;   // [Lq, d_model]
  Tensor<T> weights;  // [n_heads, Lq, Lk]
};

namespace detail {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), b);
}

// [L, d] -> [H, L, d/H]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int n_heads) {
  const int64_t l = x.dim(0), d = x.dim(1);
  return transpose(reshape(x, {l, n_heads, d / n_heads}), {1, 0, 2});
}

// [H, L, d/H] -> [L, d]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const int64_t h = x.dim(0), l = x.dim(1), dh = x.dim(2);
  return reshape(transpose(x, {1, 0, 2}), {l, h * dh});
}

/// Per-head scaled dot-product attention weights: softmax over the key axis
/// of q·k^T / sqrt(d_head), with optional additive masking.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& wq,
                            const Tensor<T>& bq, const Tensor<T>& wk, const Tensor<T>& bk,
                            int n_heads, const BoolMask* mask) {
  const int64_t d = q_in.dim(1);
  const int64_t dh = d / n_heads;
  Tensor<T> q = split_heads(linear(q_in, wq, bq), n_heads);  // [H, Lq, dh]
  Tensor<T> k = split_heads(linear(k_in, wk, bk), n_heads);  // [H, Lk, dh]
  Tensor<T> scores = matmul(q, transpose(k, {0, 2, 1}));     // [H, Lq, Lk]
  scores = scalar_mul(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  if (mask) scores = masked_fill(scores, *mask, -std::numeric_limits<T>::infinity());
  return softmax(scores, -1);
}

}  // namespace detail

/// Multi-head attention over already-projected inputs; masked positions
/// receive -inf before the softmax. Returns both the projected output and the
/// per-head attention weights.
template <typename T>
AttentionResult<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in,
                                        const Tensor<T>& v_in, const Tensor<T>& wq,
                                        const Tensor<T>& bq, const Tensor<T>& wk, const Tensor<T>& bk,
                                        const Tensor<T>& wv, const Tensor<T>& bv, const Tensor<T>& wo,
                                        const Tensor<T>& bo, int n_heads, const BoolMask* mask) {
  if (k_in.dim(0) != v_in.dim(0))
    throw ShapeError("multi_head_attention: key/value lengths differ: " + shape_str(k_in.shape()) +
                     " vs " + shape_str(v_in.shape()));
  Tensor<T> probs = detail::attention_weights(q_in, k_in, wq, bq, wk, bk, n_heads, mask);
  Tensor<T> v = detail::split_heads(detail::linear(v_in, wv, bv), n_heads);  // [H, Lk, dh]
  Tensor<T> ctx = detail::merge_heads(matmul(probs, v));                     // [Lq, d]
  return {detail::linear(ctx, wo, bo), probs};
}

/// The PoDA network: Transformer encoder/decoder with a pointer-generator
/// output layer over the extended vocabulary.
template <typename T>
class TransformerPg {
 public:
  ModelConfig config;
  ParameterSet<T> params;

  static TransformerPg init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    TransformerPg m;
    m.config = cfg;
    const int64_t v = cfg.vocab_size;
    const int64_t d = cfg.d_model;

    auto embed_init = [&](const char* name) {
      Tensor<T> t = Tensor<T>::zeros({v, d});
      const double std = 1.0 / std::sqrt(static_cast<double>(d));
      for (auto& x : t.data()) x = static_cast<T>(rng.normal(0.0, std));
      m.params.add(name, std::move(t));
    };
    if (cfg.tie_embeddings) {
      embed_init("embed");
    } else {
      embed_init("embed_enc");
      embed_init("embed_dec");
      embed_init("embed_out");
    }

    auto xavier_scaled = [&](const std::string& name, int64_t fan_in, int64_t fan_out,
                             double scale) {
      Tensor<T> t = Tensor<T>::zeros({fan_in, fan_out});
      const double a = scale * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (auto& x : t.data()) x = static_cast<T>(rng.uniform(-a, a));
      m.params.add(name, std::move(t));
    };
    auto xavier = [&](const std::string& name, int64_t fan_in, int64_t fan_out) {
      xavier_scaled(name, fan_in, fan_out, 1.0);
    };
    auto zeros = [&](const std::string& name, int64_t n) { m.params.add(name, Tensor<T>::zeros({n})); };
    auto ones = [&](const std::string& name, int64_t n) { m.params.add(name, Tensor<T>::filled({n}, T(1))); };
    auto attn_block = [&](const std::string& prefix) {
      xavier(prefix + ".wq", d, d);
      zeros(prefix + ".bq", d);
      xavier(prefix + ".wk", d, d);
      zeros(prefix + ".bk", d);
      xavier(prefix + ".wv", d, d);
      zeros(prefix + ".bv", d);
      // residual-branch outputs start small so the post-norm stack is close
      // to an identity at init
      xavier_scaled(prefix + ".wo", d, d, 0.25);
      zeros(prefix + ".bo", d);
    };
    auto norm_block = [&](const std::string& prefix) {
      ones(prefix + ".gain", d);
      zeros(prefix + ".bias", d);
    };
    auto ffn_block = [&](const std::string& prefix) {
      xavier(prefix + ".w1", d, cfg.d_ffn);
      zeros(prefix + ".b1", cfg.d_ffn);
      xavier_scaled(prefix + ".w2", cfg.d_ffn, d, 0.25);
      zeros(prefix + ".b2", d);
    };

    for (int i = 0; i < cfg.n_layers_enc; ++i) {
      const std::string p = "enc" + std::to_string(i);
      attn_block(p + ".attn");
      norm_block(p + ".attn_ln");
      ffn_block(p + ".ffn");
      norm_block(p + ".ffn_ln");
    }
    for (int i = 0; i < cfg.n_layers_dec; ++i) {
      const std::string p = "dec" + std::to_string(i);
      attn_block(p + ".attn");
      norm_block(p + ".attn_ln");
      attn_block(p + ".cross");
      norm_block(p + ".cross_ln");
      ffn_block(p + ".ffn");
      norm_block(p + ".ffn_ln");
    }
    // Copy attention needs only the score projections; AttPooling consumes
    // raw encoder states.
    xavier("pgen.copy.wq", d, d);
    zeros("pgen.copy.bq", d);
    xavier("pgen.copy.wk", d, d);
    zeros("pgen.copy.bk", d);
    xavier("pgen.w1", d, 1);
    return m;
  }

  const Tensor<T>& encoder_embedding() const {
    return config.tie_embeddings ? params.at("embed") : params.at("embed_enc");
  }
  const Tensor<T>& decoder_embedding() const {
    return config.tie_embeddings ? params.at("embed") : params.at("embed_dec");
  }
  const Tensor<T>& output_embedding() const {
    return config.tie_embeddings ? params.at("embed") : params.at("embed_out");
  }

  /// Encodes a source sequence into [L_src, d_model].
  Tensor<T> encode(const TokenSequence& source, Mode mode, Rng* dropout_rng = nullptr) const {
    if (source.empty()) throw ShapeError("encode: source sequence is empty");
    if (static_cast<int>(source.size()) > config.max_positions)
      throw ShapeError("encode: sequence length " + std::to_string(source.size()) +
                       " exceeds max_positions " + std::to_string(config.max_positions));
    Tensor<T> x = embed_with_positions(encoder_embedding(), source.ids, mode, dropout_rng);
    for (int i = 0; i < config.n_layers_enc; ++i) {
      const std::string p = "enc" + std::to_string(i);
      x = attn_sublayer(p + ".attn", p + ".attn_ln", x, x, x, nullptr, mode, dropout_rng);
      x = ffn_sublayer(p, x, mode, dropout_rng);
    }
    return x;
  }

  /// Decoder hidden states for a BOS-prefixed id sequence, causally masked;
  /// returns [len(prefix), d_model].
  Tensor<T> decoder_states(const Tensor<T>& h_enc, const std::vector<int32_t>& prefix_ids, Mode mode,
                           Rng* dropout_rng = nullptr) const {
    if (prefix_ids.empty() || prefix_ids.front() != kBos)
      throw ShapeError("decoder_states: prefix must begin with BOS");
    if (static_cast<int>(prefix_ids.size()) > config.max_positions)
      throw ShapeError("decoder_states: prefix exceeds max_positions");
    std::vector<int32_t> in_ids = prefix_ids;
    for (auto& id : in_ids)
      if (id >= config.vocab_size) id = kUnk;  // extended ids embed as UNK
    Tensor<T> x = embed_with_positions(decoder_embedding(), in_ids, mode, dropout_rng);
    const int64_t t = static_cast<int64_t>(in_ids.size());
    BoolMask causal = causal_mask(t);
    for (int i = 0; i < config.n_layers_dec; ++i) {
      const std::string p = "dec" + std::to_string(i);
      x = attn_sublayer(p + ".attn", p + ".attn_ln", x, x, x, &causal, mode, dropout_rng);
      x = attn_sublayer(p + ".cross", p + ".cross_ln", x, h_enc, h_enc, nullptr, mode, dropout_rng);
      x = ffn_sublayer(p, x, mode, dropout_rng);
    }
    return x;
  }

  /// Hidden state of the final prefix position, [1, d_model].
  Tensor<T> decode_step(const Tensor<T>& h_enc, const std::vector<int32_t>& prefix_ids, Mode mode,
                        Rng* dropout_rng = nullptr) const {
    Tensor<T> h = decoder_states(h_enc, prefix_ids, mode, dropout_rng);
    const int64_t t = h.dim(0), d = h.dim(1);
    std::vector<T> row(h.ptr() + (t - 1) * d, h.ptr() + t * d);
    Tensor<T> last = Tensor<T>::from({1, d}, std::move(row));
    if (Tape<T>* tape = detail::op_tape<T>({&h})) {
      auto hi = h.impl(), li = last.impl();
      last.set_recorded(tape, tape->record("last_row", [hi, li, t, d] {
        if (!detail::wants(hi)) return;
        detail::ensure_grad(*li);
        detail::ensure_grad(*hi);
        for (int64_t j = 0; j < d; ++j) hi->grad[(t - 1) * d + j] += li->grad[j];
      }));
    }
    return last;
  }

  /// Pointer-generator distribution over V + n_oov for each decoder row.
  /// copy attention alpha = head-averaged attention of h_dec over h_enc;
  /// p_gen = sigmoid(W1 . AttPooling(h_enc, alpha));
  /// p(w) = p_gen * p_v(w) + (1 - p_gen) * sum_{i: src_i = w} alpha_i.
  /// `forced_p_gen` pins the gate for endpoint checks.
  Tensor<T> pointer_generator(const Tensor<T>& h_dec, const Tensor<T>& h_enc,
                              const std::vector<int32_t>& source_ext_ids, int64_t n_oov,
                              std::optional<double> forced_p_gen = std::nullopt) const {
    if (h_enc.dim(0) != static_cast<int64_t>(source_ext_ids.size()))
      throw ShapeError("pointer_generator: encoder states and source ids disagree");
    const int64_t t = h_dec.dim(0);
    const int64_t l = h_enc.dim(0);
    const int64_t v = config.vocab_size;

    Tensor<T> heads = detail::attention_weights(h_dec, h_enc, params.at("pgen.copy.wq"),
                                                params.at("pgen.copy.bq"), params.at("pgen.copy.wk"),
                                                params.at("pgen.copy.bk"), config.n_heads, nullptr);
    Tensor<T> alpha = reduce_mean(heads, 0);  // [T, L]

    Tensor<T> p_gen;  // [T, 1]
    if (forced_p_gen) {
      p_gen = Tensor<T>::filled({t, 1}, static_cast<T>(*forced_p_gen));
    } else {
      Tensor<T> pooled = matmul(alpha, h_enc);  // AttPooling: [T, d]
      p_gen = sigmoid(matmul(pooled, params.at("pgen.w1")));
    }

    // Fixed-vocabulary softmax, scaled by p_gen and padded with zeros over
    // the OOV slots (p_v(w) = 0 for extended-vocabulary words).
    Tensor<T> logits = matmul(h_dec, transpose(output_embedding()));  // [T, V]
    Tensor<T> p_v = softmax(logits, -1);
    Tensor<T> pv_scaled = mul(p_v, broadcast_cols(p_gen, v));  // [T, V]
    std::vector<Tensor<T>> padded = {pv_scaled, Tensor<T>::zeros({t, n_oov})};
    Tensor<T> gen_part = n_oov > 0 ? concat(padded, 1) : pv_scaled;

    Tensor<T> inv_gate = scalar_add(scalar_mul(p_gen, T(-1)), T(1));  // 1 - p_gen
    Tensor<T> copy_scaled = mul(alpha, broadcast_cols(inv_gate, l));  // [T, L]
    return index_add(gen_part, source_ext_ids, copy_scaled);
  }

  /// Teacher-forced log-probabilities: row t is log p(. | x', x_<t) with the
  /// decoder input BOS + target ids and labels target ext_ids + EOS.
  /// Returns [len(target)+1, V + n_oov].
  Tensor<T> forward_logprobs(const TokenSequence& source, const TokenSequence& target, Mode mode,
                             Rng* dropout_rng = nullptr) const {
    Tensor<T> h_enc = encode(source, mode, dropout_rng);
    std::vector<int32_t> prefix = decoder_input(target);
    Tensor<T> h_dec = decoder_states(h_enc, prefix, mode, dropout_rng);
    Tensor<T> p = pointer_generator(h_dec, h_enc, source.ext_ids,
                                    static_cast<int64_t>(source.oov_words.size()));
    // log of the mixed probability; the tiny epsilon keeps zero-copy OOV
    // slots finite without disturbing the distribution at float precision.
    return log(scalar_add(p, static_cast<T>(1e-12)));
  }

  /// Next-token distribution for a prefix during incremental decoding.
  Tensor<T> step_probs(const Tensor<T>& h_enc, const std::vector<int32_t>& prefix_ext_ids,
                       const std::vector<int32_t>& source_ext_ids, int64_t n_oov) const {
    Tensor<T> h_t = decode_step(h_enc, prefix_ext_ids, Mode::eval);
    return pointer_generator(h_t, h_enc, source_ext_ids, n_oov);
  }

  static std::vector<int32_t> decoder_input(const TokenSequence& target) {
    std::vector<int32_t> prefix;
    prefix.reserve(target.size() + 1);
    prefix.push_back(kBos);
    prefix.insert(prefix.end(), target.ids.begin(), target.ids.end());
    return prefix;
  }

  static std::vector<int32_t> labels(const TokenSequence& target) {
    std::vector<int32_t> out = target.ext_ids;
    out.push_back(kEos);
    return out;
  }

 private:
  static BoolMask causal_mask(int64_t t) {
    BoolMask m;
    m.shape = {t, t};
    m.flags.assign(static_cast<size_t>(t * t), 0);
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = i + 1; j < t; ++j) m.flags[static_cast<size_t>(i * t + j)] = 1;
    return m;
  }

  // [T, 1] -> [T, n] via an all-ones row, so the gate multiplies every column.
  Tensor<T> broadcast_cols(const Tensor<T>& col, int64_t n) const {
    return matmul(col, Tensor<T>::filled({1, n}, T(1)));
  }

  // Embeddings are scaled by sqrt(d_model) so the token signal matches the
  // O(1) positional encodings; with the N(0, 1/sqrt(d)) table init this puts
  // both summands on the same footing.
  Tensor<T> embed_with_positions(const Tensor<T>& table, const std::vector<int32_t>& ids, Mode mode,
                                 Rng* dropout_rng) const {
    Tensor<T> x = scalar_mul(embedding_gather(table, ids),
                             static_cast<T>(std::sqrt(static_cast<double>(config.d_model))));
    Tensor<T> pe = positional_encoding_rows<T>(0, static_cast<int64_t>(ids.size()), config.d_model);
    x = add(x, pe);
    return maybe_dropout(x, mode, dropout_rng);
  }

  Tensor<T> maybe_dropout(const Tensor<T>& x, Mode mode, Rng* dropout_rng) const {
    if (mode != Mode::train || config.dropout == 0.0) return x;
    if (!dropout_rng) throw ConfigError("training-mode forward requires a dropout rng");
    return dropout(x, config.dropout, *dropout_rng, true);
  }

  // Post-norm residual block: LayerNorm(x + Dropout(Attention(x))).
  Tensor<T> attn_sublayer(const std::string& attn, const std::string& ln, const Tensor<T>& q,
                          const Tensor<T>& k, const Tensor<T>& v, const BoolMask* mask, Mode mode,
                          Rng* dropout_rng) const {
    AttentionResult<T> r =
        multi_head_attention(q, k, v, params.at(attn + ".wq"), params.at(attn + ".bq"),
                             params.at(attn + ".wk"), params.at(attn + ".bk"), params.at(attn + ".wv"),
                             params.at(attn + ".bv"), params.at(attn + ".wo"), params.at(attn + ".bo"),
                             config.n_heads, mask);
    Tensor<T> y = add(q, maybe_dropout(r.output, mode, dropout_rng));
    return layer_norm(y, params.at(ln + ".gain"), params.at(ln + ".bias"));
  }

  Tensor<T> ffn_sublayer(const std::string& layer, const Tensor<T>& x, Mode mode,
                         Rng* dropout_rng) const {
    Tensor<T> h = relu(detail::linear(x, params.at(layer + ".ffn.w1"), params.at(layer + ".ffn.b1")));
    Tensor<T> y = detail::linear(h, params.at(layer + ".ffn.w2"), params.at(layer + ".ffn.b2"));
    Tensor<T> r = add(x, maybe_dropout(y, mode, dropout_rng));
    return layer_norm(r, params.at(layer + ".ffn_ln.gain"), params.at(layer + ".ffn_ln.bias"));
  }
};

}  // namespace poda
