#pragma once

// Frozen transformer stack. A layer projects its input to Q/K/V, optionally
// prepends prefix key/value rows, and mixes values with softmax attention
// scaled by 1/sqrt(head width). Theory-suite layers are attention-only
// (no W_O, residual or FFN); harness layers add those.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefixlab/autodiff.hpp"
#include "prefixlab/linalg.hpp"
#include "prefixlab/random.hpp"

namespace prefixlab {

struct ModelConfig {
  std::size_t vocab = 0;  // 0: continuous inputs only (no embedding/unembedding)
  std::size_t d = 8;
  std::size_t layers = 1;
  std::size_t heads = 1;
  std::size_t d_ff = 0;  // 0: no feed-forward block
  bool residual = false;
  bool output_proj = false;  // W_O
  bool positional = false;   // sinusoidal encodings on real tokens only
  double weight_std = 0.0;   // 0 means 1/sqrt(d)

  std::size_t head_dim() const { return d / heads; }

  double init_std() const {
    return weight_std > 0.0 ? weight_std : 1.0 / std::sqrt(static_cast<double>(d));
  }

  void validate() const {
    if (d == 0 || layers == 0 || heads == 0) throw std::invalid_argument("ModelConfig: d, layers, heads must be positive");
    if (d % heads != 0) throw std::invalid_argument("ModelConfig: d must be divisible by heads");
  }

  /// Single-head attention-only layers, as used by the expressivity analysis.
  static ModelConfig attention_only(std::size_t d, std::size_t layers = 1) {
    ModelConfig c;
    c.d = d;
    c.layers = layers;
    return c;
  }

  static ModelConfig transformer(std::size_t vocab, std::size_t d, std::size_t layers, std::size_t heads,
                                 std::size_t d_ff, bool positional) {
    ModelConfig c;
    c.vocab = vocab;
    c.d = d;
    c.layers = layers;
    c.heads = heads;
    c.d_ff = d_ff;
    c.residual = true;
    c.output_proj = true;
    c.positional = positional;
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Matrix wq, wk, wv;
  Matrix wo;      // empty unless output_proj
  Matrix w1, w2;  // empty unless d_ff > 0

  bool operator==(const LayerParams&) const = default;
};

/// Frozen base model. Adapters never receive a mutable reference to it.
struct Model {
  ModelConfig config;
  Matrix embedding;    // vocab x d
  Matrix unembedding;  // d x vocab
  std::vector<LayerParams> layers;

  static Model random(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Model m;
    m.config = cfg;
    const double s = cfg.init_std();
    const std::size_t d = cfg.d;
    if (cfg.vocab > 0) {
      m.embedding = rng.normal_matrix(cfg.vocab, d, 1.0);
      m.unembedding = rng.normal_matrix(d, cfg.vocab, s);
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      LayerParams p;
      p.wq = rng.normal_matrix(d, d, s);
      p.wk = rng.normal_matrix(d, d, s);
      p.wv = rng.normal_matrix(d, d, s);
      if (cfg.output_proj) p.wo = rng.normal_matrix(d, d, s);
      if (cfg.d_ff > 0) {
        p.w1 = rng.normal_matrix(d, cfg.d_ff, s);
        p.w2 = rng.normal_matrix(cfg.d_ff, d, 1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
      }
      m.layers.push_back(std::move(p));
    }
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = embedding.size() + unembedding.size();
    for (const auto& l : layers) n += l.wq.size() + l.wk.size() + l.wv.size() + l.wo.size() + l.w1.size() + l.w2.size();
    return n;
  }

  bool operator==(const Model&) const = default;
};

/// FNV-1a over the bit patterns of every weight; used to prove the backbone stayed frozen.
inline std::uint64_t checksum(const Model& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Matrix& x) {
    for (double v : x.data()) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
    h ^= x.rows() * 31 + x.cols();
    h *= 1099511628211ULL;
  };
  mix(m.embedding);
  mix(m.unembedding);
  for (const auto& l : m.layers) {
    mix(l.wq);
    mix(l.wk);
    mix(l.wv);
    mix(l.wo);
    mix(l.w1);
    mix(l.w2);
  }
  return h;
}

/// Per-layer stored keys/values.
struct KVCache {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;

  std::size_t length() const { return keys.empty() ? 0 : keys.front().rows(); }
};

/// m key/value rows per layer injected ahead of the token keys/values. Prefix
/// slots carry no position; `position_offset` shifts the positions of the real
/// tokens that follow (nonzero only when the block was cut from a demo cache).
struct PrefixBlock {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
  std::size_t position_offset = 0;

  std::size_t length() const { return keys.empty() ? 0 : keys.front().rows(); }
  std::size_t layers() const { return keys.size(); }

  static PrefixBlock zeros(std::size_t layers, std::size_t m, std::size_t d) {
    PrefixBlock p;
    p.keys.assign(layers, Matrix(m, d));
    p.values.assign(layers, Matrix(m, d));
    return p;
  }

  static PrefixBlock from_cache(const KVCache& c, std::size_t position_offset = 0) {
    return PrefixBlock{c.keys, c.values, position_offset};
  }

  void validate(const ModelConfig& cfg) const {
    if (keys.size() != cfg.layers || values.size() != cfg.layers) {
      throw ShapeError("PrefixBlock: " + std::to_string(keys.size()) + " layers for a " +
                       std::to_string(cfg.layers) + "-layer model");
    }
    const std::size_t m = length();
    for (std::size_t l = 0; l < keys.size(); ++l) {
      if (keys[l].rows() != m || values[l].rows() != m) throw ShapeError("PrefixBlock: prefix length differs across layers");
      if ((m > 0) && (keys[l].cols() != cfg.d || values[l].cols() != cfg.d)) {
        throw ShapeError("PrefixBlock: width " + std::to_string(keys[l].cols()) + " for model width " +
                         std::to_string(cfg.d));
      }
    }
  }

  bool operator==(const PrefixBlock&) const = default;
};

// ---------------------------------------------------------------------------
// Tape-level forward

struct LayerVars {
  Var wq, wk, wv;
  std::optional<Var> wo, w1, w2;
};

struct BoundModel {
  const Model* model = nullptr;
  std::vector<LayerVars> layers;
  std::optional<Var> embedding;
  std::optional<Var> unembedding;

  const ModelConfig& config() const { return model->config; }
};

/// Binds every base weight as a constant (aliasing the model's storage).
inline BoundModel bind_frozen(Tape& t, const Model& m) {
  BoundModel b;
  b.model = &m;
  if (!m.embedding.empty()) b.embedding = t.constant_ref(m.embedding);
  if (!m.unembedding.empty()) b.unembedding = t.constant_ref(m.unembedding);
  for (const auto& l : m.layers) {
    LayerVars v{t.constant_ref(l.wq), t.constant_ref(l.wk), t.constant_ref(l.wv), {}, {}, {}};
    if (!l.wo.empty()) v.wo = t.constant_ref(l.wo);
    if (!l.w1.empty()) {
      v.w1 = t.constant_ref(l.w1);
      v.w2 = t.constant_ref(l.w2);
    }
    b.layers.push_back(v);
  }
  return b;
}

struct PrefixVars {
  std::vector<Var> keys;
  std::vector<Var> values;
};

inline PrefixVars bind_prefix(Tape& t, const PrefixBlock& p) {
  PrefixVars v;
  for (std::size_t l = 0; l < p.layers(); ++l) {
    v.keys.push_back(t.constant_ref(p.keys[l]));
    v.values.push_back(t.constant_ref(p.values[l]));
  }
  return v;
}

enum class Masking { causal, none };

struct ForwardOptions {
  Masking masking = Masking::causal;
  /// Segment id per row; rows only attend within their segment. Rows tagged -1
  /// are shared (e.g. prompt-tuning embeddings) and visible to every segment.
  /// Empty means one segment.
  std::vector<int> segments;
  /// Layers >= 2 compute K/V from a gradient-detached copy of their input.
  bool detach_deep_kv = false;
};

struct LayerTrace {
  Var q, k, v;                  // token-derived (prefix rows excluded)
  std::vector<Var> attention;   // per head, rows x (m + rows)
  Var y;                        // attention output before W_O
  Var output;                   // layer output hidden state
};

struct TapeTrace {
  std::vector<LayerTrace> layers;
  Var hidden;
};

namespace detail {

inline std::vector<std::uint8_t> attention_mask(std::size_t rows, std::size_t m, const ForwardOptions& opts) {
  const std::size_t cols = m + rows;
  std::vector<std::uint8_t> mask(rows * cols, 0);
  const bool seg = !opts.segments.empty();
  if (seg && opts.segments.size() != rows) {
    throw ShapeError("forward: " + std::to_string(opts.segments.size()) + " segment ids for " +
                     std::to_string(rows) + " rows");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t p = 0; p < m; ++p) mask[i * cols + p] = 1;
    for (std::size_t j = 0; j < rows; ++j) {
      if (opts.masking == Masking::causal && j > i) continue;
      if (seg && opts.segments[j] != opts.segments[i] && opts.segments[j] != -1) continue;
      mask[i * cols + m + j] = 1;
    }
  }
  return mask;
}

}  // namespace detail

inline TapeTrace forward(const BoundModel& bm, Var h0, const PrefixVars* prefix, const ForwardOptions& opts = {}) {
  const ModelConfig& cfg = bm.config();
  if (h0.cols() != cfg.d) {
    throw ShapeError("forward: input width " + std::to_string(h0.cols()) + " for model width " +
                     std::to_string(cfg.d));
  }
  std::size_t m = 0;
  if (prefix != nullptr && !prefix->keys.empty()) {
    if (prefix->keys.size() != cfg.layers) throw ShapeError("forward: prefix layer count mismatch");
    m = prefix->keys.front().rows();
    if (m > 0 && prefix->keys.front().cols() != cfg.d) throw ShapeError("forward: prefix width mismatch");
  }
  const std::size_t n = h0.rows();
  const auto mask = detail::attention_mask(n, m, opts);
  const std::size_t heads = cfg.heads;
  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  TapeTrace trace;
  Var h = h0;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerVars& w = bm.layers[l];
    LayerTrace lt;
    const Var kv_in = (opts.detach_deep_kv && l > 0) ? detach(h) : h;
    lt.q = matmul(h, w.wq);
    lt.k = matmul(kv_in, w.wk);
    lt.v = matmul(kv_in, w.wv);
    Var keys = lt.k;
    Var values = lt.v;
    if (m > 0) {
      keys = concat_rows(prefix->keys[l], lt.k);
      values = concat_rows(prefix->values[l], lt.v);
    }
    Var y;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const Var qh = heads == 1 ? lt.q : slice_cols(lt.q, hd * dh, dh);
      const Var kh = heads == 1 ? keys : slice_cols(keys, hd * dh, dh);
      const Var vh = heads == 1 ? values : slice_cols(values, hd * dh, dh);
      const Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
      const Var attn = row_softmax(scores, mask);
      lt.attention.push_back(attn);
      const Var yh = matmul(attn, vh);
      y = hd == 0 ? yh : concat_cols(y, yh);
    }
    lt.y = y;
    Var out = w.wo ? matmul(y, *w.wo) : y;
    h = cfg.residual ? add(h, out) : out;
    if (w.w1) {
      const Var f = matmul(tanh(matmul(h, *w.w1)), *w.w2);
      h = cfg.residual ? add(h, f) : f;
    }
    lt.output = h;
    trace.layers.push_back(lt);
  }
  trace.hidden = h;
  return trace;
}

/// Sinusoidal encoding of absolute position `pos` in width d.
inline void add_positional(std::span<double> row, std::size_t pos) {
  const std::size_t d = row.size();
  for (std::size_t i = 0; i < d; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
    const double angle = static_cast<double>(pos) * freq;
    row[i] += (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
}

/// Positions restart at `offset` in every segment; shared (-1) rows get none.
inline std::vector<std::size_t> positions_for(std::size_t rows, const std::vector<int>& segments,
                                              std::size_t offset) {
  std::vector<std::size_t> pos(rows);
  if (segments.empty()) {
    for (std::size_t i = 0; i < rows; ++i) pos[i] = offset + i;
    return pos;
  }
  int current = -2;
  std::size_t k = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (segments[i] != current) {
      current = segments[i];
      k = 0;
    }
    pos[i] = offset + k++;
  }
  return pos;
}

/// Token embeddings plus (when enabled) positional encodings as a constant.
inline Var embed(const BoundModel& bm, const std::vector<int>& ids, const std::vector<std::size_t>& positions) {
  if (!bm.embedding) throw std::invalid_argument("embed: model has no vocabulary");
  Var e = embed_lookup(*bm.embedding, ids);
  if (!bm.config().positional) return e;
  Matrix pe(ids.size(), bm.config().d);
  for (std::size_t i = 0; i < ids.size(); ++i) add_positional(pe.row(i), positions.at(i));
  return add(e, e.tape->constant(std::move(pe)));
}

inline Var logits(const BoundModel& bm, Var hidden) {
  if (!bm.unembedding) throw std::invalid_argument("logits: model has no vocabulary");
  return matmul(hidden, *bm.unembedding);
}

// ---------------------------------------------------------------------------
// Eager helpers (values only)

struct LayerState {
  Matrix q, k, v;
  std::vector<Matrix> attention;
  Matrix y;
  Matrix output;
};

struct ForwardResult {
  std::vector<LayerState> layers;
  Matrix hidden;
  Matrix logits;  // empty when the model has no vocabulary
};

namespace detail {

inline ForwardResult collect(const BoundModel& bm, const TapeTrace& tr) {
  ForwardResult r;
  for (const auto& lt : tr.layers) {
    LayerState s{lt.q.value(), lt.k.value(), lt.v.value(), {}, lt.y.value(), lt.output.value()};
    for (Var a : lt.attention) s.attention.push_back(a.value());
    r.layers.push_back(std::move(s));
  }
  r.hidden = tr.hidden.value();
  if (bm.unembedding) r.logits = logits(bm, tr.hidden).value();
  return r;
}

}  // namespace detail

/// Forward over continuous inputs H0 (n x d).
inline ForwardResult run_forward(const Model& model, const Matrix& h0, const PrefixBlock* prefix = nullptr,
                                 const ForwardOptions& opts = {}) {
  if (prefix != nullptr && prefix->layers() > 0) prefix->validate(model.config);
  Tape t(false);
  const BoundModel bm = bind_frozen(t, model);
  std::optional<PrefixVars> pv;
  if (prefix != nullptr && prefix->layers() > 0) pv = bind_prefix(t, *prefix);
  const TapeTrace tr = forward(bm, t.constant_ref(h0), pv ? &*pv : nullptr, opts);
  return detail::collect(bm, tr);
}

/// Embeds `ids` (positions start at offset, plus the prefix's own offset).
inline Matrix embed_tokens(const Model& model, std::span<const int> ids, std::size_t offset = 0) {
  Tape t(false);
  const BoundModel bm = bind_frozen(t, model);
  const std::vector<int> v(ids.begin(), ids.end());
  return embed(bm, v, positions_for(v.size(), {}, offset)).value();
}

inline ForwardResult run_tokens(const Model& model, std::span<const int> ids, const PrefixBlock* prefix = nullptr,
                                std::size_t offset = 0) {
  const std::size_t shift = offset + (prefix != nullptr ? prefix->position_offset : 0);
  return run_forward(model, embed_tokens(model, ids, shift), prefix);
}

}  // namespace prefixlab
