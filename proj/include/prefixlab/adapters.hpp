#pragma once

// The four adaptation mechanisms over a frozen Model: learned KV prefixes
// (optionally generated by a reparameterization MLP), input-layer prompt
// embeddings, LoRA on W_Q/W_K(/W_V), and full fine-tuning.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "prefixlab/attention.hpp"
#include "prefixlab/autodiff.hpp"
#include "prefixlab/decoding.hpp"
#include "prefixlab/random.hpp"

namespace prefixlab {

enum class InitMode { random, from_text_demos, from_demo_cache };
enum class LoraTargets { qk, qkv };

inline const char* to_string(InitMode m) {
  switch (m) {
    case InitMode::random: return "random";
    case InitMode::from_text_demos: return "from_text_demos";
    case InitMode::from_demo_cache: return "from_demo_cache";
  }
  return "?";
}

inline InitMode parse_init_mode(const std::string& s) {
  if (s == "random") return InitMode::random;
  if (s == "from_text_demos" || s == "text") return InitMode::from_text_demos;
  if (s == "from_demo_cache" || s == "demo_cache") return InitMode::from_demo_cache;
  throw std::invalid_argument("unknown prefix init mode '" + s + "'");
}

inline const char* to_string(LoraTargets t) { return t == LoraTargets::qk ? "qk" : "qkv"; }

inline LoraTargets parse_lora_targets(const std::string& s) {
  if (s == "qk") return LoraTargets::qk;
  if (s == "qkv") return LoraTargets::qkv;
  throw std::invalid_argument("unknown LoRA target set '" + s + "'");
}

constexpr double kPrefixInitStd = 0.02;

/// f_phi: fixed learnable input z (1 x d) -> tanh(z W1 + b1) W2, reshaped into
/// [P_K^1; P_V^1; ...; P_K^L; P_V^L] (2Lm x d).
struct ReparamMlp {
  Param input;  // 1 x d
  Param w1;     // d x 4d
  Param b1;     // 1 x 4d
  Param w2;     // 4d x 2Lmd

  static ReparamMlp random(std::size_t layers, std::size_t m, std::size_t d, Rng& rng) {
    const std::size_t hidden = 4 * d;
    ReparamMlp f;
    f.input = Param(rng.normal_matrix(1, d, 1.0));
    f.w1 = Param(rng.normal_matrix(d, hidden, 1.0 / std::sqrt(static_cast<double>(d))));
    f.b1 = Param(Matrix(1, hidden));
    // Output entries start near the direct-init scale.
    f.w2 = Param(rng.normal_matrix(hidden, 2 * layers * m * d, kPrefixInitStd / std::sqrt(0.4 * hidden)));
    return f;
  }

  std::vector<Param*> parameters() { return {&input, &w1, &b1, &w2}; }
};

class PrefixAdapter {
 public:
  PrefixAdapter() = default;
  PrefixAdapter(std::size_t layers, std::size_t m, std::size_t d) : layers_(layers), m_(m), d_(d) {
    if (m == 0) throw std::invalid_argument("PrefixAdapter: prefix length m must be >= 1");
    for (std::size_t l = 0; l < layers; ++l) {
      keys_.emplace_back(Matrix(m, d));
      values_.emplace_back(Matrix(m, d));
    }
  }

  std::size_t layers() const { return layers_; }
  std::size_t length() const { return m_; }
  std::size_t width() const { return d_; }
  InitMode init_mode() const { return init_; }
  std::uint64_t seed() const { return seed_; }
  bool reparameterized() const { return reparam_.has_value(); }
  std::size_t position_offset() const { return position_offset_; }

  Param& keys(std::size_t l) { return keys_.at(l); }
  Param& values(std::size_t l) { return values_.at(l); }
  const Param& keys(std::size_t l) const { return keys_.at(l); }
  const Param& values(std::size_t l) const { return values_.at(l); }
  ReparamMlp* reparam() { return reparam_ ? &*reparam_ : nullptr; }
  const ReparamMlp* reparam() const { return reparam_ ? &*reparam_ : nullptr; }

  void set_block(const PrefixBlock& b) {
    for (std::size_t l = 0; l < layers_; ++l) {
      keys_[l].value = b.keys.at(l);
      values_[l].value = b.values.at(l);
    }
    position_offset_ = b.position_offset;
  }
  void set_reparam(ReparamMlp f) { reparam_ = std::move(f); }
  void set_metadata(InitMode mode, std::uint64_t seed, std::size_t position_offset) {
    init_ = mode;
    seed_ = seed;
    position_offset_ = position_offset;
  }
  void set_trainable(bool on) {
    for (Param* p : parameters()) p->trainable = on;
  }

  /// Trainable state: the MLP when reparameterized, the raw block otherwise.
  std::vector<Param*> parameters() {
    if (reparam_) return reparam_->parameters();
    std::vector<Param*> out;
    for (auto& p : keys_) out.push_back(&p);
    for (auto& p : values_) out.push_back(&p);
    return out;
  }

  PrefixVars bind(Tape& t) {
    PrefixVars v;
    if (!reparam_) {
      for (std::size_t l = 0; l < layers_; ++l) {
        v.keys.push_back(t.param(keys_[l]));
        v.values.push_back(t.param(values_[l]));
      }
      return v;
    }
    ReparamMlp& f = *reparam_;
    const Var hidden = tanh(add(matmul(t.param(f.input), t.param(f.w1)), t.param(f.b1)));
    const Var flat = reshape(matmul(hidden, t.param(f.w2)), 2 * layers_ * m_, d_);
    for (std::size_t l = 0; l < layers_; ++l) {
      std::vector<int> krows, vrows;
      for (std::size_t i = 0; i < m_; ++i) {
        krows.push_back(static_cast<int>(2 * l * m_ + i));
        vrows.push_back(static_cast<int>((2 * l + 1) * m_ + i));
      }
      v.keys.push_back(select_rows(flat, std::move(krows)));
      v.values.push_back(select_rows(flat, std::move(vrows)));
    }
    return v;
  }

  /// Current prefix values (runs f_phi once when reparameterized).
  PrefixBlock block() const {
    PrefixBlock b;
    b.position_offset = position_offset_;
    if (!reparam_) {
      for (std::size_t l = 0; l < layers_; ++l) {
        b.keys.push_back(keys_[l].value);
        b.values.push_back(values_[l].value);
      }
      return b;
    }
    PrefixAdapter copy = *this;
    Tape t(false);
    const PrefixVars v = copy.bind(t);
    for (std::size_t l = 0; l < layers_; ++l) {
      b.keys.push_back(v.keys[l].value());
      b.values.push_back(v.values[l].value());
    }
    return b;
  }

  /// Plain prefix with f_phi discarded; forward behavior is unchanged.
  PrefixAdapter materialize() const {
    PrefixAdapter out(layers_, m_, d_);
    out.set_block(block());
    out.init_ = init_;
    out.seed_ = seed_;
    return out;
  }

  /// 2 L m d: only the prefix vectors ship, never the MLP.
  std::size_t deployed_param_count() const { return 2 * layers_ * m_ * d_; }

 private:
  std::size_t layers_ = 0;
  std::size_t m_ = 0;
  std::size_t d_ = 0;
  std::vector<Param> keys_;
  std::vector<Param> values_;
  std::optional<ReparamMlp> reparam_;
  InitMode init_ = InitMode::random;
  std::uint64_t seed_ = 0;
  std::size_t position_offset_ = 0;
};

/// Continuous embeddings E (m x d) prepended at the input layer only.
struct PromptAdapter {
  Param embeddings;

  static PromptAdapter random(std::size_t m, std::size_t d, std::uint64_t seed) {
    if (m == 0) throw std::invalid_argument("PromptAdapter: m must be >= 1");
    Rng rng(seed);
    return PromptAdapter{Param(rng.normal_matrix(m, d, kPrefixInitStd))};
  }

  std::size_t length() const { return embeddings.value.rows(); }
  std::vector<Param*> parameters() { return {&embeddings}; }
  std::size_t deployed_param_count() const { return embeddings.value.size(); }
};

/// Low-rank updates W + scale * A B on W_Q, W_K and optionally W_V.
struct LoRAAdapter {
  struct Factors {
    Param a;  // d x r
    Param b;  // r x d
  };
  struct Layer {
    Factors q, k;
    std::optional<Factors> v;
  };

  LoraTargets targets = LoraTargets::qkv;
  std::size_t rank = 0;
  double scale = 1.0;
  std::vector<Layer> layers;

  /// A ~ N(0, 1/d), B = 0, so the adapted model starts equal to the base.
  static LoRAAdapter init(const Model& model, LoraTargets targets, std::size_t rank, std::uint64_t seed) {
    if (rank == 0) throw std::invalid_argument("LoRAAdapter: rank must be >= 1");
    Rng rng(seed);
    const std::size_t d = model.config.d;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    auto make = [&] { return Factors{Param(rng.normal_matrix(d, rank, s)), Param(Matrix(rank, d))}; };
    LoRAAdapter a;
    a.targets = targets;
    a.rank = rank;
    for (std::size_t l = 0; l < model.config.layers; ++l) {
      Layer layer{make(), make(), std::nullopt};
      if (targets == LoraTargets::qkv) layer.v = make();
      a.layers.push_back(std::move(layer));
    }
    return a;
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    for (auto& l : layers) {
      out.insert(out.end(), {&l.q.a, &l.q.b, &l.k.a, &l.k.b});
      if (l.v) out.insert(out.end(), {&l.v->a, &l.v->b});
    }
    return out;
  }

  std::size_t target_count() const { return targets == LoraTargets::qkv ? 3 : 2; }

  /// Per target r * 2d.
  std::size_t deployed_param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
      n += l.q.a.value.size() + l.q.b.value.size() + l.k.a.value.size() + l.k.b.value.size();
      if (l.v) n += l.v->a.value.size() + l.v->b.value.size();
    }
    return n;
  }

  static Matrix delta(const Factors& f, double scale) { return scale * matmul(f.a.value, f.b.value); }
};

/// Every base matrix becomes trainable; the base model itself stays untouched.
struct FullFTAdapter {
  ModelConfig config;
  Param embedding, unembedding;
  struct Layer {
    Param wq, wk, wv, wo, w1, w2;
  };
  std::vector<Layer> layers;

  static FullFTAdapter from(const Model& m) {
    FullFTAdapter a;
    a.config = m.config;
    a.embedding = Param(m.embedding);
    a.unembedding = Param(m.unembedding);
    for (const auto& l : m.layers) {
      a.layers.push_back(Layer{Param(l.wq), Param(l.wk), Param(l.wv), Param(l.wo), Param(l.w1), Param(l.w2)});
    }
    return a;
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    if (!embedding.value.empty()) out.push_back(&embedding);
    if (!unembedding.value.empty()) out.push_back(&unembedding);
    for (auto& l : layers) {
      for (Param* p : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) {
        if (!p->value.empty()) out.push_back(p);
      }
    }
    return out;
  }

  Model to_model() const {
    Model m;
    m.config = config;
    m.embedding = embedding.value;
    m.unembedding = unembedding.value;
    for (const auto& l : layers) {
      m.layers.push_back(LayerParams{l.wq.value, l.wk.value, l.wv.value, l.wo.value, l.w1.value, l.w2.value});
    }
    return m;
  }

  std::size_t deployed_param_count() const { return to_model().parameter_count(); }
};

using Adapter = std::variant<std::monostate, PrefixAdapter, PromptAdapter, LoRAAdapter, FullFTAdapter>;

inline std::string kind_name(const Adapter& a) {
  struct V {
    std::string operator()(const std::monostate&) const { return "none"; }
    std::string operator()(const PrefixAdapter& p) const { return p.reparameterized() ? "prefix_reparam" : "prefix"; }
    std::string operator()(const PromptAdapter&) const { return "prompt"; }
    std::string operator()(const LoRAAdapter& l) const { return std::string("lora_") + to_string(l.targets); }
    std::string operator()(const FullFTAdapter&) const { return "full"; }
  };
  return std::visit(V{}, a);
}

inline std::vector<Param*> parameters(Adapter& a) {
  return std::visit(
      [](auto& x) -> std::vector<Param*> {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, std::monostate>) {
          return {};
        } else {
          return x.parameters();
        }
      },
      a);
}

inline std::size_t deployed_param_count(const Adapter& a) {
  return std::visit(
      [](const auto& x) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, std::monostate>) {
          return 0;
        } else {
          return x.deployed_param_count();
        }
      },
      a);
}

// ---------------------------------------------------------------------------
// Initialization

struct PrefixInit {
  InitMode mode = InitMode::random;
  std::size_t m = 16;
  std::uint64_t seed = 0;
  bool reparam = false;
};

namespace detail {

/// Keeps the first m rows (tail truncation) or zero-pads at the end.
inline Matrix fit_rows(const Matrix& x, std::size_t m) {
  Matrix out(m, x.cols());
  const std::size_t keep = std::min(m, x.rows());
  std::copy_n(x.data().begin(), keep * x.cols(), out.data().begin());
  return out;
}

inline PrefixAdapter prefix_from_cache(const Model& model, const KVCache& cache, std::size_t m, InitMode mode,
                                       std::uint64_t seed) {
  PrefixAdapter p(model.config.layers, m, model.config.d);
  PrefixBlock b;
  for (std::size_t l = 0; l < model.config.layers; ++l) {
    b.keys.push_back(fit_rows(cache.keys[l], m));
    b.values.push_back(fit_rows(cache.values[l], m));
  }
  b.position_offset = std::min(m, cache.length());
  p.set_block(b);
  p.set_metadata(mode, seed, b.position_offset);
  return p;
}

}  // namespace detail

/// Builds a prefix adapter.
///  - random: entries i.i.d. N(0, 0.02^2) (or a random reparam MLP)
///  - from_demo_cache: the frozen model's K/V on the concatenated `demos`
///  - from_text_demos: same, on training sequences sampled with `seed`
/// Caches longer than m are cut to their first m rows; shorter ones are zero-padded.
inline PrefixAdapter init_prefix(const Model& model, const PrefixInit& init,
                                 std::span<const std::vector<int>> demos = {}) {
  if (init.m == 0) throw std::invalid_argument("init_prefix: m must be >= 1");
  const std::size_t L = model.config.layers;
  const std::size_t d = model.config.d;
  Rng rng(init.seed);
  if (init.reparam && init.mode != InitMode::random) {
    throw std::invalid_argument("init_prefix: reparameterized prefixes use random init");
  }
  switch (init.mode) {
    case InitMode::random: {
      PrefixAdapter p(L, init.m, d);
      if (init.reparam) {
        p.set_reparam(ReparamMlp::random(L, init.m, d, rng));
      } else {
        PrefixBlock b;
        for (std::size_t l = 0; l < L; ++l) {
          b.keys.push_back(rng.normal_matrix(init.m, d, kPrefixInitStd));
          b.values.push_back(rng.normal_matrix(init.m, d, kPrefixInitStd));
        }
        p.set_block(b);
      }
      p.set_metadata(InitMode::random, init.seed, 0);
      return p;
    }
    case InitMode::from_demo_cache: {
      std::vector<int> tokens;
      for (const auto& s : demos) tokens.insert(tokens.end(), s.begin(), s.end());
      if (tokens.empty()) throw std::invalid_argument("init_prefix: from_demo_cache requires demonstrations");
      return detail::prefix_from_cache(model, build_demo_cache(model, tokens), init.m, init.mode, init.seed);
    }
    case InitMode::from_text_demos: {
      if (demos.empty()) throw std::invalid_argument("init_prefix: from_text_demos requires a text pool");
      std::vector<int> tokens;
      for (int guard = 0; tokens.size() < init.m && guard < 10000; ++guard) {
        const auto& s = demos[rng.next() % demos.size()];
        tokens.insert(tokens.end(), s.begin(), s.end());
      }
      return detail::prefix_from_cache(model, build_demo_cache(model, tokens), init.m, init.mode, init.seed);
    }
  }
  throw std::logic_error("init_prefix: unreachable");
}

/// Continuous-input variant used by the theory suite.
inline PrefixAdapter init_prefix_from_cache(const Model& model, const KVCache& cache, std::size_t m) {
  if (m == 0) throw std::invalid_argument("init_prefix: m must be >= 1");
  return detail::prefix_from_cache(model, cache, m, InitMode::from_demo_cache, 0);
}

// ---------------------------------------------------------------------------
// Binding and deployment

/// Adapter state bound onto a tape over a frozen model.
struct AdaptedBinding {
  BoundModel model;
  std::optional<PrefixVars> prefix;
  std::optional<Var> prompt;
  std::size_t position_offset = 0;
};

inline AdaptedBinding bind_adapter(Tape& t, const Model& base, Adapter& adapter) {
  AdaptedBinding b;
  b.model = bind_frozen(t, base);
  std::visit(
      [&](auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, PrefixAdapter>) {
          b.prefix = a.bind(t);
          b.position_offset = a.position_offset();
        } else if constexpr (std::is_same_v<T, PromptAdapter>) {
          b.prompt = t.param(a.embeddings);
        } else if constexpr (std::is_same_v<T, LoRAAdapter>) {
          if (a.layers.size() != base.config.layers) throw ShapeError("LoRA: layer count mismatch");
          auto upd = [&](Var w, LoRAAdapter::Factors& f) {
            Var delta = matmul(t.param(f.a), t.param(f.b));
            if (a.scale != 1.0) delta = scale(delta, a.scale);
            return add(w, delta);
          };
          for (std::size_t l = 0; l < a.layers.size(); ++l) {
            auto& lv = b.model.layers[l];
            lv.wq = upd(lv.wq, a.layers[l].q);
            lv.wk = upd(lv.wk, a.layers[l].k);
            if (a.layers[l].v) lv.wv = upd(lv.wv, *a.layers[l].v);
          }
        } else if constexpr (std::is_same_v<T, FullFTAdapter>) {
          if (!a.embedding.value.empty()) b.model.embedding = t.param(a.embedding);
          if (!a.unembedding.value.empty()) b.model.unembedding = t.param(a.unembedding);
          for (std::size_t l = 0; l < a.layers.size(); ++l) {
            auto& src = a.layers[l];
            auto& lv = b.model.layers[l];
            lv.wq = t.param(src.wq);
            lv.wk = t.param(src.wk);
            lv.wv = t.param(src.wv);
            if (!src.wo.value.empty()) lv.wo = t.param(src.wo);
            if (!src.w1.value.empty()) {
              lv.w1 = t.param(src.w1);
              lv.w2 = t.param(src.w2);
            }
          }
        }
      },
      adapter);
  return b;
}

/// Forward of the adapted model over token-derived inputs `h0`. Returns the
/// final hidden rows of the real tokens (prompt-tuning rows removed).
inline Var adapted_hidden(const AdaptedBinding& b, Var h0, ForwardOptions opts = {}) {
  if (!b.prompt) {
    return forward(b.model, h0, b.prefix ? &*b.prefix : nullptr, opts).hidden;
  }
  const std::size_t m = b.prompt->rows();
  const std::size_t n = h0.rows();
  std::vector<int> segments(m, -1);
  if (opts.segments.empty()) {
    segments.insert(segments.end(), n, 0);
  } else {
    segments.insert(segments.end(), opts.segments.begin(), opts.segments.end());
  }
  opts.segments = std::move(segments);
  const Var hidden = forward(b.model, concat_rows(*b.prompt, h0), nullptr, opts).hidden;
  std::vector<int> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = static_cast<int>(m + i);
  return select_rows(hidden, std::move(rows));
}

/// Inference form of an adapted model: effective weights plus an optional
/// prefix. LoRA/full fine-tuning yield a merged copy; the base is never modified.
struct Deployment {
  Model model;
  std::optional<PrefixBlock> prefix;

  const PrefixBlock* prefix_ptr() const { return prefix ? &*prefix : nullptr; }

  ForwardResult forward(std::span<const int> ids) const { return run_tokens(model, ids, prefix_ptr()); }

  Generation generate(std::span<const int> prompt, std::size_t max_tokens, std::optional<int> stop) const {
    return prefixlab::generate(model, prompt, prefix_ptr(), max_tokens, stop);
  }
};

/// Per-layer K/V the frozen model produces on prompt embeddings E (no positions).
inline PrefixBlock prompt_as_prefix(const Model& model, const Matrix& embeddings) {
  return PrefixBlock::from_cache(build_demo_cache(model, embeddings), 0);
}

inline Deployment deploy(const Model& base, const Adapter& adapter) {
  Deployment dep{base, std::nullopt};
  std::visit(
      [&](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, PrefixAdapter>) {
          dep.prefix = a.block();
        } else if constexpr (std::is_same_v<T, PromptAdapter>) {
          dep.prefix = prompt_as_prefix(base, a.embeddings.value);
        } else if constexpr (std::is_same_v<T, LoRAAdapter>) {
          for (std::size_t l = 0; l < a.layers.size(); ++l) {
            auto& w = dep.model.layers[l];
            w.wq = w.wq + LoRAAdapter::delta(a.layers[l].q, a.scale);
            w.wk = w.wk + LoRAAdapter::delta(a.layers[l].k, a.scale);
            if (a.layers[l].v) w.wv = w.wv + LoRAAdapter::delta(*a.layers[l].v, a.scale);
          }
        } else if constexpr (std::is_same_v<T, FullFTAdapter>) {
          dep.model = a.to_model();
        }
      },
      adapter);
  return dep;
}

}  // namespace prefixlab
