#pragma once

// KV-cache construction, the demonstration-cache/prefix equivalence, and
// greedy autoregressive decoding with incremental cache reuse.

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "prefixlab/attention.hpp"

namespace prefixlab {

/// Per-layer K/V of a causal forward over `demo` (n x d continuous inputs).
inline KVCache build_demo_cache(const Model& model, const Matrix& demo) {
  if (demo.rows() == 0) throw std::invalid_argument("build_demo_cache: empty demonstration");
  const ForwardResult r = run_forward(model, demo);
  KVCache c;
  for (const auto& l : r.layers) {
    c.keys.push_back(l.k);
    c.values.push_back(l.v);
  }
  return c;
}

/// Token version; positions start at 0.
inline KVCache build_demo_cache(const Model& model, std::span<const int> demo_tokens) {
  return build_demo_cache(model, embed_tokens(model, demo_tokens));
}

/// Prefix block equal to the demo cache; the tokens that follow it continue the
/// demo's position count.
inline PrefixBlock demo_prefix(const Model& model, std::span<const int> demo_tokens) {
  return PrefixBlock::from_cache(build_demo_cache(model, demo_tokens), demo_tokens.size());
}

/// Max |difference| between (a) the query rows of a causal forward over
/// [demo; query] and (b) a forward over the query alone with the demo cache as
/// prefix. Continuous inputs; no positional encodings.
inline double icl_equivalence_check(const Model& model, const Matrix& demo, const Matrix& query) {
  const ForwardResult joint = run_forward(model, stack_rows(demo, query));
  const Matrix joint_query = row_block(joint.hidden, demo.rows(), query.rows());
  if (demo.rows() == 0) return max_abs_diff(joint_query, run_forward(model, query).hidden);
  const PrefixBlock prefix = PrefixBlock::from_cache(build_demo_cache(model, demo));
  const ForwardResult split = run_forward(model, query, &prefix);
  return max_abs_diff(joint_query, split.hidden);
}

/// Token version. Compares final hidden states and (when present) logits.
inline double icl_equivalence_check(const Model& model, std::span<const int> demo, std::span<const int> query) {
  std::vector<int> joint_ids(demo.begin(), demo.end());
  joint_ids.insert(joint_ids.end(), query.begin(), query.end());
  const ForwardResult joint = run_tokens(model, joint_ids);
  const ForwardResult split = demo.empty() ? run_tokens(model, query) : [&] {
    const PrefixBlock prefix = demo_prefix(model, demo);
    return run_tokens(model, query, &prefix);
  }();
  double diff = max_abs_diff(row_block(joint.hidden, demo.size(), query.size()), split.hidden);
  if (!joint.logits.empty()) {
    diff = std::max(diff, max_abs_diff(row_block(joint.logits, demo.size(), query.size()), split.logits));
  }
  return diff;
}

inline int argmax_row(const Matrix& m, std::size_t row) {
  const auto r = m.row(row);
  return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

struct Generation {
  std::vector<int> tokens;                     // generated tokens (stop token included if emitted)
  std::vector<std::size_t> attention_widths;   // keys visible to the position producing token t
  bool stopped = false;
  bool truncated = false;
};

/// Greedy decoding. The prompt is prefilled once; every later step forwards
/// only the newest token against the cached prefix + token keys/values.
inline Generation generate(const Model& model, std::span<const int> prompt, const PrefixBlock* prefix,
                           std::size_t max_tokens, std::optional<int> stop = std::nullopt) {
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  const std::size_t L = model.config.layers;
  const std::size_t offset = prefix != nullptr ? prefix->position_offset : 0;
  KVCache cache;
  if (prefix != nullptr && prefix->length() > 0) {
    prefix->validate(model.config);
    cache.keys = prefix->keys;
    cache.values = prefix->values;
  } else {
    cache.keys.assign(L, Matrix(0, model.config.d));
    cache.values.assign(L, Matrix(0, model.config.d));
  }

  Generation g;
  auto extend = [&](std::span<const int> ids, std::size_t pos) {
    const PrefixBlock as_prefix{cache.keys, cache.values, 0};
    const Matrix h0 = embed_tokens(model, ids, pos);
    const ForwardResult r = run_forward(model, h0, cache.length() > 0 ? &as_prefix : nullptr);
    for (std::size_t l = 0; l < L; ++l) {
      cache.keys[l] = stack_rows(cache.keys[l], r.layers[l].k);
      cache.values[l] = stack_rows(cache.values[l], r.layers[l].v);
    }
    return argmax_row(r.logits, r.logits.rows() - 1);
  };

  int next = extend(prompt, offset);
  std::size_t position = offset + prompt.size();
  for (std::size_t t = 0; t < max_tokens; ++t) {
    g.attention_widths.push_back(cache.length());
    g.tokens.push_back(next);
    if (stop && next == *stop) {
      g.stopped = true;
      return g;
    }
    if (t + 1 == max_tokens) break;
    const int ids[1] = {next};
    next = extend(ids, position++);
  }
  g.truncated = true;
  return g;
}

/// Oracle for `generate`: re-forwards the whole sequence at every step.
inline Generation generate_reforward(const Model& model, std::span<const int> prompt, const PrefixBlock* prefix,
                                     std::size_t max_tokens, std::optional<int> stop = std::nullopt) {
  Generation g;
  std::vector<int> seq(prompt.begin(), prompt.end());
  const std::size_t m = prefix != nullptr ? prefix->length() : 0;
  for (std::size_t t = 0; t < max_tokens; ++t) {
    const ForwardResult r = run_tokens(model, seq, prefix);
    const int next = argmax_row(r.logits, r.logits.rows() - 1);
    g.attention_widths.push_back(m + seq.size());
    g.tokens.push_back(next);
    if (stop && next == *stop) {
      g.stopped = true;
      return g;
    }
    seq.push_back(next);
  }
  g.truncated = true;
  return g;
}

}  // namespace prefixlab
