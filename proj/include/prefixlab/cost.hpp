#pragma once

// Analytic flop accounting for prefill and decode. Convention: a multiply-add
// is 2 flops; QKVO projections cost 8 S d^2 per layer, attention scores plus
// mixing 4 S C d, the feed-forward block 4 S d d_ff, the output head 2 S d vocab.
// Stored prefix slots are context only: they cost no projection or FFN work.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefixlab {

using flops_t = std::uint64_t;

struct CostConfig {
  std::uint64_t L = 1;
  std::uint64_t d = 1;
  std::uint64_t d_ff = 0;
  std::uint64_t vocab = 0;
  std::uint64_t S = 1;       // prompt tokens
  std::uint64_t T = 0;       // generated tokens
  std::uint64_t m = 0;       // learned prefix slots
  std::uint64_t n_demo = 0;  // in-context exemplar tokens

  void validate() const {
    if (m > 0 && n_demo > 0) throw std::invalid_argument("cost: m and n_demo are mutually exclusive");
  }

  /// Keys visible to each prompt position before generation starts.
  std::uint64_t context() const { return m + n_demo + S; }
};

struct CostTerms {
  flops_t projections = 0;
  flops_t attention = 0;
  flops_t ffn = 0;
  flops_t head = 0;

  flops_t total() const;
};

struct CostReport {
  CostTerms prefill_terms;
  CostTerms decode_terms;
  flops_t prefill_flops = 0;
  flops_t decode_flops = 0;
  flops_t total_flops = 0;
};

namespace detail {

inline flops_t mul(flops_t a, flops_t b) {
  if (a != 0 && b > std::numeric_limits<flops_t>::max() / a) throw std::overflow_error("flop count overflows 64 bits");
  return a * b;
}

inline flops_t mul(std::initializer_list<flops_t> xs) {
  flops_t r = 1;
  for (flops_t x : xs) r = mul(r, x);
  return r;
}

inline flops_t add(flops_t a, flops_t b) {
  if (b > std::numeric_limits<flops_t>::max() - a) throw std::overflow_error("flop count overflows 64 bits");
  return a + b;
}

inline CostTerms& operator+=(CostTerms& a, const CostTerms& b) {
  a.projections = add(a.projections, b.projections);
  a.attention = add(a.attention, b.attention);
  a.ffn = add(a.ffn, b.ffn);
  a.head = add(a.head, b.head);
  return a;
}

/// Cost of pushing `tokens` new positions through the model when each attends
/// over `context` keys.
inline CostTerms pass(const CostConfig& c, flops_t tokens, flops_t context) {
  CostTerms t;
  t.projections = mul({8, tokens, c.d, c.d, c.L});
  t.attention = mul({4, tokens, context, c.d, c.L});
  t.ffn = mul({4, tokens, c.d, c.d_ff, c.L});
  t.head = mul({2, tokens, c.d, c.vocab});
  return t;
}

}  // namespace detail

inline flops_t CostTerms::total() const {
  return detail::add(detail::add(projections, attention), detail::add(ffn, head));
}

inline CostTerms prefill_terms(const CostConfig& c) {
  c.validate();
  return detail::pass(c, c.S, c.context());
}

inline flops_t prefill_flops(const CostConfig& c) { return prefill_terms(c).total(); }

/// Step t = 1..T processes one token over C + t keys.
inline CostTerms decode_terms(const CostConfig& c) {
  c.validate();
  CostTerms sum;
  for (std::uint64_t t = 1; t <= c.T; ++t) {
    using detail::operator+=;
    sum += detail::pass(c, 1, detail::add(c.context(), t));
  }
  return sum;
}

inline flops_t decode_flops(const CostConfig& c) { return decode_terms(c).total(); }

inline CostReport cost_report(const CostConfig& c) {
  CostReport r;
  r.prefill_terms = prefill_terms(c);
  r.decode_terms = decode_terms(c);
  r.prefill_flops = r.prefill_terms.total();
  r.decode_flops = r.decode_terms.total();
  r.total_flops = detail::add(r.prefill_flops, r.decode_flops);
  return r;
}

/// Least-squares slope of log(prefill) against log(S).
inline double fit_prefill_exponent(CostConfig base, const std::vector<std::uint64_t>& prompt_lengths) {
  if (prompt_lengths.size() < 2) throw std::invalid_argument("exponent fit needs at least two prompt lengths");
  std::vector<double> xs, ys;
  for (std::uint64_t s : prompt_lengths) {
    base.S = s;
    xs.push_back(std::log(static_cast<double>(s)));
    ys.push_back(std::log(static_cast<double>(prefill_flops(base))));
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / n;
    my += ys[i] / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

struct FrontierRow {
  flops_t flops = 0;
  double accuracy = 0.0;
  std::string label;
  bool pareto = false;
};

/// Rows sorted by flops (ties: higher accuracy first). A row is Pareto-optimal
/// when no other row has flops <= and accuracy >= with one strict.
inline std::vector<FrontierRow> frontier_table(const std::vector<CostConfig>& configs,
                                               const std::vector<double>& accuracies,
                                               const std::vector<std::string>& labels = {}) {
  if (configs.size() != accuracies.size()) throw std::invalid_argument("frontier_table: configs and accuracies differ in length");
  if (!labels.empty() && labels.size() != configs.size()) throw std::invalid_argument("frontier_table: labels length mismatch");
  std::vector<FrontierRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    rows.push_back({cost_report(configs[i]).total_flops, accuracies[i], labels.empty() ? std::to_string(i) : labels[i], false});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const FrontierRow& a, const FrontierRow& b) {
    return a.flops != b.flops ? a.flops < b.flops : a.accuracy > b.accuracy;
  });
  for (auto& r : rows) {
    r.pareto = std::none_of(rows.begin(), rows.end(), [&](const FrontierRow& o) {
      return o.flops <= r.flops && o.accuracy >= r.accuracy && (o.flops < r.flops || o.accuracy > r.accuracy);
    });
  }
  return rows;
}

inline std::string frontier_csv(const std::vector<FrontierRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "flops,accuracy,label,pareto\n";
  for (const auto& r : rows) out << r.flops << ',' << r.accuracy << ',' << r.label << ',' << (r.pareto ? 1 : 0) << '\n';
  return out.str();
}

}  // namespace prefixlab
