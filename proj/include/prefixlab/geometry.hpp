#pragma once

// Representation-geometry probes: effective dimension of value spans, the
// share of prefix value energy outside the base value subspace, and
// last-layer effective rank with cumulative spectra.

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefixlab/adapters.hpp"
#include "prefixlab/attention.hpp"
#include "prefixlab/linalg.hpp"

namespace prefixlab {

struct SpectrumSummary {
  std::vector<double> masses;      // normalized sigma^2, non-increasing, sums to 1
  std::vector<double> cumulative;  // running sums of `masses`
  std::size_t effective_k = 0;
  double threshold = 0.9;
  std::size_t width = 0;  // d_v, for the effective_k / width ratio

  double ratio() const { return width == 0 ? 0.0 : static_cast<double>(effective_k) / static_cast<double>(width); }
};

/// Cumulates normalized squared singular values and finds the smallest K whose
/// mass reaches `threshold` (with 1e-12 slack for rounding in the running sum).
inline SpectrumSummary summarize_spectrum(std::vector<double> sq, double threshold, std::size_t width) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("spectrum threshold must lie in (0, 1]");
  double total = 0.0;
  for (double v : sq) total += v;
  if (!(total > 0.0)) throw std::invalid_argument("spectrum of a zero matrix has no effective dimension");
  SpectrumSummary s;
  s.threshold = threshold;
  s.width = width;
  s.masses.reserve(sq.size());
  double run = 0.0;
  for (double v : sq) {
    s.masses.push_back(v / total);
    run += v / total;
    s.cumulative.push_back(run);
  }
  s.effective_k = s.cumulative.size();
  for (std::size_t k = 0; k < s.cumulative.size(); ++k) {
    if (s.cumulative[k] >= threshold - 1e-12) {
      s.effective_k = k + 1;
      break;
    }
  }
  return s;
}

inline std::vector<double> squared_singular_values(const Matrix& a) {
  std::vector<double> sq;
  for (double s : svd(a).S) sq.push_back(s * s);
  return sq;
}

inline SpectrumSummary value_effective_dimension(const Matrix& v, double threshold = 0.9) {
  if (frobenius_norm(v) == 0.0) throw std::invalid_argument("value_effective_dimension: V is the zero matrix");
  return summarize_spectrum(squared_singular_values(v), threshold, v.cols());
}

/// ||P_V - P_V B B^T||_F / ||P_V||_F with B the top-K right singular vectors of V.
inline double prefix_energy_outside(const Matrix& p_v, const Matrix& v, std::size_t k) {
  if (p_v.cols() != v.cols()) throw ShapeError("prefix_energy_outside: width mismatch " + shape_str(p_v.rows(), p_v.cols()) +
                                               " vs " + shape_str(v.rows(), v.cols()));
  const double pn = frobenius_norm(p_v);
  if (pn == 0.0) throw std::invalid_argument("prefix_energy_outside: P_V is zero");
  const SVDResult f = svd(v);
  if (k > rank_from_singular_values(v, f.S)) throw std::invalid_argument("prefix_energy_outside: K exceeds rank(V)");
  if (k == 0) return 1.0;
  const Matrix b = transpose(row_block(f.Vt, 0, k));  // d_v x K
  const Matrix residual = p_v - matmul(matmul(p_v, b), transpose(b));
  return std::clamp(frobenius_norm(residual) / pn, 0.0, 1.0);
}

/// Per-input spectra, each normalized to unit mass and zero-padded to a common
/// length, averaged across inputs and then cumulated.
inline SpectrumSummary last_layer_effective_rank(const std::vector<Matrix>& features, double threshold = 0.9) {
  if (features.empty()) throw std::invalid_argument("last_layer_effective_rank: empty evaluation set");
  std::vector<std::vector<double>> spectra;
  std::size_t len = 0;
  for (const Matrix& f : features) {
    std::vector<double> sq = squared_singular_values(f);
    double total = 0.0;
    for (double x : sq) total += x;
    if (total == 0.0) continue;
    for (double& x : sq) x /= total;
    len = std::max(len, sq.size());
    spectra.push_back(std::move(sq));
  }
  if (spectra.empty()) throw std::invalid_argument("last_layer_effective_rank: all inputs are zero");
  std::vector<double> mean(len, 0.0);
  for (const auto& s : spectra) {
    for (std::size_t i = 0; i < s.size(); ++i) mean[i] += s[i] / static_cast<double>(spectra.size());
  }
  return summarize_spectrum(std::move(mean), threshold, features.front().cols());
}

inline SpectrumSummary last_layer_effective_rank(const Matrix& f, double threshold = 0.9) {
  return last_layer_effective_rank(std::vector<Matrix>{f}, threshold);
}

/// One row per singular index, suitable for plotting.
inline std::string spectrum_csv(const SpectrumSummary& s) {
  std::ostringstream out;
  out.precision(17);
  out << "index,mass,cumulative\n";
  for (std::size_t i = 0; i < s.masses.size(); ++i) out << (i + 1) << ',' << s.masses[i] << ',' << s.cumulative[i] << '\n';
  return out.str();
}

inline nlohmann::json to_json(const SpectrumSummary& s) {
  return nlohmann::json{{"effective_k", s.effective_k}, {"threshold", s.threshold},   {"width", s.width},
                        {"ratio", s.ratio()},           {"masses", s.masses},         {"cumulative", s.cumulative}};
}

struct ProbeOptions {
  std::optional<std::size_t> layer;  // default: last layer
  double threshold = 0.9;
};

/// Bundles the three probes for one layer across heads. V comes from the base
/// model on `eval_batch`; last-layer features are compared base vs adapted.
inline nlohmann::json probe_report(const Model& model, const Adapter& adapter,
                                   const std::vector<std::vector<int>>& eval_batch, const ProbeOptions& opts = {}) {
  if (eval_batch.empty()) throw std::invalid_argument("probe_report: empty evaluation batch");
  const std::size_t L = model.config.layers;
  const std::size_t layer = opts.layer.value_or(L - 1);
  if (layer >= L) throw std::invalid_argument("probe_report: layer index out of range");
  const std::size_t heads = model.config.heads;
  const std::size_t dh = model.config.head_dim();

  const Deployment dep = deploy(model, adapter);
  Matrix values(0, model.config.d);
  std::vector<Matrix> base_features, adapted_features;
  for (const auto& seq : eval_batch) {
    if (seq.empty()) throw std::invalid_argument("probe_report: empty sequence in evaluation batch");
    const ForwardResult base = run_tokens(model, seq);
    values = stack_rows(values, base.layers[layer].v);
    base_features.push_back(base.hidden);
    adapted_features.push_back(dep.forward(seq).hidden);
  }

  nlohmann::json report;
  report["layer"] = layer;
  report["threshold"] = opts.threshold;
  report["adapter"] = kind_name(adapter);
  report["heads"] = nlohmann::json::array();
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix vh = col_block(values, h * dh, dh);
    const SpectrumSummary s = value_effective_dimension(vh, opts.threshold);
    nlohmann::json entry{{"head", h}, {"value_effective_dimension", to_json(s)}};
    if (dep.prefix) {
      const Matrix pv = col_block(dep.prefix->values.at(layer), h * dh, dh);
      if (frobenius_norm(pv) > 0.0) entry["prefix_energy_outside"] = prefix_energy_outside(pv, vh, s.effective_k);
    }
    report["heads"].push_back(entry);
  }
  report["last_layer"] = {{"base", to_json(last_layer_effective_rank(base_features, opts.threshold))},
                          {"adapted", to_json(last_layer_effective_rank(adapted_features, opts.threshold))}};
  return report;
}

}  // namespace prefixlab
