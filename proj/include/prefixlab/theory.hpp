#pragma once

// Executable checks of the single-layer expressivity analysis: which novel
// value directions LoRA and prefix tuning can reach, the QK locking lemma, and
// the QK-LoRA / QKV-LoRA / prefix loss hierarchy on a rank-1 context.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefixlab/adapters.hpp"
#include "prefixlab/attention.hpp"
#include "prefixlab/autodiff.hpp"
#include "prefixlab/linalg.hpp"
#include "prefixlab/random.hpp"

namespace prefixlab {

/// Context X with value map W_V, and the derived novelty quantities.
struct NoveltySetting {
  Matrix x;        // n x d
  Matrix w_v;      // d x d
  Subspace s_x;    // span(X W_V)
  Matrix pi_x;     // I - B B^T
  std::size_t t_x = 0;
  std::size_t nu_x = 0;

  static NoveltySetting make(Matrix x, Matrix w_v) {
    if (x.cols() != w_v.rows()) throw ShapeError("NoveltySetting: X and W_V do not compose");
    NoveltySetting s;
    s.s_x = span_of_rows(matmul(x, w_v));
    s.pi_x = complement_projector(s.s_x);
    s.t_x = numerical_rank(x);
    s.nu_x = s.s_x.ambient_dim() - s.s_x.dim();
    s.x = std::move(x);
    s.w_v = std::move(w_v);
    return s;
  }

  std::size_t d() const { return x.cols(); }
};

/// Random setting with rank(X) = t and dim S_X = s (so nu = d - s).
inline NoveltySetting random_setting(Rng& rng, std::size_t n, std::size_t d, std::size_t t, std::size_t s) {
  if (t > std::min(n, d) || s > t) throw std::invalid_argument("random_setting: need s <= t <= min(n, d)");
  Matrix x = t == 0 ? Matrix(n, d) : matmul(rng.normal_matrix(n, t), rng.normal_matrix(t, d));
  Matrix w_v = s == 0 ? Matrix(d, d) : matmul(rng.normal_matrix(d, s), rng.normal_matrix(s, d));
  return NoveltySetting::make(std::move(x), std::move(w_v));
}

namespace detail {

inline void require_orthogonal_to_context(const NoveltySetting& s, const Subspace& u) {
  if (u.ambient_dim() != s.d()) throw ShapeError("novelty subspace has the wrong ambient dimension");
  if (u.dim() == 0 || s.s_x.dim() == 0) return;
  const double overlap = frobenius_norm(matmul(transpose(s.s_x.basis()), u.basis()));
  if (overlap > 1e-8) {
    throw std::invalid_argument("novelty subspace U is not orthogonal to S_X (overlap " + std::to_string(overlap) + ")");
  }
}

}  // namespace detail

/// LoRA on W_V reaches U (within S_X-perp) iff dim U <= min(t_X, r).
inline bool lora_realizable(const NoveltySetting& s, const Subspace& u, std::size_t r) {
  detail::require_orthogonal_to_context(s, u);
  return u.dim() <= std::min(s.t_x, r);
}

/// Delta_V = C B_U^T with C the first dim(U) right singular vectors of X.
/// The new values X (W_V + Delta_V) then carry exactly U outside S_X.
inline Matrix construct_lora_delta(const NoveltySetting& s, const Subspace& u, std::size_t r) {
  detail::require_orthogonal_to_context(s, u);
  const std::size_t dim = u.dim();
  if (dim > std::min(s.t_x, r)) {
    throw std::invalid_argument("construct_lora_delta: dim U = " + std::to_string(dim) + " exceeds min(t_X, r) = " +
                                std::to_string(std::min(s.t_x, r)) + "; LoRA cannot realize it");
  }
  if (dim == 0) return Matrix(s.d(), s.d());
  const SVDResult f = svd(s.x);
  const Matrix c = col_block(transpose(f.Vt), 0, dim);  // d x s
  return matmul(c, transpose(u.basis()));
}

/// m x d value block whose first dim(U) rows are a basis of U; the rest are zero.
inline Matrix construct_prefix_values(const Subspace& u, std::size_t m) {
  if (u.dim() > m) {
    throw std::invalid_argument("construct_prefix_values: dim U = " + std::to_string(u.dim()) +
                                " exceeds prefix length m = " + std::to_string(m));
  }
  Matrix p(m, u.ambient_dim());
  const Matrix bt = transpose(u.basis());
  std::copy(bt.data().begin(), bt.data().end(), p.data().begin());
  return p;
}

enum class CapsRelation { lora_subset_pt, pt_subset_lora, equal };

inline const char* to_string(CapsRelation r) {
  switch (r) {
    case CapsRelation::lora_subset_pt: return "lora_subset_pt";
    case CapsRelation::pt_subset_lora: return "pt_subset_lora";
    case CapsRelation::equal: return "equal";
  }
  return "?";
}

struct CapsReport {
  std::size_t d_lora = 0;
  std::size_t d_pt = 0;
  CapsRelation relation = CapsRelation::equal;
};

/// D_LoRA = min(t_X, r, nu_X), D_PT = min(m, nu_X). QK-only LoRA is r = 0.
inline CapsReport expressivity_caps(std::size_t t_x, std::size_t r, std::size_t m, std::size_t nu_x) {
  CapsReport c;
  c.d_lora = std::min({t_x, r, nu_x});
  c.d_pt = std::min(m, nu_x);
  c.relation = c.d_lora < c.d_pt   ? CapsRelation::lora_subset_pt
               : c.d_lora > c.d_pt ? CapsRelation::pt_subset_lora
                                   : CapsRelation::equal;
  return c;
}

struct NoveltyMethod {
  enum class Kind { lora, prefix } kind = Kind::lora;
  std::size_t size = 0;  // r or m

  static NoveltyMethod lora(std::size_t r) { return {Kind::lora, r}; }
  static NoveltyMethod prefix(std::size_t m) { return {Kind::prefix, m}; }
};

/// Largest novelty dimension dim(Pi_X span(new values)) seen over random
/// rank-<=r updates Delta_V = A B (or random m x d prefix values).
inline std::size_t brute_force_max_novelty(const NoveltySetting& s, NoveltyMethod method, std::size_t trials,
                                           Rng& rng) {
  if (s.d() > 12) throw std::invalid_argument("brute_force_max_novelty: d must be <= 12");
  if (trials < 1000) throw std::invalid_argument("brute_force_max_novelty: needs >= 1000 trials");
  const std::size_t d = s.d();
  std::size_t best = 0;
  if (method.size == 0) return 0;
  for (std::size_t i = 0; i < trials; ++i) {
    Matrix novel;
    double scale = 0.0;  // norm of the factors, so cancellation noise is not counted
    if (method.kind == NoveltyMethod::Kind::lora) {
      const Matrix delta = matmul(rng.normal_matrix(d, method.size), rng.normal_matrix(method.size, d));
      const Matrix w = s.w_v + delta;
      novel = matmul(matmul(s.x, w), s.pi_x);
      scale = frobenius_norm(s.x) * frobenius_norm(w);
    } else {
      const Matrix p = rng.normal_matrix(method.size, d);
      novel = matmul(p, s.pi_x);
      scale = frobenius_norm(p);
    }
    best = std::max(best, numerical_rank(novel, scale));
  }
  return best;
}

/// A random (X, U, r) triple at width d; U lies in S_X-perp and is realizable
/// by rank-r value LoRA exactly when `feasible`.
struct RealizabilityCase {
  NoveltySetting setting;
  Subspace u;
  std::size_t r = 0;
  bool feasible = true;
};

inline RealizabilityCase random_realizability_case(Rng& rng, std::size_t d, bool feasible) {
  if (d < 2) throw std::invalid_argument("random_realizability_case: d must be >= 2");
  for (;;) {
    const auto t = static_cast<std::size_t>(rng.integer(1, static_cast<int>(d) - 1));
    const auto s = static_cast<std::size_t>(rng.integer(0, static_cast<int>(t)));
    const std::size_t nu = d - s;
    const auto r = static_cast<std::size_t>(rng.integer(feasible ? 1 : 0, static_cast<int>(d)));
    const std::size_t cap = std::min({t, r, nu});
    std::size_t k = 0;
    if (feasible) {
      if (cap == 0) continue;
      k = static_cast<std::size_t>(rng.integer(1, static_cast<int>(cap)));
    } else {
      if (std::min(t, r) >= nu) continue;
      k = static_cast<std::size_t>(
          rng.integer(static_cast<int>(std::min(t, r)) + 1, static_cast<int>(nu)));
    }
    RealizabilityCase c;
    c.setting = random_setting(rng, t + static_cast<std::size_t>(rng.integer(0, 3)), d, t, s);
    if (c.setting.t_x != t || c.setting.s_x.dim() != s) continue;  // degenerate draw
    c.u = random_subspace_within(rng, orthogonal_complement(c.setting.s_x), k);
    c.r = r;
    c.feasible = feasible;
    return c;
  }
}

/// Novelty subspace Pi_X span(X (W_V + delta)) reached by a value update.
inline Subspace novelty_subspace(const NoveltySetting& s, const Matrix& delta) {
  return span_of_rows(matmul(matmul(s.x, s.w_v + delta), s.pi_x));
}

/// Random setting with exactly (t_X, nu_X) when one exists with d <= 12.
inline std::optional<NoveltySetting> setting_for_cell(Rng& rng, std::size_t t_x, std::size_t nu_x) {
  const std::size_t d = std::max({t_x, nu_x, std::size_t{1}});
  if (d > 12 || d - nu_x > t_x) return std::nullopt;
  for (int attempt = 0; attempt < 16; ++attempt) {
    NoveltySetting s = random_setting(rng, std::max<std::size_t>(t_x, 1), d, t_x, d - nu_x);
    if (s.t_x == t_x && s.nu_x == nu_x) return s;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// QK locking

/// Every query attends to the whole context (and the prefix, if any).
inline ForwardOptions context_attention() { return ForwardOptions{Masking::none, {}, false}; }

/// Output of a single attention layer on continuous inputs.
inline Matrix attention_output(const Model& layer, const Matrix& x) {
  return run_forward(layer, x, nullptr, context_attention()).hidden;
}

/// ||Pi_X (Y' - Y)||_F / ||Y' - Y||_F; zero when the outputs coincide.
inline double lock_residual(const Matrix& pi_x, const Matrix& y, const Matrix& y_perturbed) {
  const Matrix dy = y_perturbed - y;
  const double n = frobenius_norm(dy);
  if (n == 0.0) return 0.0;
  return frobenius_norm(matmul(dy, pi_x)) / n;
}

enum class PerturbTarget { query_key, value };

/// Per-trial novelty residuals for random perturbations of norm `size` applied to
/// W_Q and W_K (or, as a control, to W_V) of a single attention layer.
inline std::vector<double> qk_lock_residuals(const Model& layer, const Matrix& x, std::size_t trials,
                                             std::uint64_t seed, PerturbTarget target = PerturbTarget::query_key,
                                             double size = 1e-4) {
  if (layer.config.layers != 1) throw std::invalid_argument("qk_lock_check: expects a single attention layer");
  const NoveltySetting s = NoveltySetting::make(x, layer.layers[0].wv);
  const Matrix y = attention_output(layer, x);
  Rng rng(seed);
  std::vector<double> out;
  out.reserve(trials);
  auto direction = [&](std::size_t r, std::size_t c) {
    Matrix g = rng.normal_matrix(r, c);
    return (size / frobenius_norm(g)) * g;
  };
  for (std::size_t i = 0; i < trials; ++i) {
    Model p = layer;
    auto& w = p.layers[0];
    if (target == PerturbTarget::query_key) {
      w.wq = w.wq + direction(w.wq.rows(), w.wq.cols());
      w.wk = w.wk + direction(w.wk.rows(), w.wk.cols());
    } else {
      w.wv = w.wv + direction(w.wv.rows(), w.wv.cols());
    }
    out.push_back(lock_residual(s.pi_x, y, attention_output(p, x)));
  }
  return out;
}

inline double qk_lock_check(const Model& layer, const Matrix& x, std::size_t trials, std::uint64_t seed) {
  const auto r = qk_lock_residuals(layer, x, trials, seed);
  return r.empty() ? 0.0 : *std::max_element(r.begin(), r.end());
}

/// t_X after each appended row (first entry: the original X).
inline std::vector<std::size_t> context_rank_probe(const Matrix& x, const Matrix& appended) {
  std::vector<std::size_t> ranks{numerical_rank(x)};
  Matrix cur = x;
  for (std::size_t i = 0; i < appended.rows(); ++i) {
    cur = stack_rows(cur, row_block(appended, i, 1));
    ranks.push_back(numerical_rank(cur));
  }
  return ranks;
}

// ---------------------------------------------------------------------------
// Loss hierarchy

struct LossHierarchyConfig {
  std::size_t n1 = 4;
  std::size_t n2 = 4;
  std::size_t d = 8;
  std::size_t r = 2;
  std::size_t m = 2;
  std::size_t steps = 20000;
  std::uint64_t seed = 0;
  double lr = 1e-2;
  double tau = 50.0;
  double grad_tol = 1e-8;
  double weight_std = 1.0;
  /// Prefix training is multi-start: start 0 uses the standard prefix init,
  /// later starts draw P_K at the cycled scales below. The lowest final loss wins.
  std::size_t pt_starts = 12;
  std::vector<double> pt_key_scales{1.0, 3.0, 10.0};
};

/// Rank-1 context X = a u^T with class-signed a_i and unit targets e1/e2 taken
/// from a computed basis of S_X-perp.
struct LossHierarchyProblem {
  Model layer;
  Matrix x;
  Matrix target;
  std::vector<double> a;
  Matrix u;     // 1 x d
  Matrix beta;  // 1 x d, u^T W_Q
  Matrix e1, e2;
  std::size_t resamples = 0;
};

inline LossHierarchyProblem make_loss_hierarchy_problem(const LossHierarchyConfig& cfg) {
  if (cfg.d < 4) throw std::invalid_argument("loss hierarchy: d must be >= 4");
  if (cfg.n1 == 0 || cfg.n2 == 0) throw std::invalid_argument("loss hierarchy: both classes must be nonempty");
  Rng rng(cfg.seed);
  LossHierarchyProblem p;
  ModelConfig mc = ModelConfig::attention_only(cfg.d);
  mc.weight_std = cfg.weight_std;
  Matrix u = rng.normal_matrix(1, cfg.d);
  u = (1.0 / frobenius_norm(u)) * u;
  for (;;) {
    p.layer = Model::random(mc, rng.next());
    p.beta = matmul(u, p.layer.layers[0].wq);
    if (frobenius_norm(p.beta) >= 1e-3) break;
    ++p.resamples;
  }
  const std::size_t n = cfg.n1 + cfg.n2;
  std::vector<double> a;
  for (std::size_t i = 0; i < cfg.n1; ++i) a.push_back(rng.uniform(0.5, 1.5));
  for (std::size_t i = 0; i < cfg.n2; ++i) a.push_back(-rng.uniform(0.5, 1.5));
  rng.shuffle(a);
  Matrix acol(n, 1, a);
  p.x = matmul(acol, u);
  p.u = u;
  p.a = a;

  const Subspace comp = orthogonal_complement(span_of_rows(matmul(p.x, p.layer.layers[0].wv)));
  p.e1 = transpose(col_block(comp.basis(), 0, 1));
  p.e2 = transpose(col_block(comp.basis(), 1, 1));
  p.target = Matrix(n, cfg.d);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix& e = a[i] > 0 ? p.e1 : p.e2;
    std::copy(e.data().begin(), e.data().end(), p.target.row(i).begin());
  }
  return p;
}

struct AdapterFit {
  double final_loss = 0.0;
  bool converged = false;
  std::size_t steps = 0;
  double final_grad_norm = 0.0;
};

/// Adam on 1/2 ||Y - Y*||_F^2 until the gradient norm drops below `grad_tol`.
inline AdapterFit fit_single_layer(const Model& layer, const Matrix& x, const Matrix& target, Adapter& adapter,
                                   std::size_t steps, double lr, double grad_tol) {
  std::vector<Param*> params = parameters(adapter);
  Adam opt(params);
  auto loss_of = [&](Tape& t) {
    AdaptedBinding b = bind_adapter(t, layer, adapter);
    return mse_loss(adapted_hidden(b, t.constant_ref(x), context_attention()), t.constant_ref(target));
  };
  AdapterFit fit;
  for (std::size_t step = 0;; ++step) {
    zero_grads(params);
    Tape t;
    const Var loss = loss_of(t);
    t.backward(loss);
    fit.final_loss = loss.value()(0, 0);
    fit.final_grad_norm = grad_norm(params);
    fit.steps = step;
    if (!std::isfinite(fit.final_loss)) throw NumericalError("loss hierarchy: training diverged");
    if (fit.final_grad_norm <= grad_tol) {
      fit.converged = true;
      break;
    }
    if (step == steps) break;
    opt.step(lr);
  }
  return fit;
}

/// Loss of the closed-form prefix P_V = [e1; e2], P_K = [tau beta; -tau beta].
inline double analytic_prefix_loss(const LossHierarchyProblem& p, double tau) {
  PrefixBlock block;
  block.keys.push_back(stack_rows(tau * p.beta, (-tau) * p.beta));
  block.values.push_back(stack_rows(p.e1, p.e2));
  const Matrix y = run_forward(p.layer, p.x, &block, context_attention()).hidden;
  const double diff = frobenius_norm(y - p.target);
  return 0.5 * diff * diff;
}

/// 1/2 sigma_2^2 of Y*: the best rank-1 approximation error.
inline double eckart_young_floor(const Matrix& target) {
  const SVDResult f = svd(target);
  double tail = 0.0;
  for (std::size_t i = 1; i < f.S.size(); ++i) tail += f.S[i] * f.S[i];
  return 0.5 * tail;
}

struct LossHierarchyResult {
  LossHierarchyConfig config;
  double qk_floor = 0.0;
  double qkv_floor = 0.0;
  double qkv_floor_svd = 0.0;
  AdapterFit qk, qkv, pt;
  std::vector<double> pt_start_losses;
  std::size_t pt_best_start = 0;
  double analytic_pt_loss = 0.0;
  std::size_t resamples = 0;

  bool holds(double tol = 1e-6) const {
    return qk.final_loss >= qk_floor - tol && qkv.final_loss >= qkv_floor - tol && pt.final_loss <= 1e-2;
  }
};

inline LossHierarchyResult loss_hierarchy_experiment(const LossHierarchyConfig& cfg) {
  const LossHierarchyProblem p = make_loss_hierarchy_problem(cfg);
  LossHierarchyResult res;
  res.config = cfg;
  res.resamples = p.resamples;
  res.qk_floor = 0.5 * static_cast<double>(cfg.n1 + cfg.n2);
  res.qkv_floor = 0.5 * static_cast<double>(std::min(cfg.n1, cfg.n2));
  res.qkv_floor_svd = eckart_young_floor(p.target);

  Rng rng(cfg.seed ^ 0x5eed5eedULL);
  Adapter qk = LoRAAdapter::init(p.layer, LoraTargets::qk, cfg.r, rng.next());
  Adapter qkv = LoRAAdapter::init(p.layer, LoraTargets::qkv, cfg.r, rng.next());
  res.qk = fit_single_layer(p.layer, p.x, p.target, qk, cfg.steps, cfg.lr, cfg.grad_tol);
  res.qkv = fit_single_layer(p.layer, p.x, p.target, qkv, cfg.steps, cfg.lr, cfg.grad_tol);

  // With full attention every row's weights are softmax(a_i z) over one shared
  // score vector z, and small keys settle in a basin where P_V partly cancels
  // the token values. Wider key draws start beyond the token score range.
  for (std::size_t start = 0; start < std::max<std::size_t>(1, cfg.pt_starts); ++start) {
    PrefixAdapter prefix = init_prefix(p.layer, PrefixInit{InitMode::random, cfg.m, rng.next(), false});
    if (start > 0 && !cfg.pt_key_scales.empty()) {
      const double scale = cfg.pt_key_scales[(start - 1) % cfg.pt_key_scales.size()];
      prefix.keys(0).value = rng.normal_matrix(cfg.m, cfg.d, scale);
    }
    Adapter pt = std::move(prefix);
    const AdapterFit fit = fit_single_layer(p.layer, p.x, p.target, pt, cfg.steps, cfg.lr, cfg.grad_tol);
    res.pt_start_losses.push_back(fit.final_loss);
    if (start == 0 || fit.final_loss < res.pt.final_loss) {
      res.pt = fit;
      res.pt_best_start = start;
    }
  }
  res.analytic_pt_loss = analytic_prefix_loss(p, cfg.tau);
  return res;
}

}  // namespace prefixlab
