#pragma once

// Toy-scale training and evaluation of adapters over a frozen backbone:
// next-token cross-entropy on answer tokens, Adam with an optional cosine
// schedule, early stopping on validation exact match, and the budget / data /
// ablation sweeps built on top of it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefixlab/adapters.hpp"
#include "prefixlab/attention.hpp"
#include "prefixlab/autodiff.hpp"
#include "prefixlab/decoding.hpp"
#include "prefixlab/tasks.hpp"
#include "prefixlab/theory.hpp"

namespace prefixlab {

enum class Schedule { constant, cosine };

inline Schedule parse_schedule(const std::string& s) {
  if (s == "constant") return Schedule::constant;
  if (s == "cosine") return Schedule::cosine;
  throw std::invalid_argument("unknown schedule '" + s + "'");
}

inline const char* to_string(Schedule s) { return s == Schedule::constant ? "constant" : "cosine"; }

struct TrainConfig {
  std::string adapter = "prefix";  // none | prefix | prefix_reparam | prompt | lora_qk | lora_qkv | full
  std::size_t size = 16;           // m for prefix/prompt, r for LoRA
  std::string init = "random";     // prefix init: random | from_text_demos | from_demo_cache
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 1e-2;
  Schedule schedule = Schedule::cosine;
  std::uint64_t seed = 0;
  std::uint64_t model_seed = 1234;
  std::size_t eval_every = 100;
  std::size_t patience = 10;
  std::size_t loss_subset = 64;
  bool early_stopping = true;
  std::size_t train_limit = 0;  // 0: use the whole train split

  void validate() const {
    if (batch == 0 || eval_every == 0) throw std::invalid_argument("train config: batch and eval_every must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train config: lr must be > 0");
    static const char* kinds[] = {"none", "prefix", "prefix_reparam", "prompt", "lora_qk", "lora_qkv", "full"};
    if (std::find(std::begin(kinds), std::end(kinds), adapter) == std::end(kinds)) {
      throw std::invalid_argument("train config: unknown adapter '" + adapter + "'");
    }
    if (adapter != "none" && adapter != "full" && size == 0) throw std::invalid_argument("train config: size must be >= 1");
    parse_init_mode(init);
  }
};

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
  bool operator==(const LossPoint&) const = default;
};

struct RunReport {
  std::string task;
  std::string adapter;
  TrainConfig config;
  std::vector<LossPoint> loss_curve;
  std::vector<double> val_curve;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t deployed_params = 0;
  std::size_t trainable_params = 0;
  double mean_generation_length = 0.0;
  std::size_t max_generation_length = 0;
  std::size_t steps_run = 0;
  std::size_t best_step = 0;
  std::string loss_masking = "answer_only";
  std::uint64_t base_checksum = 0;
  bool backbone_intact = true;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"adapter", c.adapter},       {"size", c.size},
                        {"init", c.init},             {"steps", c.steps},
                        {"batch", c.batch},           {"lr", c.lr},
                        {"schedule", to_string(c.schedule)}, {"seed", c.seed},
                        {"model_seed", c.model_seed}, {"eval_every", c.eval_every},
                        {"patience", c.patience},     {"loss_subset", c.loss_subset},
                        {"early_stopping", c.early_stopping}, {"train_limit", c.train_limit}};
}

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.loss_curve) curve.push_back({{"step", p.step}, {"loss", p.loss}});
  return nlohmann::json{{"task", r.task},
                        {"adapter", r.adapter},
                        {"config", to_json(r.config)},
                        {"loss_curve", curve},
                        {"val_curve", r.val_curve},
                        {"val_accuracy", r.val_accuracy},
                        {"test_accuracy", r.test_accuracy},
                        {"deployed_params", r.deployed_params},
                        {"trainable_params", r.trainable_params},
                        {"mean_generation_length", r.mean_generation_length},
                        {"max_generation_length", r.max_generation_length},
                        {"steps_run", r.steps_run},
                        {"best_step", r.best_step},
                        {"loss_masking", r.loss_masking},
                        {"base_checksum", r.base_checksum},
                        {"backbone_intact", r.backbone_intact}};
}

/// The frozen backbone used for a token task: 2 layers, width 32, 2 heads.
inline ModelConfig harness_model_config(const SyntheticTask& task) {
  return ModelConfig::transformer(task.vocab, 32, 2, 2, 64, task.positional);
}

inline Model harness_model(const SyntheticTask& task, std::uint64_t model_seed) {
  return Model::random(harness_model_config(task), model_seed);
}

inline std::vector<std::vector<int>> example_sequences(const std::vector<Example>& xs) {
  std::vector<std::vector<int>> out;
  for (const auto& e : xs) out.push_back(e.full());
  return out;
}

inline Adapter make_adapter(const Model& model, const TrainConfig& cfg,
                            const std::vector<std::vector<int>>& demos = {}) {
  cfg.validate();
  const std::string& k = cfg.adapter;
  if (k == "none") return std::monostate{};
  if (k == "prefix") return init_prefix(model, PrefixInit{parse_init_mode(cfg.init), cfg.size, cfg.seed, false}, demos);
  if (k == "prefix_reparam") return init_prefix(model, PrefixInit{InitMode::random, cfg.size, cfg.seed, true});
  if (k == "prompt") return PromptAdapter::random(cfg.size, model.config.d, cfg.seed);
  if (k == "lora_qk") return LoRAAdapter::init(model, LoraTargets::qk, cfg.size, cfg.seed);
  if (k == "lora_qkv") return LoRAAdapter::init(model, LoraTargets::qkv, cfg.size, cfg.seed);
  return FullFTAdapter::from(model);
}

inline std::size_t trainable_count(Adapter& a) {
  std::size_t n = 0;
  for (Param* p : parameters(a)) n += p->trainable ? p->value.size() : 0;
  return n;
}

// ---------------------------------------------------------------------------
// Token tasks

/// Teacher-forced inputs for a batch of examples packed as segments.
struct TokenBatch {
  std::vector<int> ids;
  std::vector<int> segments;
  std::vector<int> target_rows;  // rows whose next-token prediction is scored
  std::vector<int> targets;
};

inline TokenBatch make_batch(const std::vector<const Example*>& examples) {
  TokenBatch b;
  int seg = 0;
  for (const Example* e : examples) {
    if (e->prompt.empty() || e->answer.empty()) throw std::invalid_argument("make_batch: empty prompt or answer");
    const auto start = static_cast<int>(b.ids.size());
    b.ids.insert(b.ids.end(), e->prompt.begin(), e->prompt.end());
    b.ids.insert(b.ids.end(), e->answer.begin(), e->answer.end() - 1);
    const auto len = e->prompt.size() + e->answer.size() - 1;
    b.segments.insert(b.segments.end(), len, seg++);
    for (std::size_t k = 0; k < e->answer.size(); ++k) {
      b.target_rows.push_back(start + static_cast<int>(e->prompt.size() - 1 + k));
      b.targets.push_back(e->answer[k]);
    }
  }
  return b;
}

/// Mean answer-token cross-entropy of the adapted model on `b`.
inline Var batch_loss(Tape& t, const Model& model, Adapter& adapter, const TokenBatch& b) {
  const AdaptedBinding ab = bind_adapter(t, model, adapter);
  ForwardOptions opts;
  opts.segments = b.segments;
  const Var h0 = embed(ab.model, b.ids, positions_for(b.ids.size(), b.segments, ab.position_offset));
  const Var hidden = adapted_hidden(ab, h0, opts);
  const Var z = logits(ab.model, select_rows(hidden, b.target_rows));
  return scale(cross_entropy_rows(z, b.targets), 1.0 / static_cast<double>(b.targets.size()));
}

struct EvalResult {
  double accuracy = 0.0;
  double mean_length = 0.0;
  std::size_t max_length = 0;
};

/// Greedy exact match (answer including the stop token). `context` is an
/// optional token prefix placed in front of every prompt (in-context demos).
inline EvalResult evaluate(const Deployment& dep, const SyntheticTask& task, const std::vector<Example>& examples,
                           const std::vector<int>& context = {}) {
  EvalResult r;
  if (examples.empty()) return r;
  std::size_t correct = 0, total_len = 0;
  for (const auto& e : examples) {
    std::vector<int> prompt = context;
    prompt.insert(prompt.end(), e.prompt.begin(), e.prompt.end());
    const Generation g = dep.generate(prompt, e.answer.size() + 2, task.stop);
    if (g.tokens == e.answer) ++correct;
    const std::size_t len = g.stopped ? g.tokens.size() - 1 : g.tokens.size();
    total_len += len;
    r.max_length = std::max(r.max_length, len);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  r.mean_length = static_cast<double>(total_len) / static_cast<double>(examples.size());
  return r;
}

namespace detail {

inline double lr_at(const TrainConfig& cfg, std::size_t step) {
  return cfg.schedule == Schedule::cosine ? cosine_lr(step, cfg.steps, cfg.lr) : cfg.lr;
}

inline void check_finite_loss(double loss, std::size_t step, const std::string& adapter) {
  if (!std::isfinite(loss)) {
    throw NumericalError("training diverged: loss is " + std::to_string(loss) + " at step " + std::to_string(step) +
                         " (adapter " + adapter + ")");
  }
}

/// Shared early-stopping loop. `loss_fn` builds the training loss for a batch
/// of train indices; `curve_loss` evaluates the fixed-subset loss; `val_acc`
/// scores the current adapter on the validation split.
template <class LossFn, class CurveFn, class ValFn>
void optimize(Adapter& adapter, const TrainConfig& cfg, std::size_t n_train, RunReport& rep, LossFn loss_fn,
              CurveFn curve_loss, ValFn val_acc) {
  std::vector<Param*> params = parameters(adapter);
  Adam opt(params);
  Rng rng(cfg.seed ^ 0x7261696eULL);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  Adapter best = adapter;
  double best_val = -1.0;
  std::size_t stale = 0;
  auto checkpoint = [&](std::size_t step) {
    const double l = curve_loss();
    check_finite_loss(l, step, rep.adapter);
    rep.loss_curve.push_back({step, l});
    const double v = val_acc();
    rep.val_curve.push_back(v);
    if (v > best_val) {
      best_val = v;
      best = adapter;
      rep.best_step = step;
      stale = 0;
      return false;
    }
    return cfg.early_stopping && ++stale >= cfg.patience;
  };

  bool stop = checkpoint(0);
  const bool trainable = !params.empty() && n_train > 0;
  for (std::size_t step = 1; step <= cfg.steps && !stop; ++step) {
    rep.steps_run = step;
    if (!trainable) {
      if (step % cfg.eval_every == 0 || step == cfg.steps) stop = checkpoint(step);
      continue;
    }
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < std::min(cfg.batch, n_train); ++k) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    zero_grads(params);
    Tape tape;
    const Var loss = loss_fn(tape, idx);
    check_finite_loss(loss.value()(0, 0), step, rep.adapter);
    tape.backward(loss);
    opt.step(lr_at(cfg, step - 1));
    if (step % cfg.eval_every == 0 || step == cfg.steps) stop = checkpoint(step);
  }
  adapter = best;
  rep.val_accuracy = std::max(0.0, best_val);
}

}  // namespace detail

/// Trains `adapter` on `data` over the frozen `model` and reports on the
/// restored best-validation state.
inline RunReport train(const Model& model, Adapter& adapter, const SyntheticTask& task, const Dataset& data,
                       const TrainConfig& cfg) {
  cfg.validate();
  RunReport rep;
  rep.task = task.name();
  rep.adapter = kind_name(adapter);
  rep.config = cfg;
  rep.base_checksum = checksum(model);
  rep.deployed_params = deployed_param_count(adapter);
  rep.trainable_params = trainable_count(adapter);

  std::vector<Example> train_set = data.train;
  if (cfg.train_limit > 0 && train_set.size() > cfg.train_limit) train_set.resize(cfg.train_limit);
  std::vector<const Example*> subset;
  for (std::size_t i = 0; i < std::min(cfg.loss_subset, train_set.size()); ++i) subset.push_back(&train_set[i]);
  const TokenBatch subset_batch = subset.empty() ? TokenBatch{} : make_batch(subset);

  detail::optimize(
      adapter, cfg, train_set.size(), rep,
      [&](Tape& t, const std::vector<std::size_t>& idx) {
        std::vector<const Example*> xs;
        for (std::size_t i : idx) xs.push_back(&train_set[i]);
        return batch_loss(t, model, adapter, make_batch(xs));
      },
      [&] {
        if (subset.empty()) return 0.0;
        Tape t(false);
        return batch_loss(t, model, adapter, subset_batch).value()(0, 0);
      },
      [&] { return evaluate(deploy(model, adapter), task, data.val).accuracy; });

  const EvalResult test = evaluate(deploy(model, adapter), task, data.test);
  rep.test_accuracy = test.accuracy;
  rep.mean_generation_length = test.mean_length;
  rep.max_generation_length = test.max_length;
  rep.backbone_intact = checksum(model) == rep.base_checksum;
  if (!rep.backbone_intact) throw std::logic_error("frozen backbone changed during training");
  return rep;
}

// ---------------------------------------------------------------------------
// rank1_classify (continuous contexts through one attention layer)

struct Rank1Task {
  LossHierarchyProblem base;  // frozen layer, direction u, targets e1/e2
  Rank1Split data;

  static Rank1Task make(std::uint64_t seed, std::size_t contexts = 200, std::size_t tokens = 8, std::size_t d = 8) {
    LossHierarchyConfig lc;
    lc.seed = seed;
    lc.d = d;
    Rank1Task task;
    task.base = make_loss_hierarchy_problem(lc);
    Rng rng(seed ^ 0x72616e6bULL);
    std::vector<Rank1Context> all;
    for (std::size_t c = 0; c < contexts; ++c) {
      Rank1Context ctx;
      Matrix a(tokens, 1);
      ctx.target = Matrix(tokens, d);
      for (std::size_t i = 0; i < tokens; ++i) {
        const bool positive = rng.integer(0, 1) == 1;
        a(i, 0) = (positive ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
        ctx.labels.push_back(positive ? 0 : 1);
        const Matrix& e = positive ? task.base.e1 : task.base.e2;
        std::copy(e.data().begin(), e.data().end(), ctx.target.row(i).begin());
      }
      ctx.x = matmul(a, task.base.u);
      all.push_back(std::move(ctx));
    }
    const std::size_t n_train = contexts * 70 / 100;
    const std::size_t n_val = contexts * 15 / 100;
    for (std::size_t i = 0; i < all.size(); ++i) {
      auto& dst = i < n_train ? task.data.train : i < n_train + n_val ? task.data.val : task.data.test;
      dst.push_back(std::move(all[i]));
    }
    return task;
  }

  const Model& model() const { return base.layer; }
};

/// Fraction of rows whose output is closer (in inner product) to their own target.
inline double rank1_accuracy(const Rank1Task& task, const Adapter& adapter, const std::vector<Rank1Context>& xs) {
  if (xs.empty()) return 0.0;
  const Deployment dep = deploy(task.model(), adapter);
  std::size_t correct = 0, total = 0;
  for (const auto& c : xs) {
    const Matrix y = run_forward(dep.model, c.x, dep.prefix_ptr(), context_attention()).hidden;
    const Matrix s1 = matmul(y, transpose(task.base.e1));
    const Matrix s2 = matmul(y, transpose(task.base.e2));
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const int pred = s1(i, 0) >= s2(i, 0) ? 0 : 1;
      correct += pred == c.labels[i];
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

inline Var rank1_loss(Tape& t, const Rank1Task& task, Adapter& adapter, const std::vector<const Rank1Context*>& xs) {
  const AdaptedBinding ab = bind_adapter(t, task.model(), adapter);
  std::optional<Var> total;
  for (const Rank1Context* c : xs) {
    const Var l = mse_loss(adapted_hidden(ab, t.constant_ref(c->x), context_attention()), t.constant_ref(c->target));
    total = total ? add(*total, l) : l;
  }
  return scale(*total, 1.0 / static_cast<double>(xs.size()));
}

inline RunReport train(const Rank1Task& task, Adapter& adapter, const TrainConfig& cfg) {
  cfg.validate();
  RunReport rep;
  rep.task = to_string(TaskKind::rank1_classify);
  rep.adapter = kind_name(adapter);
  rep.config = cfg;
  rep.loss_masking = "mse_all_rows";
  rep.base_checksum = checksum(task.model());
  rep.deployed_params = deployed_param_count(adapter);
  rep.trainable_params = trainable_count(adapter);
  const auto& train_set = task.data.train;
  const std::size_t n_train = cfg.train_limit > 0 ? std::min(cfg.train_limit, train_set.size()) : train_set.size();
  std::vector<const Rank1Context*> subset;
  for (std::size_t i = 0; i < std::min(cfg.loss_subset, n_train); ++i) subset.push_back(&train_set[i]);

  detail::optimize(
      adapter, cfg, n_train, rep,
      [&](Tape& t, const std::vector<std::size_t>& idx) {
        std::vector<const Rank1Context*> xs;
        for (std::size_t i : idx) xs.push_back(&train_set[i]);
        return rank1_loss(t, task, adapter, xs);
      },
      [&] {
        if (subset.empty()) return 0.0;
        Tape t(false);
        return rank1_loss(t, task, adapter, subset).value()(0, 0);
      },
      [&] { return rank1_accuracy(task, adapter, task.data.val); });

  rep.test_accuracy = rank1_accuracy(task, adapter, task.data.test);
  rep.backbone_intact = checksum(task.model()) == rep.base_checksum;
  if (!rep.backbone_intact) throw std::logic_error("frozen backbone changed during training");
  return rep;
}

/// Builds model, data and adapter for `task_name` and trains.
inline RunReport run_task(const std::string& task_name, const TrainConfig& cfg, std::uint64_t data_seed = 0) {
  const TaskKind kind = parse_task(task_name);
  if (kind == TaskKind::rank1_classify) {
    const Rank1Task task = Rank1Task::make(data_seed);
    TrainConfig c = cfg;
    Adapter a = make_adapter(task.model(), c);
    return train(task, a, c);
  }
  const SyntheticTask task = SyntheticTask::make(kind);
  const Model model = harness_model(task, cfg.model_seed);
  const Dataset data = task.sample(data_seed);
  Adapter a = make_adapter(model, cfg, example_sequences(data.train));
  return train(model, a, task, data, cfg);
}

// ---------------------------------------------------------------------------
// Sweeps

struct BudgetRow {
  std::string adapter;
  std::size_t target_budget = 0;
  std::size_t size = 0;
  std::size_t deployed_params = 0;
  bool matched = true;  // within 10% of the target
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Unit deployed cost of one m (prefix/prompt) or one r (LoRA).
inline std::size_t budget_unit(const ModelConfig& c, const std::string& adapter) {
  if (adapter == "prefix" || adapter == "prefix_reparam") return 2 * c.layers * c.d;
  if (adapter == "prompt") return c.d;
  if (adapter == "lora_qk") return c.layers * 2 * 2 * c.d;
  if (adapter == "lora_qkv") return c.layers * 3 * 2 * c.d;
  throw std::invalid_argument("budget sweep: adapter '" + adapter + "' has no size knob");
}

/// Nearest achievable size (>= 1) for a deployed-parameter budget.
inline std::size_t size_for_budget(const ModelConfig& c, const std::string& adapter, std::size_t budget) {
  const std::size_t unit = budget_unit(c, adapter);
  return std::max<std::size_t>(1, (budget + unit / 2) / unit);
}

inline std::vector<BudgetRow> budget_sweep(const std::string& task_name, std::vector<std::size_t> budgets,
                                           const std::vector<std::string>& adapters, const TrainConfig& base,
                                           std::uint64_t data_seed = 0) {
  std::sort(budgets.begin(), budgets.end());
  const SyntheticTask task = SyntheticTask::make(parse_task(task_name));
  const Model model = harness_model(task, base.model_seed);
  const Dataset data = task.sample(data_seed);
  std::vector<BudgetRow> rows;
  for (std::size_t b : budgets) {
    if (b == 0) {
      TrainConfig cfg = base;
      cfg.adapter = "none";
      cfg.steps = 0;
      Adapter none = std::monostate{};
      const RunReport r = train(model, none, task, data, cfg);
      rows.push_back({"none", 0, 0, 0, true, r.val_accuracy, r.test_accuracy});
      continue;
    }
    for (const auto& kind : adapters) {
      TrainConfig cfg = base;
      cfg.adapter = kind;
      cfg.size = size_for_budget(model.config, kind, b);
      Adapter a = make_adapter(model, cfg, example_sequences(data.train));
      const RunReport r = train(model, a, task, data, cfg);
      const auto diff = r.deployed_params > b ? r.deployed_params - b : b - r.deployed_params;
      rows.push_back({kind, b, cfg.size, r.deployed_params, 10 * diff <= b, r.val_accuracy, r.test_accuracy});
    }
  }
  return rows;
}

struct DataRow {
  std::string method;  // base | icl | prefix_from_demos | prefix_trained | prefix_demo_init_trained
  std::size_t examples = 0;
  std::size_t demos_in_context = 0;
  double test_accuracy = 0.0;
  double max_logit_diff = 0.0;  // icl vs prefix_from_demos only
};

struct DataSweepOptions {
  std::size_t max_icl_demos = 16;  // demos placed in context / in the initial cache
  std::size_t prefix_m = 16;
};

/// Max |logit difference| between k-shot ICL and the demo-cache prefix over `examples`.
inline double icl_prefix_logit_gap(const Model& model, const std::vector<int>& demo, const std::vector<Example>& examples) {
  double worst = 0.0;
  for (const auto& e : examples) worst = std::max(worst, icl_equivalence_check(model, demo, e.prompt));
  return worst;
}

inline std::vector<DataRow> data_sweep(const std::string& task_name, std::vector<std::size_t> sizes,
                                       const TrainConfig& base, const DataSweepOptions& opts = {},
                                       std::uint64_t data_seed = 0) {
  std::sort(sizes.begin(), sizes.end());
  const SyntheticTask task = SyntheticTask::make(parse_task(task_name));
  const Model model = harness_model(task, base.model_seed);
  const Dataset data = task.sample(data_seed);
  const Deployment plain = deploy(model, std::monostate{});
  std::vector<DataRow> rows;
  for (std::size_t k : sizes) {
    k = std::min(k, data.train.size());
    if (k == 0) {
      rows.push_back({"base", 0, 0, evaluate(plain, task, data.test).accuracy, 0.0});
      continue;
    }
    const std::size_t n_demo = std::min(k, opts.max_icl_demos);
    std::vector<int> demo;
    for (std::size_t i = 0; i < n_demo; ++i) {
      const auto s = data.train[i].full();
      demo.insert(demo.end(), s.begin(), s.end());
    }
    rows.push_back({"icl", k, n_demo, evaluate(plain, task, data.test, demo).accuracy, 0.0});

    const std::vector<std::vector<int>> demo_list{demo};
    Adapter from_demos = init_prefix(model, PrefixInit{InitMode::from_demo_cache, demo.size(), base.seed, false}, demo_list);
    rows.push_back({"prefix_from_demos", k, n_demo, evaluate(deploy(model, from_demos), task, data.test).accuracy,
                    icl_prefix_logit_gap(model, demo, data.test)});

    TrainConfig cfg = base;
    cfg.adapter = "prefix";
    cfg.size = opts.prefix_m;
    cfg.train_limit = k;
    Adapter random_init = make_adapter(model, cfg);
    rows.push_back({"prefix_trained", k, 0, train(model, random_init, task, data, cfg).test_accuracy, 0.0});

    cfg.init = "from_demo_cache";
    Adapter demo_init = init_prefix(model, PrefixInit{InitMode::from_demo_cache, opts.prefix_m, cfg.seed, false}, demo_list);
    rows.push_back({"prefix_demo_init_trained", k, n_demo, train(model, demo_init, task, data, cfg).test_accuracy, 0.0});
  }
  return rows;
}

struct AblationRow {
  std::string arm;  // direct_random | reparam_random | direct_text
  std::size_t m = 0;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double materialized_test_accuracy = 0.0;  // reparam arm: accuracy after dropping the MLP
};

struct AblationSummary {
  std::size_t m = 0;
  std::size_t reparam_wins = 0, direct_wins = 0, reparam_ties = 0;
  std::size_t text_wins = 0, random_wins = 0, text_ties = 0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summary;
};

inline AblationResult ablation_suite(const std::string& task_name, const std::vector<std::size_t>& budgets_m,
                                     const std::vector<std::uint64_t>& seeds, const TrainConfig& base,
                                     std::uint64_t data_seed = 0) {
  const SyntheticTask task = SyntheticTask::make(parse_task(task_name));
  const Model model = harness_model(task, base.model_seed);
  const Dataset data = task.sample(data_seed);
  const auto pool = example_sequences(data.train);
  AblationResult out;
  for (std::size_t m : budgets_m) {
    AblationSummary s;
    s.m = m;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.size = m;
      cfg.seed = seed;

      cfg.adapter = "prefix";
      cfg.init = "random";
      Adapter direct = make_adapter(model, cfg);
      const double acc_direct = train(model, direct, task, data, cfg).test_accuracy;

      cfg.adapter = "prefix_reparam";
      Adapter reparam = make_adapter(model, cfg);
      const double acc_reparam = train(model, reparam, task, data, cfg).test_accuracy;
      const Adapter materialized = std::get<PrefixAdapter>(reparam).materialize();
      const double acc_mat = evaluate(deploy(model, materialized), task, data.test).accuracy;

      cfg.adapter = "prefix";
      cfg.init = "from_text_demos";
      Adapter text = make_adapter(model, cfg, pool);
      const double acc_text = train(model, text, task, data, cfg).test_accuracy;

      out.rows.push_back({"direct_random", m, seed, acc_direct, acc_direct});
      out.rows.push_back({"reparam_random", m, seed, acc_reparam, acc_mat});
      out.rows.push_back({"direct_text", m, seed, acc_text, acc_text});
      (acc_reparam > acc_direct ? s.reparam_wins : acc_reparam < acc_direct ? s.direct_wins : s.reparam_ties)++;
      (acc_text > acc_direct ? s.text_wins : acc_text < acc_direct ? s.random_wins : s.text_ties)++;
    }
    out.summary.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tables

inline std::string budget_csv(const std::vector<BudgetRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "adapter,target_budget,size,deployed_params,matched,val_accuracy,test_accuracy\n";
  for (const auto& r : rows) {
    out << r.adapter << ',' << r.target_budget << ',' << r.size << ',' << r.deployed_params << ',' << (r.matched ? 1 : 0)
        << ',' << r.val_accuracy << ',' << r.test_accuracy << '\n';
  }
  return out.str();
}

inline std::string data_csv(const std::vector<DataRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "method,examples,demos_in_context,test_accuracy,max_logit_diff\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.examples << ',' << r.demos_in_context << ',' << r.test_accuracy << ',' << r.max_logit_diff
        << '\n';
  }
  return out.str();
}

inline std::string ablation_csv(const AblationResult& res) {
  std::ostringstream out;
  out.precision(17);
  out << "arm,m,seed,test_accuracy,materialized_test_accuracy\n";
  for (const auto& r : res.rows) {
    out << r.arm << ',' << r.m << ',' << r.seed << ',' << r.test_accuracy << ',' << r.materialized_test_accuracy << '\n';
  }
  return out.str();
}

}  // namespace prefixlab
