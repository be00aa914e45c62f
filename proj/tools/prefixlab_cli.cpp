// prefixlab: one entry point for every experiment.
//
//   prefixlab theory --preset loss-hierarchy --seed 7
//   prefixlab train  --task keyed_recall --adapter prefix --size 16
//   prefixlab sweep  --kind budget --budgets 0,512,2048
//   prefixlab probe  --task keyed_recall --adapter prefix --init from_demo_cache
//   prefixlab cost   --L 2 --d 2 --d_ff 0 --vocab 0 --S 1 --m 0 --T 0
//   prefixlab report runs/train-* runs/cost-*
//
// Exit codes: 0 success, 1 usage or schema error, 2 data error (missing or
// corrupt input), 3 violated assertion (failure.json names the invariant).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prefixlab/cost.hpp"
#include "prefixlab/geometry.hpp"
#include "prefixlab/harness.hpp"
#include "prefixlab/serialize.hpp"
#include "prefixlab/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefixlab;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitAssertion = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AssertionFailure : std::runtime_error {
  AssertionFailure(std::string invariant, std::string anchor, json detail)
      : std::runtime_error(invariant), invariant(std::move(invariant)), anchor(std::move(anchor)),
        detail(std::move(detail)) {}
  std::string invariant;
  std::string anchor;
  json detail;
};

void require(bool ok, const std::string& invariant, const std::string& anchor, const json& detail) {
  if (!ok) throw AssertionFailure(invariant, anchor, detail);
}

// ---------------------------------------------------------------------------
// Config schema: every subcommand has a defaults document; its keys are the
// whole schema, and each key is also a --flag.

const std::map<std::string, json>& schemas() {
  static const std::map<std::string, json> s = {
      {"theory",
       {{"preset", "loss-hierarchy"}, {"seed", 0},       {"trials", 100},  {"steps", 20000}, {"lr", 1e-2},
        {"n1", 4},                    {"n2", 4},         {"d", 8},         {"r", 2},         {"m", 2},
        {"tau", 50.0},                {"pt_starts", 12}, {"tolerance", 1e-6}}},
      {"train",
       {{"task", "keyed_recall"}, {"adapter", "prefix"}, {"size", 16},    {"init", "random"},  {"steps", 5000},
        {"batch", 32},            {"lr", 1e-2},          {"schedule", "cosine"}, {"seed", 0},  {"model_seed", 1234},
        {"data_seed", 0},         {"eval_every", 100},   {"patience", 10}, {"train_limit", 0}, {"save_adapter", true}}},
      {"sweep",
       {{"kind", "budget"},
        {"task", "keyed_recall"},
        {"budgets", json::array({0, 512, 2048})},
        {"adapters", json::array({"prefix", "lora_qkv"})},
        {"sizes", json::array({0, 1, 4, 16, 100})},
        {"m_grid", json::array({4, 16})},
        {"seeds", json::array({0, 1, 2, 3, 4, 5, 6, 7, 8, 9})},
        {"steps", 1000},
        {"batch", 32},
        {"lr", 1e-2},
        {"seed", 0},
        {"model_seed", 1234},
        {"data_seed", 0},
        {"eval_every", 100}}},
      {"probe",
       {{"task", "keyed_recall"}, {"adapter", "prefix"}, {"size", 16}, {"init", "from_demo_cache"},
        {"adapter_path", ""},     {"layer", -1},         {"threshold", 0.9}, {"eval_size", 32},
        {"seed", 0},              {"model_seed", 1234},  {"data_seed", 0}}},
      {"cost",
       {{"L", 1}, {"d", 1}, {"d_ff", 0}, {"vocab", 0}, {"S", 1}, {"T", 0}, {"m", 0}, {"n_demo", 0}}},
  };
  return s;
}

/// Parses a flag string into the type of the schema default.
json parse_flag(const std::string& key, const json& def, const std::string& text) {
  try {
    if (def.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw UsageError("expected true/false");
    }
    if (def.is_number_integer()) {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw UsageError("expected an integer");
      return v;
    }
    if (def.is_number()) {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw UsageError("expected a number");
      return v;
    }
    if (def.is_array()) {
      json arr = json::array();
      const json elem = def.empty() ? json(0) : def.front();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) arr.push_back(parse_flag(key, elem, item));
      }
      return arr;
    }
    return text;
  } catch (const std::logic_error&) {
    throw UsageError("--" + key + ": cannot parse '" + text + "'");
  }
}

bool same_kind(const json& def, const json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    const json elem = def.empty() ? json(0) : def.front();
    for (const auto& x : v) {
      if (!same_kind(elem, x)) return false;
    }
    return true;
  }
  return v.is_string();
}

/// defaults <- config file <- flags, rejecting unknown keys and wrong types.
json resolve_config(const std::string& sub, const std::string& config_path, const std::map<std::string, std::string>& flags) {
  const json& schema = schemas().at(sub);
  json cfg = schema;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw UsageError("cannot open config file '" + config_path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    json file;
    try {
      file = json::parse(buf.str());
    } catch (const json::parse_error& e) {
      throw UsageError("config '" + config_path + "' is not valid JSON: " + e.what());
    }
    if (!file.is_object() || file.empty()) throw UsageError("config '" + config_path + "' is empty");
    for (const auto& [k, v] : file.items()) {
      if (!schema.contains(k)) throw UsageError("unknown config key '" + k + "' for " + sub);
      if (!same_kind(schema[k], v)) throw UsageError("config key '" + k + "' has the wrong type");
      cfg[k] = v;
    }
  }
  for (const auto& [k, text] : flags) cfg[k] = parse_flag(k, schema[k], text);
  return cfg;
}

/// FNV-1a over the canonical (key-sorted, compact) JSON text.
std::string config_hash(const json& resolved) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : resolved.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

TrainConfig train_config_from(const json& c) {
  TrainConfig t;
  t.adapter = c.value("adapter", t.adapter);
  t.size = c.value("size", t.size);
  t.init = c.value("init", t.init);
  t.steps = c.at("steps").get<std::size_t>();
  t.batch = c.at("batch").get<std::size_t>();
  t.lr = c.at("lr").get<double>();
  t.schedule = parse_schedule(c.value("schedule", std::string("cosine")));
  t.seed = c.at("seed").get<std::uint64_t>();
  t.model_seed = c.at("model_seed").get<std::uint64_t>();
  t.eval_every = c.at("eval_every").get<std::size_t>();
  t.patience = c.value("patience", t.patience);
  t.train_limit = c.value("train_limit", t.train_limit);
  return t;
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns the result document; files beyond result.json are
// written into `dir`.

json run_theory(const json& c, const fs::path&) {
  const std::string preset = c.at("preset");
  const auto seed = c.at("seed").get<std::uint64_t>();
  const double tol = c.at("tolerance").get<double>();
  json out{{"preset", preset}};
  if (preset == "loss-hierarchy") {
    LossHierarchyConfig lc;
    lc.seed = seed;
    lc.n1 = c.at("n1");
    lc.n2 = c.at("n2");
    lc.d = c.at("d");
    lc.r = c.at("r");
    lc.m = c.at("m");
    lc.steps = c.at("steps");
    lc.lr = c.at("lr");
    lc.tau = c.at("tau");
    lc.pt_starts = c.at("pt_starts");
    const LossHierarchyResult r = loss_hierarchy_experiment(lc);
    out["qk_floor"] = r.qk_floor;
    out["qkv_floor"] = r.qkv_floor;
    out["qkv_floor_svd"] = r.qkv_floor_svd;
    out["qk_final"] = r.qk.final_loss;
    out["qkv_final"] = r.qkv.final_loss;
    out["pt_final"] = r.pt.final_loss;
    out["pt_start_losses"] = r.pt_start_losses;
    out["pt_best_start"] = r.pt_best_start;
    out["analytic_pt_loss"] = r.analytic_pt_loss;
    out["tau"] = lc.tau;
    require(r.qk.final_loss >= r.qk_floor - tol, "qk_lora_loss_floor", "loss hierarchy: QK-LoRA floor", out);
    require(r.qkv.final_loss >= r.qkv_floor - tol, "qkv_lora_loss_floor", "loss hierarchy: QKV-LoRA floor", out);
    require(std::abs(r.qkv_floor_svd - r.qkv_floor) <= 1e-9, "eckart_young_floor", "loss hierarchy: rank-1 floor", out);
    require(r.pt.final_loss <= 1e-2, "prefix_trained_loss", "loss hierarchy: trained prefix", out);
    require(r.analytic_pt_loss <= 1e-4, "prefix_analytic_loss", "loss hierarchy: closed-form prefix", out);
  } else if (preset == "realizability") {
    Rng rng(seed);
    const std::size_t trials = c.at("trials");
    double worst_dist = 0.0;
    std::size_t rank_violations = 0, novelty_violations = 0;
    for (std::size_t i = 0; i < trials; ++i) {
      const auto rc = random_realizability_case(rng, 4 + i % 9, true);
      const Matrix delta = construct_lora_delta(rc.setting, rc.u, rc.r);
      worst_dist = std::max(worst_dist, principal_angle_distance(novelty_subspace(rc.setting, delta), rc.u));
      rank_violations += numerical_rank(delta) > rc.r;
    }
    for (std::size_t i = 0; i < trials; ++i) {
      const auto rc = random_realizability_case(rng, 4 + i % 9, false);
      const std::size_t best = brute_force_max_novelty(rc.setting, NoveltyMethod::lora(rc.r), 2000, rng);
      novelty_violations += best > std::min(rc.setting.t_x, rc.r);
    }
    out["trials"] = trials;
    out["max_principal_angle_distance"] = worst_dist;
    out["rank_violations"] = rank_violations;
    out["novelty_violations"] = novelty_violations;
    require(worst_dist <= 1e-8 && rank_violations == 0, "lora_construction", "constructive realizability", out);
    require(novelty_violations == 0, "carrier_bottleneck", "LoRA novelty cap", out);
  } else if (preset == "caps") {
    std::size_t cells = 0;
    json grid = json::array();
    for (std::size_t t = 0; t <= 6; ++t)
      for (std::size_t r = 0; r <= 6; ++r)
        for (std::size_t m = 0; m <= 6; ++m)
          for (std::size_t nu = 0; nu <= 6; ++nu) {
            const CapsReport cr = expressivity_caps(t, r, m, nu);
            grid.push_back({t, r, m, nu, cr.d_lora, cr.d_pt, to_string(cr.relation)});
            ++cells;
          }
    // Randomized oracle on sampled cells that admit a setting with d <= 12.
    Rng rng(seed);
    std::size_t sampled = 0, agree = 0;
    while (sampled < 50) {
      const auto t = static_cast<std::size_t>(rng.integer(0, 6)), r = static_cast<std::size_t>(rng.integer(0, 6));
      const auto m = static_cast<std::size_t>(rng.integer(0, 6)), nu = static_cast<std::size_t>(rng.integer(0, 6));
      const auto setting = setting_for_cell(rng, t, nu);
      if (!setting) continue;
      ++sampled;
      const CapsReport cr = expressivity_caps(t, r, m, nu);
      agree += brute_force_max_novelty(*setting, NoveltyMethod::lora(r), 1000, rng) == cr.d_lora &&
               brute_force_max_novelty(*setting, NoveltyMethod::prefix(m), 1000, rng) == cr.d_pt;
    }
    out["cells"] = cells;
    out["oracle_cells"] = sampled;
    out["oracle_agree"] = agree;
    out["grid"] = grid;
    require(agree == sampled, "caps_oracle", "dimension caps match randomized oracle", out);
  } else if (preset == "qk-lock") {
    Rng rng(seed);
    const std::size_t trials = c.at("trials");
    ModelConfig mc = ModelConfig::attention_only(c.at("d").get<std::size_t>());
    mc.weight_std = 1.0;
    const Model layer = Model::random(mc, rng.next());
    const Matrix x = matmul(rng.normal_matrix(6, 2), rng.normal_matrix(2, mc.d));
    const auto qk = qk_lock_residuals(layer, x, trials, rng.next(), PerturbTarget::query_key);
    const auto v = qk_lock_residuals(layer, x, trials, rng.next(), PerturbTarget::value);
    const double worst = qk.empty() ? 0.0 : *std::max_element(qk.begin(), qk.end());
    const auto moved = std::count_if(v.begin(), v.end(), [](double x) { return x > 0.05; });
    out["trials"] = trials;
    out["max_qk_residual"] = worst;
    out["value_control_fraction_moved"] = trials == 0 ? 0.0 : static_cast<double>(moved) / static_cast<double>(trials);
    require(worst <= 1e-6, "qk_locking", "query/key perturbations stay in S_X", out);
    require(out["value_control_fraction_moved"].get<double>() >= 0.95, "value_control", "W_V perturbations leave S_X", out);
  } else {
    throw UsageError("unknown theory preset '" + preset + "' (loss-hierarchy | realizability | caps | qk-lock)");
  }
  return out;
}

json run_train(const json& c, const fs::path& dir) {
  const TrainConfig tc = train_config_from(c);
  const std::string task_name = c.at("task");
  const auto data_seed = c.at("data_seed").get<std::uint64_t>();
  RunReport rep;
  Adapter adapter;
  if (parse_task(task_name) == TaskKind::rank1_classify) {
    const Rank1Task task = Rank1Task::make(data_seed);
    adapter = make_adapter(task.model(), tc);
    rep = train(task, adapter, tc);
  } else {
    const SyntheticTask task = SyntheticTask::make(parse_task(task_name));
    const Model model = harness_model(task, tc.model_seed);
    const Dataset data = task.sample(data_seed);
    adapter = make_adapter(model, tc, example_sequences(data.train));
    rep = train(model, adapter, task, data, tc);
  }
  if (c.at("save_adapter").get<bool>()) save_adapter((dir / "adapter.json").string(), adapter);
  require(rep.backbone_intact, "frozen_backbone", "base weights unchanged by training", to_json(rep));
  return to_json(rep);
}

json run_sweep(const json& c, const fs::path& dir) {
  const std::string kind = c.at("kind");
  const std::string task = c.at("task");
  TrainConfig base;
  base.steps = c.at("steps");
  base.batch = c.at("batch");
  base.lr = c.at("lr");
  base.seed = c.at("seed");
  base.model_seed = c.at("model_seed");
  base.eval_every = c.at("eval_every");
  const auto data_seed = c.at("data_seed").get<std::uint64_t>();
  json out{{"kind", kind}, {"task", task}};
  if (kind == "budget") {
    const auto rows = budget_sweep(task, c.at("budgets").get<std::vector<std::size_t>>(),
                                   c.at("adapters").get<std::vector<std::string>>(), base, data_seed);
    write_text((dir / "budget.csv").string(), budget_csv(rows));
    json arr = json::array();
    bool matched = true;
    for (const auto& r : rows) {
      arr.push_back({{"adapter", r.adapter}, {"target_budget", r.target_budget}, {"size", r.size},
                     {"deployed_params", r.deployed_params}, {"matched", r.matched},
                     {"val_accuracy", r.val_accuracy}, {"test_accuracy", r.test_accuracy}});
      matched = matched && r.matched;
    }
    out["rows"] = arr;
    out["all_matched"] = matched;
  } else if (kind == "data") {
    auto sizes = c.at("sizes").get<std::vector<std::size_t>>();
    std::size_t lo = SIZE_MAX, hi = 0;
    for (std::size_t s : sizes) {
      if (s > 0) lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    if (lo == SIZE_MAX || hi < 100 * lo) throw UsageError("data sweep sizes must span at least two orders of magnitude");
    const auto rows = data_sweep(task, sizes, base, {}, data_seed);
    write_text((dir / "data.csv").string(), data_csv(rows));
    json arr = json::array();
    double worst_gap = 0.0;
    bool acc_equal = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      arr.push_back({{"method", r.method}, {"examples", r.examples}, {"demos_in_context", r.demos_in_context},
                     {"test_accuracy", r.test_accuracy}, {"max_logit_diff", r.max_logit_diff}});
      if (r.method == "prefix_from_demos") {
        worst_gap = std::max(worst_gap, r.max_logit_diff);
        acc_equal = acc_equal && i > 0 && rows[i - 1].method == "icl" && rows[i - 1].test_accuracy == r.test_accuracy;
      }
    }
    out["rows"] = arr;
    out["max_icl_prefix_logit_diff"] = worst_gap;
    require(worst_gap <= 1e-10 && acc_equal, "icl_prefix_equivalence", "demo-cache prefix equals in-context demos", out);
  } else if (kind == "ablation") {
    const auto res = ablation_suite(task, c.at("m_grid").get<std::vector<std::size_t>>(),
                                    c.at("seeds").get<std::vector<std::uint64_t>>(), base, data_seed);
    write_text((dir / "ablation.csv").string(), ablation_csv(res));
    json rows = json::array(), summary = json::array();
    bool identity = true;
    for (const auto& r : res.rows) {
      rows.push_back({{"arm", r.arm}, {"m", r.m}, {"seed", r.seed}, {"test_accuracy", r.test_accuracy},
                      {"materialized_test_accuracy", r.materialized_test_accuracy}});
      identity = identity && r.test_accuracy == r.materialized_test_accuracy;
    }
    for (const auto& s : res.summary) {
      summary.push_back({{"m", s.m},
                         {"reparam_wins", s.reparam_wins},
                         {"direct_wins", s.direct_wins},
                         {"reparam_ties", s.reparam_ties},
                         {"text_wins", s.text_wins},
                         {"random_wins", s.random_wins},
                         {"text_ties", s.text_ties}});
    }
    out["rows"] = rows;
    out["summary"] = summary;
    require(identity, "materialization_identity", "reparam prefix equals its materialized block", out);
  } else {
    throw UsageError("unknown sweep kind '" + kind + "' (budget | data | ablation)");
  }
  return out;
}

json run_probe(const json& c, const fs::path& dir) {
  const SyntheticTask task = SyntheticTask::make(parse_task(c.at("task")));
  const Model model = harness_model(task, c.at("model_seed").get<std::uint64_t>());
  const Dataset data = task.sample(c.at("data_seed").get<std::uint64_t>());
  Adapter adapter;
  const std::string path = c.at("adapter_path");
  if (!path.empty()) {
    if (!fs::exists(path)) throw DataError("adapter checkpoint '" + path + "' not found");
    adapter = load_adapter(path);
  } else {
    TrainConfig tc;
    tc.adapter = c.at("adapter");
    tc.size = c.at("size");
    tc.init = c.at("init");
    tc.seed = c.at("seed");
    adapter = make_adapter(model, tc, example_sequences(data.train));
  }
  ProbeOptions opts;
  opts.threshold = c.at("threshold");
  if (c.at("layer").get<long long>() >= 0) opts.layer = c.at("layer").get<std::size_t>();
  std::vector<std::vector<int>> batch;
  for (std::size_t i = 0; i < std::min(c.at("eval_size").get<std::size_t>(), data.test.size()); ++i) {
    batch.push_back(data.test[i].full());
  }
  json report = probe_report(model, adapter, batch, opts);
  std::ostringstream spectra;
  spectra << "which,index,mass,cumulative\n";
  for (const char* which : {"base", "adapted"}) {
    const auto& s = report["last_layer"][which];
    for (std::size_t i = 0; i < s["masses"].size(); ++i) {
      spectra << which << ',' << (i + 1) << ',' << std::setprecision(17) << s["masses"][i].get<double>() << ','
              << s["cumulative"][i].get<double>() << '\n';
    }
  }
  write_text((dir / "spectrum.csv").string(), spectra.str());
  return report;
}

json run_cost(const json& c, const fs::path&) {
  CostConfig cc;
  auto get = [&](const char* k) {
    const auto v = c.at(k).get<long long>();
    if (v < 0) throw UsageError(std::string("--") + k + " must be non-negative");
    return static_cast<std::uint64_t>(v);
  };
  cc.L = get("L");
  cc.d = get("d");
  cc.d_ff = get("d_ff");
  cc.vocab = get("vocab");
  cc.S = get("S");
  cc.T = get("T");
  cc.m = get("m");
  cc.n_demo = get("n_demo");
  if (cc.m > 0 && cc.n_demo > 0) throw UsageError("--m and --n_demo are mutually exclusive");
  const CostReport r = cost_report(cc);
  auto terms = [](const CostTerms& t) {
    return json{{"projections", t.projections}, {"attention", t.attention}, {"ffn", t.ffn}, {"head", t.head},
                {"total", t.total()}};
  };
  return json{{"context", cc.context()},
              {"prefill", r.prefill_flops},
              {"decode", r.decode_flops},
              {"total", r.total_flops},
              {"prefill_terms", terms(r.prefill_terms)},
              {"decode_terms", terms(r.decode_terms)}};
}

// ---------------------------------------------------------------------------
// report

/// Flattens top-level scalars of a result document into string cells.
std::map<std::string, std::string> scalar_cells(const json& j) {
  std::map<std::string, std::string> cells;
  for (const auto& [k, v] : j.items()) {
    if (v.is_primitive()) cells[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return cells;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

int run_report(const std::vector<std::string>& run_dirs, const fs::path& out_dir) {
  std::map<std::string, std::map<std::string, json>> groups;  // subcommand -> hash -> row
  json warnings = json::array();
  for (const auto& d : run_dirs) {
    try {
      const json cfg = read_json((fs::path(d) / "config.json").string());
      const json res = read_json((fs::path(d) / "result.json").string());
      const std::string sub = cfg.at("subcommand");
      const std::string hash = cfg.at("config_hash");
      if (res.value("config_hash", std::string()) != hash) throw DataError("config hash mismatch");
      if (!groups[sub].count(hash)) groups[sub][hash] = res;
    } catch (const std::exception& e) {
      warnings.push_back({{"run_dir", d}, {"warning", std::string("skipped corrupt run: ") + e.what()}});
    }
  }
  fs::create_directories(out_dir);
  json summary{{"sections", json::object()}, {"warnings", warnings}};
  for (const auto& [sub, rows] : groups) {
    std::set<std::string> columns;
    for (const auto& [hash, res] : rows) {
      for (const auto& [k, v] : scalar_cells(res)) columns.insert(k);
    }
    columns.erase("config_hash");
    std::ostringstream csv;
    csv << "config_hash";
    for (const auto& col : columns) csv << ',' << csv_escape(col);
    csv << '\n';
    json section = json::array();
    for (const auto& [hash, res] : rows) {
      const auto cells = scalar_cells(res);
      csv << hash;
      for (const auto& col : columns) {
        const auto it = cells.find(col);
        csv << ',' << (it == cells.end() ? "" : csv_escape(it->second));
      }
      csv << '\n';
      section.push_back(res);
    }
    write_text((out_dir / ("report_" + sub + ".csv")).string(), csv.str());
    summary["sections"][sub] = section;
  }
  write_text((out_dir / "report.json").string(), summary.dump(2) + "\n");
  for (const auto& w : warnings) std::cerr << "warning: " << w.dump() << '\n';
  std::cout << (out_dir / "report.json").string() << '\n';
  return 0;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

int execute(const std::string& sub, const json& cfg, const fs::path& out_root) {
  json resolved = cfg;
  resolved["subcommand"] = sub;
  const std::string hash = config_hash(resolved);
  resolved["config_hash"] = hash;
  const fs::path dir = out_root / (sub + "-" + hash);
  fs::create_directories(dir);
  write_text((dir / "config.json").string(), resolved.dump(2) + "\n");
  fs::remove(dir / "failure.json");

  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  auto write_timing = [&] {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text((dir / "timing.json").string(),
               json{{"started_utc", started}, {"finished_utc", utc_now()}, {"wall_seconds", secs}}.dump(2) + "\n");
  };
  try {
    json result;
    if (sub == "theory") result = run_theory(cfg, dir);
    else if (sub == "train") result = run_train(cfg, dir);
    else if (sub == "sweep") result = run_sweep(cfg, dir);
    else if (sub == "probe") result = run_probe(cfg, dir);
    else result = run_cost(cfg, dir);
    result["config_hash"] = hash;
    write_text((dir / "result.json").string(), result.dump(2) + "\n");
    write_timing();
    std::cout << result.dump(2) << '\n';
    return 0;
  } catch (const AssertionFailure& f) {
    json detail = f.detail;
    detail["config_hash"] = hash;
    write_text((dir / "result.json").string(), detail.dump(2) + "\n");
    const json failure{{"invariant", f.invariant}, {"anchor", f.anchor}, {"config_hash", hash}};
    write_text((dir / "failure.json").string(), failure.dump(2) + "\n");
    write_timing();
    std::cerr << "assertion failed: " << failure.dump() << '\n';
    return kExitAssertion;
  } catch (const NumericalError& e) {
    const json failure{{"invariant", "finite_loss"}, {"anchor", "training diverged"}, {"message", e.what()},
                       {"config_hash", hash}};
    write_text((dir / "failure.json").string(), failure.dump(2) + "\n");
    write_timing();
    std::cerr << "assertion failed: " << failure.dump() << '\n';
    return kExitAssertion;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prefixlab: prefix tuning, LoRA and in-context learning experiments"};
  app.require_subcommand(1);
  std::string out_root;
  if (const char* env = std::getenv("PREFIXLAB_OUT")) out_root = env;
  if (out_root.empty()) out_root = "runs";

  std::map<std::string, std::string> config_paths;
  std::map<std::string, std::map<std::string, std::string>> flag_text;
  std::map<std::string, CLI::App*> subs;
  const std::map<std::string, std::string> help = {
      {"theory", "expressivity checks (presets: loss-hierarchy, realizability, caps, qk-lock)"},
      {"train", "train one adapter on a synthetic task"},
      {"sweep", "budget, data or ablation sweep"},
      {"probe", "representation-geometry probes"},
      {"cost", "analytic prefill/decode flop counts"}};
  for (const auto& [name, schema] : schemas()) {
    CLI::App* s = app.add_subcommand(name, help.at(name));
    s->add_option("--config", config_paths[name], "JSON config file; flags override its values");
    s->add_option("--out", out_root, "output root (default $PREFIXLAB_OUT or ./runs)");
    for (const auto& [key, def] : schema.items()) {
      s->add_option("--" + key, flag_text[name][key], "default " + def.dump());
    }
    subs[name] = s;
  }
  std::vector<std::string> report_dirs;
  CLI::App* report = app.add_subcommand("report", "consolidate run directories into CSV + JSON");
  report->add_option("run_dirs", report_dirs, "run directories")->required();
  report->add_option("--out", out_root, "directory for report.json and report_<subcommand>.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (report->parsed()) return run_report(report_dirs, out_root);
    for (const auto& [name, s] : subs) {
      if (!s->parsed()) continue;
      std::map<std::string, std::string> given;
      for (const auto& [key, text] : flag_text[name]) {
        if (s->count("--" + key) > 0) given[key] = text;
      }
      const json cfg = resolve_config(name, config_paths[name], given);
      return execute(name, cfg, out_root);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const json::exception& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
