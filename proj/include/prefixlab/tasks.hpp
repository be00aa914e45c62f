#pragma once

// Desk-scale synthetic tasks. Every token task has a closed-form solver that
// serves as the label oracle, and the example universe is split into disjoint
// train/val/test sets by seed.

#include <cstdint>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefixlab/random.hpp"

namespace prefixlab {

struct Example {
  std::vector<int> prompt;
  std::vector<int> answer;  // ends with the task's stop token

  std::vector<int> full() const {
    std::vector<int> s = prompt;
    s.insert(s.end(), answer.begin(), answer.end());
    return s;
  }
  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> train, val, test;
};

enum class TaskKind { keyed_recall, modular_add, copy_reverse, rank1_classify };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::keyed_recall: return "keyed_recall";
    case TaskKind::modular_add: return "modular_add";
    case TaskKind::copy_reverse: return "copy_reverse";
    case TaskKind::rank1_classify: return "rank1_classify";
  }
  return "?";
}

inline TaskKind parse_task(const std::string& s) {
  for (TaskKind k : {TaskKind::keyed_recall, TaskKind::modular_add, TaskKind::copy_reverse, TaskKind::rank1_classify}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown task '" + s + "'");
}

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
};

/// Token-level task description.
struct SyntheticTask {
  TaskKind kind = TaskKind::keyed_recall;
  std::size_t vocab = 0;
  int stop = 0;
  bool positional = false;
  SplitFractions split{};

  std::string name() const { return to_string(kind); }

  // keyed_recall layout: keys [0,8), values [8,16), fillers [16,24), stop 24.
  static constexpr int kKeys = 8;
  static constexpr int kFillers = 8;
  // modular_add layout: digits [0,p), '+' = p, '=' = p+1, stop p+2.
  static constexpr int kModulus = 11;
  // copy_reverse layout: symbols [0,8), separator 8, stop 9; length-4 strings.
  static constexpr int kSymbols = 8;
  static constexpr int kCopyLen = 4;

  static SyntheticTask make(TaskKind kind) {
    SyntheticTask t;
    t.kind = kind;
    switch (kind) {
      case TaskKind::keyed_recall:
        t.vocab = 25;
        t.stop = 24;
        break;
      case TaskKind::modular_add:
        t.vocab = kModulus + 3;
        t.stop = kModulus + 2;
        break;
      case TaskKind::copy_reverse:
        t.vocab = kSymbols + 2;
        t.stop = kSymbols + 1;
        t.positional = true;
        break;
      case TaskKind::rank1_classify:
        throw std::invalid_argument("rank1_classify is a continuous task; use Rank1Task");
    }
    return t;
  }

  /// Fixed key -> value dictionary (a permutation of the value tokens).
  static int recall_value(int key) {
    static constexpr int kTable[kKeys] = {5, 2, 7, 0, 3, 6, 1, 4};
    return kKeys + kTable[key];
  }

  /// Closed-form answer for a prompt; the label oracle.
  std::vector<int> solve(const std::vector<int>& prompt) const {
    switch (kind) {
      case TaskKind::keyed_recall:
        if (prompt.size() != 3 || prompt[2] < 0 || prompt[2] >= kKeys) throw std::invalid_argument("bad recall prompt");
        return {recall_value(prompt[2]), stop};
      case TaskKind::modular_add:
        if (prompt.size() != 4) throw std::invalid_argument("bad addition prompt");
        return {(prompt[0] + prompt[2]) % kModulus, stop};
      case TaskKind::copy_reverse: {
        if (prompt.size() != kCopyLen + 1) throw std::invalid_argument("bad copy prompt");
        std::vector<int> out(prompt.rbegin() + 1, prompt.rend());
        out.push_back(stop);
        return out;
      }
      case TaskKind::rank1_classify: break;
    }
    throw std::logic_error("solve: unsupported task");
  }

  /// All prompts of the task (copy_reverse: all 8^4 strings).
  std::vector<std::vector<int>> universe() const {
    std::vector<std::vector<int>> out;
    switch (kind) {
      case TaskKind::keyed_recall:
        for (int f1 = 0; f1 < kFillers; ++f1)
          for (int f2 = 0; f2 < kFillers; ++f2)
            for (int k = 0; k < kKeys; ++k) out.push_back({2 * kKeys + f1, 2 * kKeys + f2, k});
        break;
      case TaskKind::modular_add:
        for (int a = 0; a < kModulus; ++a)
          for (int b = 0; b < kModulus; ++b) out.push_back({a, kModulus, b, kModulus + 1});
        break;
      case TaskKind::copy_reverse:
        for (int code = 0; code < 4096; ++code) {
          std::vector<int> p;
          for (int i = 0, c = code; i < kCopyLen; ++i, c /= kSymbols) p.push_back(c % kSymbols);
          p.push_back(kSymbols);
          out.push_back(std::move(p));
        }
        break;
      case TaskKind::rank1_classify: break;
    }
    return out;
  }

  /// Shuffles the universe with `seed` and cuts it into disjoint splits.
  Dataset sample(std::uint64_t seed) const {
    std::vector<std::vector<int>> prompts = universe();
    Rng rng(seed);
    rng.shuffle(prompts);
    const auto n = prompts.size();
    const auto n_train = static_cast<std::size_t>(split.train * static_cast<double>(n));
    const auto n_val = static_cast<std::size_t>(split.val * static_cast<double>(n));
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
      Example e{prompts[i], solve(prompts[i])};
      if (i < n_train) d.train.push_back(std::move(e));
      else if (i < n_train + n_val) d.val.push_back(std::move(e));
      else d.test.push_back(std::move(e));
    }
    return d;
  }
};

/// Rank-1 contexts X = a u^T through one frozen attention layer; token i must
/// map to e1 when a_i > 0 and to e2 otherwise.
struct Rank1Context {
  Matrix x;
  Matrix target;
  std::vector<int> labels;  // 0 for e1, 1 for e2
};

struct Rank1Split {
  std::vector<Rank1Context> train, val, test;
};

}  // namespace prefixlab
