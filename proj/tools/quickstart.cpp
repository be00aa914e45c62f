// Library tour: in-context demos as a prefix, a short prefix-tuning run, and
// the flop cost of both deployments.

#include <iostream>

#include "prefixlab/cost.hpp"
#include "prefixlab/harness.hpp"

using namespace prefixlab;

int main() {
  const SyntheticTask task = SyntheticTask::make(TaskKind::keyed_recall);
  const Model model = harness_model(task, 1234);
  const Dataset data = task.sample(0);

  // Four demonstrations in context vs the same demonstrations as a KV prefix.
  std::vector<int> demo;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto s = data.train[i].full();
    demo.insert(demo.end(), s.begin(), s.end());
  }
  const double gap = icl_equivalence_check(model, demo, data.test[0].prompt);
  std::cout << "ICL vs demo-cache prefix, max logit difference: " << gap << "\n";

  TrainConfig cfg;
  cfg.adapter = "prefix";
  cfg.size = 16;
  cfg.steps = 400;
  Adapter prefix = make_adapter(model, cfg);
  const RunReport rep = train(model, prefix, task, data, cfg);
  std::cout << "prefix m=16: test exact match " << rep.test_accuracy << " after " << rep.steps_run << " steps, "
            << rep.deployed_params << " deployed parameters\n";

  CostConfig icl{2, 32, 64, task.vocab, 3, 2, 0, demo.size()};
  CostConfig learned{2, 32, 64, task.vocab, 3, 2, 16, 0};
  std::cout << "flops per query: ICL " << cost_report(icl).total_flops << ", prefix "
            << cost_report(learned).total_flops << "\n";
  return 0;
}
