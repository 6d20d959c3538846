#pragma once

// A small trained model on the synthetic tasks, shared by tests that need realistic gradients.

#include <memory>

#include "mxfer/data.hpp"
#include "mxfer/model.hpp"
#include "mxfer/training.hpp"

namespace mxfer::fixtures {

struct DeskModel {
  std::vector<TaskDataset> tasks;
  ModelSpec spec;
  std::shared_ptr<const ParameterVector> theta0;
  std::vector<std::shared_ptr<const ParameterVector>> finetuned;
};

inline const DeskModel& desk_model() {
  static const DeskModel m = [] {
    DeskModel d;
    SyntheticTaskParams p;
    p.seed = 1;
    p.separation = 0.06;
    p.noise = 0.07;
    p.train_per_task = 384;
    p.test_per_task = 256;
    d.tasks = generate_tasks(p);
    d.spec.head_classes.assign(p.tasks, p.classes);
    PretrainConfig pc;
    pc.backbone.epochs = 2;
    pc.backbone.seed = 1;
    pc.probe = pc.backbone;
    pc.probe.epochs = 1;
    d.theta0 = std::make_shared<const ParameterVector>(pretrain(d.spec, d.tasks, pc));
    for (const auto& t : d.tasks) {
      SgdConfig c;
      c.epochs = 8;
      c.learning_rate = 0.02;
      c.seed = 11 + t.task;
      d.finetuned.push_back(std::make_shared<const ParameterVector>(finetune(d.spec, *d.theta0, t, c)));
    }
    return d;
  }();
  return m;
}

}  // namespace mxfer::fixtures
