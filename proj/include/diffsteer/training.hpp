#pragma once

#include "diffsteer/backbone.hpp"
#include "diffsteer/common.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/schedule.hpp"
#include "diffsteer/steering.hpp"

#include <functional>
#include <vector>

namespace diffsteer {

enum class OptimizerKind { adam, adamw };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  int epochs = 0;
  int batch_size = 256;
  int grad_accum = 1;  // effective batch per update = batch_size * grad_accum
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double weight_decay = 0.0;  // decoupled; only applied by adamw
  std::uint64_t seed = 0;
  void validate() const;
};

// Adam / AdamW with bias correction; state arrays mirror the store layout.
class Optimizer {
 public:
  Optimizer(const ParamStore& params, const TrainConfig& cfg);
  void step(ParamStore& params, const std::vector<Matrix>& grads);

 private:
  TrainConfig cfg_;
  std::vector<Matrix> m_, v_;
  int t_ = 0;
};

// Sum over coordinates, mean over batch rows.
double denoising_loss(const Matrix& eps_pred, const Matrix& eta);

// (epoch index, mean loss that epoch); invoked after each epoch completes.
using EpochCallback = std::function<void(int, double)>;
using ConditionFn = std::function<Condition(int)>;

struct TrainResult {
  std::vector<double> loss_history;  // one entry per epoch
};

// Denoising-loss minimization of the backbone parameters. Labels are ignored
// unless the model takes a condition input, in which case condition_fn must
// map each label to that input.
TrainResult pretrain(const LabeledDataset& data, DenoiserModel& model,
                     const NoiseSchedule& sched, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {},
                     const ConditionFn& condition_fn = {});

// Same objective, but only the steering parameters move; the backbone must be
// frozen and its checksum is asserted unchanged.
TrainResult finetune(const DenoiserModel& backbone, SteeringModule& module,
                     const LabeledDataset& labeled, const NoiseSchedule& sched,
                     const TrainConfig& cfg, const ConditionFn& condition_fn,
                     const EpochCallback& on_epoch = {});

// Mean denoising loss of the model over a dataset with freshly drawn (t, eta);
// the zero-predictor baseline for comparison is E|eta|^2 = input_dim.
double evaluate_loss(const DenoiserModel& model, const Matrix& points,
                     const NoiseSchedule& sched, std::uint64_t seed);

}  // namespace diffsteer
