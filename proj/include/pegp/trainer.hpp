#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pegp/backbone.hpp"
#include "pegp/data.hpp"
#include "pegp/metrics.hpp"
#include "pegp/pet.hpp"
#include "pegp/projection.hpp"

namespace pegp {

enum class OptimizerKind { SGD, Adam };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double lr = 0.1;
  double first_task_lr = 0.0;  // 0: use lr for every task
  OptimizerKind optimizer = OptimizerKind::SGD;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Scenario scenario = Scenario::CIL;
  std::uint64_t seed = 0;
  bool projection = true;
  bool project_head = true;  // also constrain the classifier by the pooled-feature null space
  ProjectionConfig projection_config;

  double lr_for_task(std::size_t task) const { return task == 0 && first_task_lr > 0.0 ? first_task_lr : lr; }
  void validate() const;
};

enum class Phase { Train, Test };

/// Which logits take part in the softmax. `task` is the ground-truth task for
/// TIL and the most recent trained task otherwise.
///   TIL: that task's classes. CIL/OIL: every class seen so far. DIL: all.
std::vector<bool> logit_policy(Scenario scenario, Phase phase, std::size_t task, std::size_t classes_per_task,
                               std::size_t total_classes);

/// Moments for Adam; empty for SGD. Reset at the start of every task.
struct OptimizerState {
  std::uint64_t step = 0;
  PetTensors m, v;
  Matrix head_m, head_v;
};

OptimizerState init_optimizer(const PetState& pet, const Classifier& head);

struct BatchResult {
  double loss = 0.0;     // mean cross-entropy over the batch
  std::size_t correct = 0;
};

/// Mean cross-entropy gradient of a batch. Samples are evaluated in parallel
/// and reduced in index order, so the result does not depend on threading.
Gradients batch_gradients(const FrozenWeights& w, const PetState& pet, const Classifier& head,
                          const std::vector<const Sample*>& batch, const std::vector<bool>& mask, BatchResult* stats);

/// One optimizer step. With bases, the raw gradient is projected before it
/// reaches the moments and the final step is projected again, so the applied
/// update always lies in the permitted subspace.
/// Without bases (null) nothing is projected.
void apply_update(PetState& pet, Classifier& head, Gradients grads, const TrainConfig& config, const SiteBases* bases,
                  double lr, OptimizerState& state);

struct TaskTrainResult {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;  // over the last epoch
};

/// Trains on `train` for config.epochs epochs (1 for OIL). Batch order comes
/// from the named sub-seed ("shuffle", task, epoch). Throws std::runtime_error
/// on a non-finite loss.
TaskTrainResult train_task(const FrozenWeights& w, PetState& pet, Classifier& head, const std::vector<Sample>& train,
                           const TrainConfig& config, std::size_t task, std::size_t classes_per_task,
                           const SiteBases* bases);

/// Accuracy of argmax over the test-phase logit mask.
double evaluate(const FrozenWeights& w, const PetState& pet, const Classifier& head, const std::vector<Sample>& test,
                Scenario scenario, std::size_t mask_task, std::size_t classes_per_task, std::size_t total_classes);

/// State carried from one task to the next; this is what a checkpoint holds.
struct RunState {
  std::size_t completed_tasks = 0;
  PetState pet;
  Classifier head;
  std::vector<FeatureBuffer> buffers;
  SiteBases bases;
  AccuracyMatrix accuracy;
  std::vector<std::map<std::string, std::size_t>> basis_columns;  // per task, after its rebuild
  std::vector<std::vector<double>> loss_curves;                   // per task, per epoch
  std::vector<std::string> warnings;
};

struct ContinualSetup {
  FrozenWeights weights;
  TrainConfig train;
  std::size_t classes_per_task = 2;
  std::size_t total_classes = 2;
};

/// Called after every task with the state so far (for checkpoints).
using TaskCallback = std::function<void(const RunState&)>;

/// The outer loop: for each task train, evaluate every seen task, sample
/// features on a held-out slice of the training split, rebuild bases.
/// Tasks already completed in `initial` are skipped, which is how a run
/// resumes from a checkpoint.
RunState continual_run(const ContinualSetup& setup, const std::vector<TaskDataset>& stream, RunState initial,
                       const TaskCallback& after_task = {});

/// Fresh state: initialized PET and head, empty buffers for every site.
RunState initial_state(const ContinualSetup& setup, PetState pet, Classifier head);

/// Samples held out for feature sampling and the rest used for training.
struct SplitForSampling {
  std::vector<Sample> train;
  std::vector<Matrix> sampling;
};
SplitForSampling hold_out_sampling(const std::vector<Sample>& train, std::size_t count, std::uint64_t seed,
                                   std::size_t task);

/// Rebuilds every basis from the buffers. Empty bases add a warning.
SiteBases rebuild_bases(const std::vector<FeatureBuffer>& buffers, const PetState& pet, const ProjectionConfig& config,
                        std::vector<std::string>* warnings, std::size_t task);

}  // namespace pegp
