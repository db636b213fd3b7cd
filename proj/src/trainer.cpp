#include "pegp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "pegp/rng.hpp"

namespace pegp {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::SGD;
  if (name == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (scenario == Scenario::OIL && epochs != 1) throw std::invalid_argument("train.epochs must be 1 for oil");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train.lr must be >= 0");
  if (!(first_task_lr >= 0.0) || !std::isfinite(first_task_lr))
    throw std::invalid_argument("train.first_task_lr must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw std::invalid_argument("train.adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw std::invalid_argument("train.adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train.adam_eps must be > 0");
  projection_config.validate();
}

std::vector<bool> logit_policy(Scenario scenario, Phase /*phase*/, std::size_t task, std::size_t classes_per_task,
                               std::size_t total_classes) {
  std::vector<bool> mask(total_classes, false);
  switch (scenario) {
    case Scenario::DIL:
      std::fill(mask.begin(), mask.end(), true);
      break;
    case Scenario::TIL:
      for (std::size_t c = task * classes_per_task; c < (task + 1) * classes_per_task && c < total_classes; ++c)
        mask[c] = true;
      break;
    case Scenario::CIL:
    case Scenario::OIL:
      for (std::size_t c = 0; c < (task + 1) * classes_per_task && c < total_classes; ++c) mask[c] = true;
      break;
  }
  return mask;
}

OptimizerState init_optimizer(const PetState& pet, const Classifier& head) {
  OptimizerState s;
  s.m = pet.tensors.zeros_like();
  s.v = pet.tensors.zeros_like();
  s.head_m = Matrix(head.weight.rows(), head.weight.cols());
  s.head_v = s.head_m;
  return s;
}

namespace {

// Loss gradient for one sample: softmax over the permitted logits minus the
// one-hot target, zero elsewhere.
double cross_entropy(const std::vector<double>& logits, int label, const std::vector<bool>& mask,
                     std::vector<double>* grad) {
  const auto target = static_cast<std::size_t>(label);
  if (target >= logits.size() || !mask[target]) throw std::invalid_argument("label outside the permitted logits");
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (mask[c]) top = std::max(top, logits[c]);
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (mask[c]) sum += std::exp(logits[c] - top);
  const double log_z = top + std::log(sum);
  if (grad != nullptr) {
    grad->assign(logits.size(), 0.0);
    for (std::size_t c = 0; c < logits.size(); ++c)
      if (mask[c]) (*grad)[c] = std::exp(logits[c] - log_z);
    (*grad)[target] -= 1.0;
  }
  return log_z - logits[target];
}

std::size_t masked_argmax(const std::vector<double>& logits, const std::vector<bool>& mask) {
  std::size_t best = logits.size();
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (mask[c] && (best == logits.size() || logits[c] > logits[best])) best = c;
  return best;
}

std::vector<Matrix*> tensors_of(PetTensors& t) {
  std::vector<Matrix*> out;
  t.for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

void project_all(Gradients& g, PetParadigm paradigm, const SiteBases& bases, bool project_head) {
  project_gradients(g.pet.tensors, paradigm, bases);
  if (!project_head) return;
  const auto it = bases.find(SiteId{SiteKind::HeadInput, 0}.name());
  if (it == bases.end()) throw InvalidState("apply_update: no basis for the classifier");
  const Matrix& b = it->second.basis;
  g.classifier = b.cols() == 0 ? Matrix(g.classifier.rows(), g.classifier.cols())
                               : matmul(b, matmul_at_b(b, g.classifier));
}

}  // namespace

Gradients batch_gradients(const FrozenWeights& w, const PetState& pet, const Classifier& head,
                          const std::vector<const Sample*>& batch, const std::vector<bool>& mask, BatchResult* stats) {
  if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  const std::size_t n = batch.size();
  std::vector<Gradients> per(n);
  std::vector<double> losses(n);
  std::vector<char> hits(n);
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = forward(w, pet, head, batch[k]->tokens);
    std::vector<double> lg;
    losses[k] = cross_entropy(r.logits, batch[k]->label, mask, &lg);
    hits[k] = masked_argmax(r.logits, mask) == static_cast<std::size_t>(batch[k]->label);
    for (double& v : lg) v /= static_cast<double>(n);
    per[k] = backward(r.trace, w, pet, head, lg);
  }
  Gradients total = std::move(per[0]);
  auto total_tensors = tensors_of(total.pet.tensors);
  for (std::size_t k = 1; k < n; ++k) {
    const auto t = tensors_of(per[k].pet.tensors);
    for (std::size_t i = 0; i < t.size(); ++i) axpy(1.0, *t[i], *total_tensors[i]);
    axpy(1.0, per[k].classifier, total.classifier);
  }
  if (stats != nullptr) {
    stats->loss = 0.0;
    stats->correct = 0;
    for (std::size_t k = 0; k < n; ++k) {
      stats->loss += losses[k];
      stats->correct += static_cast<std::size_t>(hits[k]);
    }
    stats->loss /= static_cast<double>(n);
  }
  return total;
}

void apply_update(PetState& pet, Classifier& head, Gradients grads, const TrainConfig& config, const SiteBases* bases,
                  double lr, OptimizerState& state) {
  if (bases != nullptr) project_all(grads, pet.paradigm, *bases, config.project_head);
  auto params = tensors_of(pet.tensors);
  auto g = tensors_of(grads.pet.tensors);
  if (params.size() != g.size()) throw std::invalid_argument("apply_update: gradient layout does not match");

  if (config.optimizer == OptimizerKind::SGD) {
    for (std::size_t i = 0; i < params.size(); ++i) axpy(-lr, *g[i], *params[i]);
    axpy(-lr, grads.classifier, head.weight);
    return;
  }

  state.step += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto adam = [&](const Matrix& grad, Matrix& m, Matrix& v, Matrix& step) {
    step = Matrix(grad.rows(), grad.cols());
    for (std::size_t k = 0; k < grad.size(); ++k) {
      const double gk = grad.data()[k];
      double& mk = m.data()[k];
      double& vk = v.data()[k];
      mk = b1 * mk + (1.0 - b1) * gk;
      vk = b2 * vk + (1.0 - b2) * gk * gk;
      step.data()[k] = (mk / c1) / (std::sqrt(vk / c2) + config.adam_eps);
    }
  };
  auto m = tensors_of(state.m);
  auto v = tensors_of(state.v);
  if (m.size() != g.size()) throw std::invalid_argument("apply_update: optimizer state does not match");
  Gradients step;
  step.pet.paradigm = grads.pet.paradigm;
  step.pet.tensors = grads.pet.tensors;  // same layout, overwritten below
  auto s = tensors_of(step.pet.tensors);
  for (std::size_t i = 0; i < g.size(); ++i) adam(*g[i], *m[i], *v[i], *s[i]);
  adam(grads.classifier, state.head_m, state.head_v, step.classifier);
  // Elementwise normalization leaves the permitted subspace; project again.
  if (bases != nullptr) project_all(step, pet.paradigm, *bases, config.project_head);
  for (std::size_t i = 0; i < params.size(); ++i) axpy(-lr, *s[i], *params[i]);
  axpy(-lr, step.classifier, head.weight);
}

TaskTrainResult train_task(const FrozenWeights& w, PetState& pet, Classifier& head, const std::vector<Sample>& train,
                           const TrainConfig& config, std::size_t task, std::size_t classes_per_task,
                           const SiteBases* bases) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train_task: no training samples for task " + std::to_string(task));
  const std::size_t total_classes = head.weight.cols();
  const auto mask = logit_policy(config.scenario, Phase::Train, task, classes_per_task, total_classes);
  const double lr = config.lr_for_task(task);
  OptimizerState state = init_optimizer(pet, head);

  TaskTrainResult result;
  std::vector<std::size_t> order(train.size());
  for (std::size_t e = 0; e < config.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(sub_seed(config.seed, "shuffle", task, e));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const Sample*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&train[order[k]]);
      BatchResult stats;
      Gradients g = batch_gradients(w, pet, head, batch, mask, &stats);
      if (!std::isfinite(stats.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at task " << task << ", epoch " << e << ", batch " << start / config.batch_size;
        throw std::runtime_error(msg.str());
      }
      loss_sum += stats.loss * static_cast<double>(batch.size());
      correct += stats.correct;
      apply_update(pet, head, std::move(g), config, bases, lr, state);
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(train.size()));
    result.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
  }
  return result;
}

double evaluate(const FrozenWeights& w, const PetState& pet, const Classifier& head, const std::vector<Sample>& test,
                Scenario scenario, std::size_t mask_task, std::size_t classes_per_task, std::size_t total_classes) {
  if (test.empty()) return 0.0;
  const auto mask = logit_policy(scenario, Phase::Test, mask_task, classes_per_task, total_classes);
  std::vector<char> hits(test.size());
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < test.size(); ++k)
    hits[k] = masked_argmax(predict(w, pet, head, test[k].tokens), mask) == static_cast<std::size_t>(test[k].label);
  std::size_t correct = 0;
  for (char h : hits) correct += static_cast<std::size_t>(h);
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

SplitForSampling hold_out_sampling(const std::vector<Sample>& train, std::size_t count, std::uint64_t seed,
                                   std::size_t task) {
  SplitForSampling out;
  if (train.size() < 2) throw std::invalid_argument("hold_out_sampling: need at least two training samples");
  const std::size_t take = std::min(count, train.size() - 1);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(sub_seed(seed, "sampling_slice", task));
  rng.shuffle(order.begin(), order.end());
  std::vector<char> held(train.size(), 0);
  for (std::size_t k = 0; k < take; ++k) {
    held[order[k]] = 1;
    out.sampling.push_back(train[order[k]].tokens);
  }
  for (std::size_t k = 0; k < train.size(); ++k)
    if (!held[k]) out.train.push_back(train[k]);
  return out;
}

SiteBases rebuild_bases(const std::vector<FeatureBuffer>& buffers, const PetState& pet, const ProjectionConfig& config,
                        std::vector<std::string>* warnings, std::size_t task) {
  SiteBases bases;
  for (const auto& buffer : buffers) {
    const SiteId& site = buffer.site();
    std::string key = site.name();
    ProjectionBasis basis;
    if (site.kind == SiteKind::PromptInput) {
      key = "prompt";
      basis = prompt_projection_basis(buffer.rows(), pet.tensors.prompt, config.epsilon, config.beta);
    } else {
      const BasisSide side = site.kind == SiteKind::PrefixInput ? BasisSide::Right : BasisSide::Left;
      basis = build_basis(buffer, config.epsilon, side);
    }
    if (basis.columns() == 0 && warnings != nullptr)
      warnings->push_back("task " + std::to_string(task) + ": empty projection basis at " + site.name() +
                          "; its updates are zeroed");
    bases[key] = std::move(basis);
  }
  return bases;
}

RunState initial_state(const ContinualSetup& setup, PetState pet, Classifier head) {
  setup.train.validate();
  validate_pet(pet, setup.weights.config);
  RunState st;
  st.pet = std::move(pet);
  st.head = std::move(head);
  if (setup.train.projection) {
    const auto& c = setup.weights.config;
    auto sites = sites_for(st.pet.paradigm, c.depth);
    if (setup.train.project_head) sites.push_back({SiteKind::HeadInput, 0});
    for (const auto& site : sites) {
      std::size_t width = c.dim;
      if (site.kind == SiteKind::AdapterDown || site.kind == SiteKind::LoraQDown || site.kind == SiteKind::LoraVDown)
        width = (site.kind == SiteKind::AdapterDown ? st.pet.tensors.adapter_down : st.pet.tensors.lora_q_down)
                    .at(site.layer)
                    .cols();
      st.buffers.emplace_back(site, width, setup.train.projection_config.buffer_cap);
    }
  }
  return st;
}

RunState continual_run(const ContinualSetup& setup, const std::vector<TaskDataset>& stream, RunState st,
                       const TaskCallback& after_task) {
  const TrainConfig& cfg = setup.train;
  cfg.validate();
  if (st.completed_tasks > stream.size()) throw std::invalid_argument("continual_run: state is ahead of the stream");
  if (st.accuracy.tasks() != st.completed_tasks)
    throw std::invalid_argument("continual_run: accuracy rows do not match completed tasks");
  const FrozenWeights& w = setup.weights;

  for (std::size_t t = st.completed_tasks; t < stream.size(); ++t) {
    const auto split = hold_out_sampling(stream[t].train, cfg.projection_config.sample_count, cfg.seed, t);
    const SiteBases* bases = cfg.projection && t > 0 ? &st.bases : nullptr;
    const auto trained = train_task(w, st.pet, st.head, split.train, cfg, t, setup.classes_per_task, bases);
    st.loss_curves.push_back(trained.epoch_loss);

    std::vector<double> row;
    for (std::size_t i = 0; i <= t; ++i) {
      const std::size_t mask_task = cfg.scenario == Scenario::TIL ? i : t;
      row.push_back(evaluate(w, st.pet, st.head, stream[i].test, cfg.scenario, mask_task, setup.classes_per_task,
                             setup.total_classes));
    }
    st.accuracy.append_row(std::move(row));

    std::map<std::string, std::size_t> columns;
    if (cfg.projection) {
      // One forward pass per sampling item feeds every buffer.
      std::vector<Matrix> rows(st.buffers.size());
      for (const Matrix& x : split.sampling) {
        const auto r = forward(w, st.pet, st.head, x);
        for (std::size_t b = 0; b < st.buffers.size(); ++b)
          rows[b] = vstack(rows[b], site_features(r.trace, st.buffers[b].site()));
      }
      for (std::size_t b = 0; b < st.buffers.size(); ++b)
        st.buffers[b].append(rows[b], static_cast<int>(t), sub_seed(cfg.seed, "reservoir", t));
      st.bases = rebuild_bases(st.buffers, st.pet, cfg.projection_config, &st.warnings, t);
      for (const auto& [key, basis] : st.bases) columns[key] = basis.columns();
    }
    st.basis_columns.push_back(std::move(columns));
    st.completed_tasks = t + 1;
    if (after_task) after_task(st);
  }
  return st;
}

}  // namespace pegp
