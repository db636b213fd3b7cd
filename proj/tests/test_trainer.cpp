#include <doctest.h>

#include <cmath>
#include <omp.h>

#include "pegp/experiment.hpp"
#include "test_support.hpp"

using namespace pegp;
using namespace pegp::testing;

namespace {

const PetParadigm kAll[] = {PetParadigm::Prompt, PetParadigm::Prefix, PetParadigm::Adapter, PetParadigm::LoRA};

RunConfig small_config(PetParadigm p, std::size_t tasks = 2) {
  RunConfig c;
  c.paradigm = p;
  c.model.dim = 16;
  c.scenario.tasks = tasks;
  c.scenario.samples_per_class = 30;
  c.train.epochs = 2;
  c.seed = 4;
  c.normalize();
  c.validate();
  return c;
}

std::vector<std::size_t> kept(const std::vector<bool>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

}  // namespace

TEST_CASE("logit policy") {
  using V = std::vector<std::size_t>;
  // Tasks are 0-based here: "task 2 of 5" is index 1.
  CHECK(kept(logit_policy(Scenario::TIL, Phase::Test, 1, 2, 10)) == V{2, 3});
  CHECK(kept(logit_policy(Scenario::DIL, Phase::Train, 3, 2, 2)) == V{0, 1});
  CHECK(kept(logit_policy(Scenario::CIL, Phase::Train, 2, 2, 10)) == V{0, 1, 2, 3, 4, 5});
  CHECK(kept(logit_policy(Scenario::OIL, Phase::Test, 0, 2, 10)) == V{0, 1});
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.scenario = Scenario::OIL;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.epochs = 1;
  CHECK_NOTHROW(c.validate());
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(parse_optimizer("adam") == OptimizerKind::Adam);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), std::invalid_argument);
  c = {};
  c.first_task_lr = 0.001;
  CHECK(c.lr_for_task(0) == 0.001);
  CHECK(c.lr_for_task(1) == c.lr);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  for (auto opt : {OptimizerKind::SGD, OptimizerKind::Adam}) {
    auto c = small_config(PetParadigm::Adapter, 1);
    c.train.lr = 0.0;
    c.train.optimizer = opt;
    const Experiment e = prepare_experiment(c);
    const RunState before = fresh_state(e);
    PetState pet = before.pet;
    Classifier head = before.head;
    train_task(e.setup.weights, pet, head, e.stream[0].train, c.train, 0, 2, nullptr);
    CHECK(pet == before.pet);
    CHECK(head == before.head);
  }
}

TEST_CASE("projection off on the first task gives the same trajectory") {
  for (auto p : kAll) {
    CAPTURE(to_string(p));
    auto on = small_config(p, 1);
    auto off = on;
    off.train.projection = false;
    const Experiment eon = prepare_experiment(on), eoff = prepare_experiment(off);
    const RunState a = continual_run(eon.setup, eon.stream, fresh_state(eon));
    const RunState b = continual_run(eoff.setup, eoff.stream, fresh_state(eoff));
    CHECK(a.pet == b.pet);
    CHECK(a.head == b.head);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.loss_curves == b.loss_curves);
  }
}

TEST_CASE("separable two-class task reaches high training accuracy") {
  for (auto p : kAll) {
    CAPTURE(to_string(p));
    RunConfig c;
    c.paradigm = p;
    c.scenario.tasks = 1;
    c.train.optimizer = OptimizerKind::SGD;
    c.train.lr = 0.1;
    c.train.epochs = 5;
    c.seed = 8;
    c.normalize();
    const Experiment e = prepare_experiment(c);
    RunState st = fresh_state(e);
    const auto r = train_task(e.setup.weights, st.pet, st.head, e.stream[0].train, c.train, 0, 2, nullptr);
    CHECK(r.train_accuracy >= 0.95);
    CHECK(r.epoch_loss.size() == 5);
    CHECK(r.epoch_loss.back() < r.epoch_loss.front());
  }
}

TEST_CASE("a single task leaves forgetting undefined") {
  const auto c = small_config(PetParadigm::LoRA, 1);
  const RunSummary s = run_experiment(c);
  CHECK(s.accuracy.tasks() == 1);
  CHECK_FALSE(s.forgetting_defined);
  CHECK(s.forgetting == 0.0);
  CHECK(s.avg_accuracy == s.accuracy.at(0, 0));
}

TEST_CASE("exact null-space projection keeps old probe accuracy") {
  // The probes are task 1's test inputs; with epsilon = 0 the bases are the
  // exact null spaces of their features, so task 2 cannot move them.
  for (auto p : kAll) {
    CAPTURE(to_string(p));
    RunConfig c;
    c.paradigm = p;
    c.scenario.tasks = 2;
    c.scenario.samples_per_class = 10;  // 2 test inputs per class, 16 rows < d
    c.train.epochs = 5;
    c.train.projection_config.epsilon = 0.0;
    c.train.projection_config.beta = 0.0;  // keep the merged prompt basis non-empty
    c.seed = 6;
    c.normalize();
    const Experiment e = prepare_experiment(c);
    const std::vector<TaskDataset> first(e.stream.begin(), e.stream.begin() + 1);
    RunState st = continual_run(e.setup, first, fresh_state(e));
    std::vector<Matrix> probes;
    for (const auto& s : e.stream[0].test) probes.push_back(s.tokens);
    for (auto& buffer : st.buffers) {
      Matrix rows;
      for (const auto& x : probes) rows = vstack(rows, site_features(forward(e.setup.weights, st.pet, st.head, x).trace, buffer.site()));
      buffer = FeatureBuffer(buffer.site(), buffer.width(), buffer.cap());
      buffer.append(rows, 0, 1);
    }
    const SiteBases bases = rebuild_bases(st.buffers, st.pet, c.train.projection_config, nullptr, 0);
    const double a11 = evaluate(e.setup.weights, st.pet, st.head, e.stream[0].test, Scenario::CIL, 0, 2, 4);
    const PetState pet_before = st.pet;
    train_task(e.setup.weights, st.pet, st.head, e.stream[1].train, c.train, 1, 2, &bases);
    CHECK_FALSE(st.pet == pet_before);  // the update is not vacuous
    const double a21 = evaluate(e.setup.weights, st.pet, st.head, e.stream[0].test, Scenario::CIL, 1, 2, 4);
    CHECK(std::abs(a21 - a11) <= 0.02);
  }
}

TEST_CASE("runs are deterministic across repeats and thread counts") {
  const auto c = small_config(PetParadigm::Prefix, 3);
  const RunSummary a = run_experiment(c);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const RunSummary b = run_experiment(c);
  omp_set_num_threads(saved);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.basis_columns == b.basis_columns);
  CHECK(a.config_hash == b.config_hash);
}

TEST_CASE("Adam updates stay in the permitted subspace") {
  const auto f = make_fixture(PetParadigm::Adapter, 16, 2, 3, 6);
  const std::vector<Matrix> old{random_tokens(f.config, 31)};
  SiteBases bases;
  std::map<std::string, Matrix> features;
  auto sites = sites_for(PetParadigm::Adapter, 2);
  sites.push_back({SiteKind::HeadInput, 0});
  for (const auto& site : sites) {
    features[site.name()] = sample_features(f.weights, f.pet, f.head, old, site);
    bases[site.name()] = build_basis(features[site.name()], 1e-10, BasisSide::Left);
  }
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.lr = 0.01;
  PetState pet = f.pet;
  Classifier head = f.head;
  OptimizerState state = init_optimizer(pet, head);
  for (std::uint64_t k = 0; k < 5; ++k) {
    const auto r = forward(f.weights, pet, head, random_tokens(f.config, 40 + k));
    apply_update(pet, head, backward(r.trace, f.weights, pet, head, {1.0, -0.5, 0.2, 0.1, -0.3}), cfg, &bases, cfg.lr,
                 state);
  }
  const Matrix d0 = subtract(pet.tensors.adapter_down[0], f.pet.tensors.adapter_down[0]);
  const Matrix dh = subtract(head.weight, f.head.weight);
  CHECK(frobenius_norm(d0) > 0.0);
  CHECK(frobenius_norm(matmul(features["adapter.0.x"], d0)) <=
        1e-9 * frobenius_norm(features["adapter.0.x"]) * frobenius_norm(d0));
  CHECK(frobenius_norm(matmul(features["head.x"], dh)) <= 1e-9 * frobenius_norm(features["head.x"]) * frobenius_norm(dh));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto c = small_config(PetParadigm::LoRA, 1);
  const Experiment e = prepare_experiment(c);
  RunState st = fresh_state(e);
  st.head.weight(0, 0) = std::nan("");
  try {
    train_task(e.setup.weights, st.pet, st.head, e.stream[0].train, c.train, 0, 2, nullptr);
    FAIL("expected an error");
  } catch (const std::runtime_error& err) {
    CHECK(std::string(err.what()).find("non-finite loss at task 0") != std::string::npos);
  }
}

TEST_CASE("missing bases are reported") {
  const auto f = make_fixture(PetParadigm::LoRA);
  PetState pet = f.pet;
  Classifier head = f.head;
  OptimizerState state;
  Gradients g{zero_gradients(pet), Matrix(head.weight.rows(), head.weight.cols())};
  const SiteBases none;
  CHECK_THROWS_AS(apply_update(pet, head, g, TrainConfig{}, &none, 0.1, state), InvalidState);
}

TEST_CASE("sampling slice is held out of training") {
  const auto c = small_config(PetParadigm::Adapter, 1);
  const Experiment e = prepare_experiment(c);
  const auto split = hold_out_sampling(e.stream[0].train, 8, c.seed, 0);
  CHECK(split.sampling.size() == 8);
  CHECK(split.train.size() + 8 == e.stream[0].train.size());
  for (const auto& s : split.train)
    for (const auto& x : split.sampling) CHECK_FALSE(s.tokens == x);
}

TEST_CASE("empty bases are surfaced as warnings") {
  auto c = small_config(PetParadigm::Adapter, 2);
  const RunSummary s = run_experiment(c);
  bool found = false;
  for (const auto& w : s.warnings) found = found || w.find("adapter.0.y") != std::string::npos;
  CHECK(found);  // the r-wide up-factor space is always full rank
}
