// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "lbt/autodiff/loss.hpp"
#include "lbt/error.hpp"
#include "lbt/oracle/oracle.hpp"
#include "lbt/rng.hpp"

namespace lbt::engine {
namespace {

using model::ArchParams;
using model::WeightSet;

// Hand-rolled mean cross-entropy of softmax(logits) against targets.
double oracle_ce(const ad::Tensor& logits, const ad::Tensor& targets) {
  if (logits.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double mx = -1e300;
    for (std::size_t c = 0; c < logits.cols(); ++c) mx = std::max(mx, logits(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c) - mx);
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      const double p = std::exp(logits(r, c) - mx) / z;
      total -= targets(r, c) * std::log(std::max(p, 1e-12));
    }
  }
  return total / static_cast<double>(logits.rows());
}

oracle::Instance instance(std::uint64_t seed, SearchConfig c = {}) {
  c.xi_t = c.xi_t == SearchConfig{}.xi_t ? 0.5 : c.xi_t;
  c.xi_s = c.xi_s == SearchConfig{}.xi_s ? 0.5 : c.xi_s;
  return oracle::tiny_instance(seed, c);
}

data::DataBundle blobs(std::uint64_t seed, double noise = 0.1) {
  return data::generate(data::TaskSpec{.label_noise = noise, .seed = seed});
}

SearchConfig short_run(std::size_t epochs) {
  SearchConfig c;
  c.epochs = epochs;
  c.teacher.hidden = 4;
  c.teacher.nodes = 2;
  return c;
}

bool all_zero(std::span<const double> v) {
  for (double x : v) {
    if (x != 0.0) return false;
  }
  return true;
}

// ---- pseudo_label -------------------------------------------------------

TEST(PseudoLabel, ZeroHeadGivesUniformLabels) {
  auto in = instance(0);
  WeightSet t = in.teacher;
  for (std::size_t i = 0; i < t.layout().size(); ++i) {
    if (t.layout().entries()[i].name.starts_with("head.")) t.tensor(i) = ad::Tensor(t.tensor(i).rows(), t.tensor(i).cols());
  }
  const auto pl = in.engine.pseudo_label(in.arch, t, in.data.unlabeled);
  ASSERT_EQ(pl.size(), in.data.unlabeled.rows());
  for (double v : pl.y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(PseudoLabel, EmptyPoolGivesEmptySetAndNoPseudoLoss) {
  auto in = instance(0);
  const auto pl = in.engine.pseudo_label(in.arch, in.teacher, ad::Tensor(0, 2));
  EXPECT_EQ(pl.size(), 0u);
  const auto os = in.engine.student_objective(in.student, in.data.student_train, pl, 1.0);
  EXPECT_EQ(os.pseudo, 0.0);
  EXPECT_EQ(os.value, os.human);
}

TEST(PseudoLabel, MatchesSoftmaxOfForward) {
  auto in = instance(0);
  ad::Tensor x(5, 2);
  Rng rng(1);
  for (double& v : x.values()) v = rng.normal();
  const auto pl = in.engine.pseudo_label(in.arch, in.teacher, x);
  const ad::Tensor logits = in.engine.teacher().forward(&in.arch, in.teacher, x);
  ASSERT_EQ(pl.size(), 5u);
  for (std::size_t r = 0; r < 5; ++r) {
    double z = 0, sum = 0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits(r, c));
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(pl.y(r, c), std::exp(logits(r, c)) / z, 1e-15);
      sum += pl.y(r, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
  EXPECT_LE(max_row_sum_error(pl), 1e-9);
}

// ---- virtual steps ------------------------------------------------------

TEST(VirtualStep, ZeroRateIsIdentity) {
  auto in = instance(0);
  EXPECT_EQ(in.engine.teacher_virtual_step(in.teacher, in.arch, in.data.teacher_train, 0.0), in.teacher);
  std::vector<double> g(in.student.layout().total(), 1.0);
  EXPECT_EQ(in.engine.student_virtual_step(in.student, g, 0.0), in.student);
}

TEST(VirtualStep, QuadraticSurrogateStepsToZero) {
  // Loss 1/2 |W|^2 over every weight tensor; its gradient is W itself.
  auto in = instance(0);
  for (const WeightSet* w : {&in.teacher, &in.student}) {
    ad::Graph g;
    const auto nodes = model::declare(g, w->layout(), "");
    ad::NodeId loss;
    for (auto n : nodes) {
      const auto sq = g.scale(g.sum_all(g.mul(n, n)), 0.5);
      loss = loss.valid() ? g.add(loss, sq) : sq;
    }
    ad::Bindings b;
    w->bind(b, "");
    std::vector<std::string> names;
    for (const auto& e : w->layout().entries()) names.push_back(e.name);
    const auto grad = ad::gradient(g, loss, names, b);
    for (double v : in.engine.student_virtual_step(*w, grad, 1.0).flat()) EXPECT_EQ(v, 0.0);
  }
}

TEST(VirtualStep, TeacherMatchesFiniteDifferenceStep) {
  auto in = instance(0);
  const double xi = 0.3, h = 1e-5;
  const WeightSet tv = in.engine.teacher_virtual_step(in.teacher, in.arch, in.data.teacher_train, xi);
  const auto base = in.teacher.flat();
  const auto got = tv.flat();
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> e(base.size(), 0.0);
    e[i] = 1.0;
    const double fd = (in.engine.teacher_loss(in.teacher.shifted(h, e), in.arch, in.data.teacher_train) -
                       in.engine.teacher_loss(in.teacher.shifted(-h, e), in.arch, in.data.teacher_train)) /
                      (2 * h);
    const double want = base[i] - xi * fd;
    EXPECT_LE(std::abs(got[i] - want), 1e-5 * std::max(std::abs(want), 1e-3)) << i;
    if (std::abs(fd) > 1e-8) {
      EXPECT_LE(std::abs((base[i] - got[i]) / xi - fd) / std::abs(fd), 1e-5) << i;
    }
  }
}

TEST(VirtualStep, StudentMatchesFiniteDifferenceStep) {
  auto in = instance(1);
  const double xi = 0.3, h = 1e-5, lambda = 1.0;
  const auto pl = in.engine.pseudo_label(in.arch, in.teacher, in.data.unlabeled);
  const auto os = in.engine.student_objective(in.student, in.data.student_train, pl, lambda);
  const auto got = in.engine.student_virtual_step(in.student, os.grad, xi).flat();
  const auto base = in.student.flat();
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> e(base.size(), 0.0);
    e[i] = 1.0;
    const double fd = (in.engine.student_objective(in.student.shifted(h, e), in.data.student_train, pl, lambda).value -
                       in.engine.student_objective(in.student.shifted(-h, e), in.data.student_train, pl, lambda).value) /
                      (2 * h);
    if (std::abs(fd) > 1e-8) EXPECT_LE(std::abs((base[i] - got[i]) / xi - fd) / std::abs(fd), 1e-5) << i;
  }
}

TEST(VirtualStep, DoesNotMutateInputs) {
  auto in = instance(2);
  const WeightSet t0 = in.teacher, s0 = in.student;
  const ArchParams a0 = in.arch;
  in.engine.arch_gradient(in.teacher, in.student, in.arch, in.data);
  EXPECT_EQ(in.teacher, t0);
  EXPECT_EQ(in.student, s0);
  EXPECT_EQ(in.arch, a0);
}

// ---- student objective --------------------------------------------------

TEST(StudentObjective, ZeroLambdaIsPlainSupervisedLoss) {
  auto in = instance(0);
  const auto pl = in.engine.pseudo_label(in.arch, in.teacher, in.data.unlabeled);
  const auto os = in.engine.student_objective(in.student, in.data.student_train, pl, 0.0);
  vec::Vector g;
  EXPECT_EQ(os.value, in.engine.student_loss(in.student, in.data.student_train, &g));
  EXPECT_EQ(os.grad, g);
}

TEST(StudentObjective, OneHotPseudoLabelsEqualHardLabels) {
  auto in = instance(0);
  const Batch& d = in.data.student_train;
  const PseudoLabeledSet pl{d.x, d.y};
  const auto os = in.engine.student_objective(in.student, d, pl, 1.0);
  EXPECT_NEAR(os.pseudo, os.human, 1e-12);
}

TEST(StudentObjective, EqualsIndependentComponentSum) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    auto in = instance(seed);
    const auto pl = in.engine.pseudo_label(in.arch, in.teacher, in.data.unlabeled);
    const auto os = in.engine.student_objective(in.student, in.data.student_train, pl, 1.0);
    const double human = oracle_ce(in.engine.student().forward(in.student, in.data.student_train.x), in.data.student_train.y);
    const double pseudo = oracle_ce(in.engine.student().forward(in.student, pl.x), pl.y);
    EXPECT_NEAR(os.human, human, 1e-12);
    EXPECT_NEAR(os.pseudo, pseudo, 1e-12);
    EXPECT_NEAR(os.value, human + pseudo, 1e-12);
  }
}

TEST(StudentObjective, EmptyTrainingSetIsAnError) {
  auto in = instance(0);
  const auto pl = in.engine.pseudo_label(in.arch, in.teacher, in.data.unlabeled);
  EXPECT_THROW(in.engine.student_objective(in.student, Batch{ad::Tensor(0, 2), ad::Tensor(0, 3)}, pl, 1.0), ConfigError);
}

// ---- teacher validation hypergradient -----------------------------------

TEST(TeacherValGrad, ZeroRateGivesPlainPartial) {
  auto in = instance(0);
  const auto r = in.engine.grad_arch_teacher_val(in.teacher, in.teacher, in.arch, in.data.teacher_train,
                                                 in.data.teacher_val, 0.0, 0.01);
  vec::Vector direct;
  in.engine.teacher_loss(in.teacher, in.arch, in.data.teacher_val, nullptr, &direct);
  EXPECT_EQ(r.grad, direct);
}

TEST(TeacherValGrad, ConstantValidationLossGivesZero) {
  auto in = instance(0);
  const Batch empty{ad::Tensor(0, 2), ad::Tensor(0, 3)};
  const WeightSet tv = in.engine.teacher_virtual_step(in.teacher, in.arch, in.data.teacher_train, 0.5);
  const auto r = in.engine.grad_arch_teacher_val(in.teacher, tv, in.arch, in.data.teacher_train, empty, 0.5, 0.01);
  EXPECT_EQ(r.v_norm, 0.0);
  EXPECT_TRUE(all_zero(r.grad));
}

TEST(TeacherValGrad, MatchesUnrolledTerm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto in = instance(seed);
    const SearchConfig& c = in.engine.config();
    const WeightSet tv = in.engine.teacher_virtual_step(in.teacher, in.arch, in.data.teacher_train, c.xi_t);
    const auto fd = in.engine.grad_arch_teacher_val(in.teacher, tv, in.arch, in.data.teacher_train, in.data.teacher_val,
                                                    c.xi_t, c.c_fd);
    const auto exact = in.engine.unrolled_arch_gradient(in.teacher, in.student, in.arch, in.data).teacher_val;
    const auto cmp = oracle::compare(fd.grad, exact);
    EXPECT_GE(cmp.cosine, 0.999);
    EXPECT_LE(cmp.relative_l2, 1e-2);
  }
}

TEST(TeacherValGrad, HalvingStepBarelyChangesHvp) {
  auto in = instance(0);
  const SearchConfig& c = in.engine.config();
  const WeightSet tv = in.engine.teacher_virtual_step(in.teacher, in.arch, in.data.teacher_train, c.xi_t);
  const auto a = in.engine.grad_arch_teacher_val(in.teacher, tv, in.arch, in.data.teacher_train, in.data.teacher_val,
                                                 c.xi_t, 0.01);
  const auto b = in.engine.grad_arch_teacher_val(in.teacher, tv, in.arch, in.data.teacher_train, in.data.teacher_val,
                                                 c.xi_t, 0.005);
  EXPECT_LE(oracle::compare(b.hvp, a.hvp).relative_l2, 0.01);
}

// ---- student validation hypergradient -----------------------------------

struct StudentPath {
  WeightSet tv, sv;
};

StudentPath virtual_steps(const oracle::Instance& in, double lambda, double xi_t, double xi_s) {
  const WeightSet tv = in.engine.teacher_virtual_step(in.teacher, in.arch, in.data.teacher_train, xi_t);
  const auto pl = in.engine.pseudo_label(in.arch, tv, in.data.unlabeled);
  const auto os = in.engine.student_objective(in.student, in.data.student_train, pl, lambda);
  return {tv, in.engine.student_virtual_step(in.student, os.grad, xi_s)};
}

TEST(StudentValGrad, DegenerateFactorsGiveExactZero) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto in = instance(seed);
    for (auto [lambda, xi_t, xi_s] : {std::tuple{0.0, 0.5, 0.5}, {1.0, 0.0, 0.5}, {1.0, 0.5, 0.0}}) {
      const auto p = virtual_steps(in, lambda, xi_t, xi_s);
      const auto r = in.engine.grad_arch_student_val(in.teacher, p.tv, in.student, p.sv, in.arch, in.data, lambda, xi_t,
                                                     xi_s, 0.01);
      EXPECT_EQ(r.grad.size(), in.arch.scalars().size());
      EXPECT_TRUE(all_zero(r.grad)) << lambda << " " << xi_t << " " << xi_s;
    }
  }
}

TEST(StudentValGrad, MatchesCoordinateFiniteDifferences) {
  SearchConfig c;
  c.objective = ObjectiveMode::kAblation1;  // O_v = L(S', D_s^val)
  c.gamma = 1.0;
  auto in = instance(0, c);
  const auto p = virtual_steps(in, 1.0, 0.5, 0.5);
  const auto r = in.engine.grad_arch_student_val(in.teacher, p.tv, in.student, p.sv, in.arch, in.data, 1.0, 0.5, 0.5,
                                                 0.01);
  const auto ref = oracle::fd_hypergradient(
      oracle::composed_objective(in.engine, in.teacher, in.student, in.arch, in.data), in.arch, 1e-4);
  EXPECT_GE(oracle::compare(r.grad, ref).cosine, 0.99);
}

TEST(StudentValGrad, HalvingStepBarelyChangesTerm) {
  auto in = instance(0);
  const auto p = virtual_steps(in, 1.0, 0.5, 0.5);
  const auto a = in.engine.grad_arch_student_val(in.teacher, p.tv, in.student, p.sv, in.arch, in.data, 1.0, 0.5, 0.5, 0.01);
  const auto b = in.engine.grad_arch_student_val(in.teacher, p.tv, in.student, p.sv, in.arch, in.data, 1.0, 0.5, 0.5, 0.005);
  EXPECT_LE(oracle::compare(b.grad, a.grad).relative_l2, 0.01);
}

// ---- architecture step --------------------------------------------------

TEST(ArchStep, ZeroRateLeavesArchUnchanged) {
  auto in = instance(0);
  const auto g = in.engine.arch_gradient(in.teacher, in.student, in.arch, in.data);
  EXPECT_EQ(arch_step(in.arch, g.combined, 0.0), in.arch);
}

TEST(ArchStep, ZeroGammaUsesTeacherTermAlone) {
  SearchConfig c;
  c.gamma = 0.0;
  auto in = instance(0, c);
  const auto g = in.engine.arch_gradient(in.teacher, in.student, in.arch, in.data);
  EXPECT_EQ(g.combined, g.teacher_val);
}

TEST(ArchStep, FirstStepComposesSubOperations) {
  SearchConfig c;
  c.gamma = 0.7;
  c.eta = 0.3;
  auto in = instance(0, c);
  in.arch = in.engine.init_arch();  // uniform
  const auto g = in.engine.arch_gradient(in.teacher, in.student, in.arch, in.data);
  const auto p = virtual_steps(in, c.lambda, 0.5, 0.5);
  const auto tv = in.engine.grad_arch_teacher_val(in.teacher, p.tv, in.arch, in.data.teacher_train, in.data.teacher_val,
                                                  0.5, c.c_fd);
  const auto sv = in.engine.grad_arch_student_val(in.teacher, p.tv, in.student, p.sv, in.arch, in.data, c.lambda, 0.5,
                                                  0.5, c.c_fd);
  const ArchParams got = ArchStepper(in.engine.config()).step(in.arch, g.combined);
  for (std::size_t i = 0; i < in.arch.scalars().size(); ++i) {
    EXPECT_EQ(got.scalars()[i], in.arch.scalars()[i] - 0.3 * (tv.grad[i] + 0.7 * sv.grad[i]));
  }
}

TEST(ArchStep, RejectsNonFiniteGradient) {
  const ArchParams a(2, 1);
  std::vector<double> g(a.scalars().size(), 0.0);
  g[3] = std::nan("");
  EXPECT_THROW(arch_step(a, g, 0.1), NonFiniteError);
}

TEST(ArchStep, MomentumAndAdamMove) {
  for (auto opt : {ArchOptimizer::kMomentum, ArchOptimizer::kAdam}) {
    SearchConfig c;
    c.arch_optimizer = opt;
    c.eta = 0.1;
    ArchStepper stepper(c);
    ArchParams a(1, 1);
    std::vector<double> g(a.scalars().size(), 1.0);
    a = stepper.step(a, g);
    EXPECT_NEAR(a.scalars()[0], -0.1, 1e-6);  // first adam step is eta * sign
    const double first = a.scalars()[0];
    a = stepper.step(a, g);
    EXPECT_LT(a.scalars()[0], 2 * first + 1e-12);
  }
}

// ---- ablations ----------------------------------------------------------

TEST(Ablation, SettingTwoWithEmptyPoolLeavesStudent) {
  SearchConfig c;
  c.objective = ObjectiveMode::kAblation2;
  auto in = instance(0, c);
  const auto pl = in.engine.pseudo_label(in.arch, in.teacher, ad::Tensor(0, 2));
  const auto os = in.engine.student_objective(in.student, in.data.student_train, pl, 1.0);
  EXPECT_TRUE(all_zero(os.grad));
  EXPECT_EQ(in.engine.student_virtual_step(in.student, os.grad, 0.5), in.student);
}

TEST(Ablation, SettingOneUsesStudentTermOnly) {
  SearchConfig c;
  c.objective = ObjectiveMode::kAblation1;
  c.gamma = 1.0;
  c.eta = 0.4;
  auto in = instance(0, c);
  const auto g = in.engine.arch_gradient(in.teacher, in.student, in.arch, in.data);
  const auto p = virtual_steps(in, c.lambda, 0.5, 0.5);
  const auto sv = in.engine.grad_arch_student_val(in.teacher, p.tv, in.student, p.sv, in.arch, in.data, c.lambda, 0.5,
                                                  0.5, c.c_fd);
  const ArchParams got = ArchStepper(in.engine.config()).step(in.arch, g.combined);
  for (std::size_t i = 0; i < sv.grad.size(); ++i) EXPECT_EQ(got.scalars()[i], in.arch.scalars()[i] - 0.4 * sv.grad[i]);
}

TEST(Ablation, FullMinusSettingOneIsTeacherTerm) {
  SearchConfig full;
  full.eta = 0.4;
  SearchConfig ab1 = full;
  ab1.objective = ObjectiveMode::kAblation1;
  auto a = instance(3, full);
  auto b = instance(3, ab1);
  const auto ga = a.engine.arch_gradient(a.teacher, a.student, a.arch, a.data);
  const auto gb = b.engine.arch_gradient(b.teacher, b.student, b.arch, b.data);
  const ArchParams ua = arch_step(a.arch, ga.combined, 0.4);
  const ArchParams ub = arch_step(b.arch, gb.combined, 0.4);
  for (std::size_t i = 0; i < ga.combined.size(); ++i) {
    EXPECT_NEAR(ub.scalars()[i] - ua.scalars()[i], 0.4 * ga.teacher_val[i], 1e-15);
  }
}

// ---- evaluation ---------------------------------------------------------

TEST(ErrorRate, PerfectAndConstantPredictors) {
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  ad::Tensor perfect(8, 4);
  for (std::size_t i = 0; i < 8; ++i) perfect(i, static_cast<std::size_t>(labels[i])) = 5.0;
  EXPECT_EQ(error_rate(perfect, labels), 0.0);
  EXPECT_EQ(error_rate(ad::Tensor(8, 4, 1.0), labels), 0.75);  // ties go to class 0
  EXPECT_THROW(error_rate(ad::Tensor(0, 4), std::vector<int>{}), Error);
}

TEST(ErrorRate, MatchesHandCount) {
  auto in = instance(0);
  data::TaskSpec task{.seed = 11};
  task.sizes.test = 50;
  const auto b = data::generate(task);
  const ad::Tensor logits = in.engine.teacher_logits(in.teacher, in.arch, b.test.x);
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < 50; ++r) {
    int best = 0;
    for (int c = 1; c < 3; ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    wrong += best != b.test.labels[r];
  }
  EXPECT_DOUBLE_EQ(error_rate(logits, b.test.labels), static_cast<double>(wrong) / 50.0);
}

// ---- run_search ---------------------------------------------------------

TEST(Search, ZeroEpochsKeepsUniformArch) {
  SearchConfig c = short_run(0);
  const auto r = run_search(c, blobs(0));
  EXPECT_TRUE(r.trace.empty());
  EXPECT_TRUE(all_zero(r.arch.scalars().values()));
  for (auto op : r.genotype.ops) EXPECT_EQ(op, model::CandidateOp::kIdentity);
  EXPECT_EQ(r.teacher_test_error, r.initial_teacher_test_error);
}

TEST(Search, NoTeachingMatchesBaselineBitForBit) {
  for (std::uint64_t seed : {0u, 1u}) {
    SearchConfig c = short_run(15);
    c.seed = seed;
    c.lambda = 0.0;
    c.gamma = 0.0;
    SearchConfig base = c;
    base.objective = ObjectiveMode::kBaseline;
    const auto bundle = blobs(seed);
    const auto a = run_search(c, bundle);
    const auto b = run_search(base, bundle);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].arch, b.trace[i].arch) << i;
    EXPECT_EQ(a.arch, b.arch);
  }
}

TEST(Search, ZeroGammaMakesStudentIrrelevantToArch) {
  SearchConfig c = short_run(10);
  c.gamma = 0.0;
  SearchConfig other = c;
  other.lambda = 3.0;
  other.xi_s = 0.7;
  const auto bundle = blobs(4);
  EXPECT_EQ(run_search(c, bundle).arch, run_search(other, bundle).arch);
}

TEST(Search, TraceIdentitiesAndNormalisation) {
  for (auto mode : {ObjectiveMode::kFull, ObjectiveMode::kAblation1, ObjectiveMode::kAblation2}) {
    SearchConfig c = short_run(12);
    c.objective = mode;
    c.lambda = 0.7;
    c.gamma = 1.3;
    const auto r = run_search(c, blobs(2));
    ASSERT_EQ(r.trace.size(), 12u);
    for (const auto& t : r.trace) {
      EXPECT_NEAR(t.o_s, t.human_weight * t.o_s_human + t.lambda * t.o_s_pseudo, 1e-12);
      EXPECT_NEAR(t.o_v, t.teacher_val_weight * t.o_v_teacher_val + t.gamma * t.o_v_student_val, 1e-12);
      EXPECT_LE(t.pseudo_label_max_row_error, 1e-9);
      EXPECT_GT(t.o_s_pseudo, 0.0);
    }
  }
}

TEST(Search, TraceComponentsMatchIndependentRecomputation) {
  // Replays the first iteration by hand and checks the logged components.
  SearchConfig c = short_run(1);
  const auto bundle = blobs(5);
  const auto r = run_search(c, bundle);
  SearchConfig cc = c;
  cc.teacher.input_dim = cc.student.input_dim = 2;
  const Engine e(cc);
  const StageData d = full_stage_data(bundle);
  WeightSet t = e.init_teacher(), s = e.init_student();
  const ArchParams a = e.init_arch();
  vec::Vector g;
  const double l0 = e.teacher_loss(t, a, d.teacher_train, &g);
  EXPECT_EQ(r.trace[0].teacher_train_loss, l0);
  t = t.shifted(-c.committed_lr_t(), g);
  const auto os = e.student_objective(s, d.student_train, e.pseudo_label(a, t, d.unlabeled), c.lambda);
  s = e.student_virtual_step(s, os.grad, c.committed_lr_s());
  const WeightSet tv = e.teacher_virtual_step(t, a, d.teacher_train, c.xi_t);
  const auto pl = e.pseudo_label(a, tv, d.unlabeled);
  const double human = oracle_ce(e.student().forward(s, d.student_train.x), d.student_train.y);
  const double pseudo = oracle_ce(e.student().forward(s, pl.x), pl.y);
  EXPECT_NEAR(r.trace[0].o_s_human, human, 1e-12);
  EXPECT_NEAR(r.trace[0].o_s_pseudo, pseudo, 1e-12);
  const double tval = oracle_ce(e.teacher().forward(&a, tv, d.teacher_val.x), d.teacher_val.y);
  EXPECT_NEAR(r.trace[0].o_v_teacher_val, tval, 1e-12);
}

TEST(Search, LearnsBlobs) {
  SearchConfig c;  // defaults: 200 full-batch iterations
  const auto r = run_search(c, blobs(0));
  EXPECT_EQ(r.trace.size(), 200u);
  EXPECT_LT(r.teacher_test_error, 2.0 / 3.0);
  EXPECT_LE(r.teacher_test_error, r.initial_teacher_test_error);
  for (auto op : r.genotype.ops) EXPECT_NE(op, model::CandidateOp::kZero);
}

TEST(Search, DeterministicPerSeed) {
  for (std::size_t batch : {0u, 16u}) {
    SearchConfig c = short_run(4);
    c.batch_size = batch;
    const auto bundle = blobs(1);
    const auto a = run_search(c, bundle), b = run_search(c, bundle);
    EXPECT_EQ(a.arch, b.arch);
    EXPECT_EQ(a.teacher, b.teacher);
    EXPECT_EQ(a.student, b.student);
  }
}

TEST(Search, MiniBatchRunsEpochTimesBatches) {
  SearchConfig c = short_run(2);
  c.batch_size = 16;  // 60 teacher-train rows: 4 batches per epoch
  const auto r = run_search(c, blobs(1));
  EXPECT_EQ(r.trace.size(), 8u);
  for (const auto& t : r.trace) EXPECT_LE(t.pseudo_label_max_row_error, 1e-9);
}

TEST(Search, ExactUnrolledAndOptimiserVariantsRun) {
  SearchConfig c = short_run(3);
  c.hypergrad = HypergradMode::kExactUnrolled;
  EXPECT_EQ(run_search(c, blobs(0)).trace.size(), 3u);
  c.hypergrad = HypergradMode::kFiniteDifference;
  c.arch_optimizer = ArchOptimizer::kAdam;
  EXPECT_EQ(run_search(c, blobs(0)).trace.size(), 3u);
}

TEST(Search, DivergenceGuardAborts) {
  SearchConfig c = short_run(5);
  c.divergence_threshold = 0.5;
  try {
    run_search(c, blobs(0));
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos) << e.what();
  }
}

TEST(Search, ConfigErrors) {
  SearchConfig c = short_run(1);
  auto bundle = blobs(0);
  bundle.unlabeled = data::Dataset{ad::Tensor(0, 2), {}, {}, false};
  EXPECT_THROW(run_search(c, bundle), ConfigError);
  c.lambda = 0.0;
  EXPECT_NO_THROW(run_search(c, bundle));
  c.lambda = -1.0;
  EXPECT_THROW(run_search(c, blobs(0)), ConfigError);
  EXPECT_THROW(parse_objective_mode("ablation3"), ConfigError);
}

TEST(Search, UnrolledCeilingIsEnforced) {
  SearchConfig c;
  c.unrolled_param_ceiling = 10;
  auto in = oracle::tiny_instance(0, c);
  EXPECT_THROW(in.engine.unrolled_arch_gradient(in.teacher, in.student, in.arch, in.data), ConfigError);
}

}  // namespace
}  // namespace lbt::engine
