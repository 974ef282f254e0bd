// SPDX-License-Identifier: Apache-2.0
//
// Three-stage search: the teacher trains on its own data, teaches a student
// through soft pseudo-labels, and updates its architecture from the
// validation losses of both, differentiated through one-step virtual updates.
#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "lbt/autodiff/graph.hpp"
#include "lbt/autodiff/vec.hpp"
#include "lbt/data/dataset.hpp"
#include "lbt/engine/config.hpp"
#include "lbt/model/arch.hpp"
#include "lbt/model/weights.hpp"

namespace lbt::engine {

/// Inputs with target distributions (one-hot for human labels).
struct Batch {
  ad::Tensor x;
  ad::Tensor y;
  std::size_t size() const { return x.rows(); }
  bool empty() const { return size() == 0; }
};

Batch labeled_batch(const data::Dataset& set, std::size_t classes);

/// D_pl: unlabeled inputs with teacher-predicted class distributions.
using PseudoLabeledSet = Batch;

/// Largest |row sum - 1| over the targets; 0 for an empty set.
double max_row_sum_error(const PseudoLabeledSet& pl);

struct StudentObjective {
  double human = 0.0;   // L(S, D_s^tr)
  double pseudo = 0.0;  // L(S, D_pl)
  double value = 0.0;   // human_weight * human + lambda * pseudo
  vec::Vector grad;     // d value / dS
};

struct TeacherValGrad {
  vec::Vector grad;      // direct - xi_t * hvp
  vec::Vector direct;    // partial of L(T', A, D_t^val) in A
  vec::Vector hvp;       // approximation of grad^2_{A,T} L(T, A, D_t^tr) . v
  double val_loss = 0.0; // L(T', A, D_t^val)
  double v_norm = 0.0;
};

struct StudentValGrad {
  vec::Vector grad;
  double val_loss = 0.0;  // L(S', D_s^val)
  double v_norm = 0.0;
  double u_norm = 0.0;
};

/// The datasets one hypergradient evaluation sees.
struct StageData {
  Batch teacher_train;
  Batch teacher_val;
  Batch student_train;
  Batch student_val;
  ad::Tensor unlabeled;  // inputs only
};

StageData full_stage_data(const data::DataBundle& bundle);

/// Values of the one-step-approximated validation objective.
struct ValObjective {
  double teacher_val = 0.0;
  double student_val = 0.0;
  double value = 0.0;  // teacher_val_weight * teacher_val + student_val_weight * student_val
};

/// Compiled programs for one (teacher, student, config) triple. Every
/// operation is const and leaves its arguments untouched.
class Engine {
 public:
  explicit Engine(SearchConfig config);
  ~Engine();
  Engine(Engine&&) noexcept;
  Engine& operator=(Engine&&) noexcept;

  const SearchConfig& config() const { return config_; }
  const model::TeacherNet& teacher() const { return teacher_; }
  const model::StudentNet& student() const { return student_; }
  std::size_t total_parameters() const;

  model::ArchParams init_arch() const;
  model::WeightSet init_teacher() const;
  model::WeightSet init_student() const;

  /// L(T, A, D) and optionally its gradients in T (layout order) and A.
  double teacher_loss(const model::WeightSet& t, const model::ArchParams& a, const Batch& d,
                      vec::Vector* grad_t = nullptr, vec::Vector* grad_a = nullptr) const;
  ad::Tensor teacher_logits(const model::WeightSet& t, const model::ArchParams& a, const ad::Tensor& x) const;
  double student_loss(const model::WeightSet& s, const Batch& d, vec::Vector* grad_s = nullptr) const;
  ad::Tensor student_logits(const model::WeightSet& s, const ad::Tensor& x) const;

  PseudoLabeledSet pseudo_label(const model::ArchParams& a, const model::WeightSet& t, const ad::Tensor& unlabeled) const;

  /// T - xi * grad_T L(T, A, D).
  model::WeightSet teacher_virtual_step(const model::WeightSet& t, const model::ArchParams& a, const Batch& d,
                                        double xi) const;

  /// O_s with weights from the config (human term) and the given lambda.
  StudentObjective student_objective(const model::WeightSet& s, const Batch& student_train,
                                     const PseudoLabeledSet& pl, double lambda) const;

  /// S - xi * grad.
  model::WeightSet student_virtual_step(const model::WeightSet& s, std::span<const double> grad, double xi) const;

  TeacherValGrad grad_arch_teacher_val(const model::WeightSet& t, const model::WeightSet& t_virtual,
                                       const model::ArchParams& a, const Batch& teacher_train,
                                       const Batch& teacher_val, double xi_t, double c_fd) const;

  StudentValGrad grad_arch_student_val(const model::WeightSet& t, const model::WeightSet& t_virtual,
                                       const model::WeightSet& s, const model::WeightSet& s_virtual,
                                       const model::ArchParams& a, const StageData& d, double lambda, double xi_t,
                                       double xi_s, double c_fd) const;

  /// Hypergradient result of one architecture-gradient evaluation.
  struct ArchGrad {
    vec::Vector teacher_val;  // gradient of L(T', A, D_t^val)
    vec::Vector student_val;  // gradient of L(S', D_s^val), empty if unused
    vec::Vector combined;     // teacher_val_weight * teacher_val + gamma * student_val
    ValObjective objective;
    StudentObjective student;  // O_s at the virtual step
    double pseudo_row_error = 0.0;
  };

  /// Virtual steps from (T, S) followed by the configured hypergradient mode.
  ArchGrad arch_gradient(const model::WeightSet& t, const model::WeightSet& s, const model::ArchParams& a,
                         const StageData& d) const;

  /// Exact gradient of O_v(A) through both virtual steps, by reverse-over-reverse
  /// differentiation. The pseudo-labeling forward holds A fixed.
  ArchGrad unrolled_arch_gradient(const model::WeightSet& t, const model::WeightSet& s, const model::ArchParams& a,
                                  const StageData& d) const;

  /// O_v as a pure function of the architecture `a`; pseudo-labels use
  /// `a_pseudo` in the teacher forward (the point the gradient is taken at).
  ValObjective val_objective(const model::WeightSet& t, const model::WeightSet& s, const model::ArchParams& a,
                             const model::ArchParams& a_pseudo, const StageData& d) const;

 private:
  struct Programs;
  SearchConfig config_;
  model::TeacherNet teacher_;
  model::StudentNet student_;
  std::unique_ptr<Programs> programs_;
};

/// Optimiser state for the architecture update.
class ArchStepper {
 public:
  explicit ArchStepper(const SearchConfig& config) : config_(config) {}
  /// A <- A - eta * step(grad); plain SGD is A - eta * grad.
  model::ArchParams step(const model::ArchParams& a, std::span<const double> grad);

 private:
  SearchConfig config_;
  vec::Vector m_;
  vec::Vector v_;
  std::size_t t_ = 0;
};

/// Combined gradient: teacher_val_weight * g_tv + gamma * g_sv (g_sv may be empty).
vec::Vector combine_arch_gradients(const SearchConfig& config, std::span<const double> g_tv,
                                   std::span<const double> g_sv);

/// Plain gradient-descent update A - eta * grad.
model::ArchParams arch_step(const model::ArchParams& a, std::span<const double> grad, double eta);

struct StepTrace {
  std::size_t iteration = 0;
  double teacher_train_loss = 0.0;   // L(T, A, D_t^tr) before the committed step
  double student_train_loss = 0.0;   // O_s of the committed student step
  double o_s = 0.0;
  double o_s_human = 0.0;
  double o_s_pseudo = 0.0;
  double o_v = 0.0;
  double o_v_teacher_val = 0.0;
  double o_v_student_val = 0.0;
  double grad_norm_t = 0.0;
  double grad_norm_s = 0.0;
  double grad_norm_a = 0.0;
  double grad_norm_a_teacher_val = 0.0;
  double grad_norm_a_student_val = 0.0;
  double pseudo_label_max_row_error = 0.0;
  double lambda = 0.0;
  double gamma = 0.0;
  double human_weight = 0.0;
  double teacher_val_weight = 0.0;
  double student_val_weight = 0.0;
  double xi_t = 0.0;
  double xi_s = 0.0;
  double eta = 0.0;
  /// Architecture scalars after this iteration's update.
  std::vector<double> arch;
  double wall_time_s = 0.0;
};

/// Test-set classification error: argmax (lowest index on ties) != label.
double error_rate(const ad::Tensor& logits, std::span<const int> labels);

struct SearchResult {
  model::ArchParams arch;
  model::Genotype genotype;
  model::WeightSet teacher;
  model::WeightSet student;
  std::vector<StepTrace> trace;
  double initial_teacher_test_error = 0.0;
  double teacher_test_error = 0.0;
  std::optional<double> student_test_error;
};

using TraceSink = std::function<void(const StepTrace&)>;

/// Runs the full search loop. Throws DivergenceError if a loss exceeds the threshold or
/// stops being finite.
SearchResult run_search(const SearchConfig& config, const data::DataBundle& bundle, const TraceSink& sink = {});

}  // namespace lbt::engine
