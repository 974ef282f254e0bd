// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

#include "lbt/model/student.hpp"
#include "lbt/model/teacher.hpp"

namespace lbt::engine {

enum class HypergradMode : std::uint8_t { kFiniteDifference, kExactUnrolled };

/// full: both validation terms. ablation1: architecture update from the
/// student validation term only. ablation2: the student trains on pseudo-labels
/// only. baseline: teacher-only bilevel search, no student at all.
enum class ObjectiveMode : std::uint8_t { kFull, kAblation1, kAblation2, kBaseline };

enum class ArchOptimizer : std::uint8_t { kSgd, kMomentum, kAdam };

HypergradMode parse_hypergrad_mode(std::string_view s);
ObjectiveMode parse_objective_mode(std::string_view s);
ArchOptimizer parse_arch_optimizer(std::string_view s);
std::string_view name(HypergradMode m);
std::string_view name(ObjectiveMode m);
std::string_view name(ArchOptimizer m);

struct SearchConfig {
  double lambda = 1.0;
  double gamma = 1.0;
  double xi_t = 0.1;
  double xi_s = 0.1;
  double eta = 0.5;
  /// Committed step rates; a negative value means "same as the virtual rate".
  double lr_t = -1.0;
  double lr_s = -1.0;
  std::size_t epochs = 200;
  std::size_t batch_size = 0;  // 0 = full batch
  double c_fd = 0.01;
  HypergradMode hypergrad = HypergradMode::kFiniteDifference;
  ObjectiveMode objective = ObjectiveMode::kFull;
  ArchOptimizer arch_optimizer = ArchOptimizer::kSgd;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double divergence_threshold = 1e6;
  /// Exact-unrolled mode refuses networks above this many parameters.
  std::size_t unrolled_param_ceiling = 20000;
  std::uint64_t seed = 0;

  model::TeacherSpec teacher;
  model::StudentSpec student = model::student_preset("small", 2, 3);

  double committed_lr_t() const { return lr_t < 0 ? xi_t : lr_t; }
  double committed_lr_s() const { return lr_s < 0 ? xi_s : lr_s; }
  /// Weight of L(T', A, D_t^val) in O_v.
  double teacher_val_weight() const { return objective == ObjectiveMode::kAblation1 ? 0.0 : 1.0; }
  /// Weight of L(S', D_s^val) in O_v.
  double student_val_weight() const { return objective == ObjectiveMode::kBaseline ? 0.0 : gamma; }
  /// Weight of the human-label term in O_s.
  double human_weight() const { return objective == ObjectiveMode::kAblation2 ? 0.0 : 1.0; }
  bool has_student() const { return objective != ObjectiveMode::kBaseline; }
};

/// Throws ConfigError naming the offending field.
void validate(const SearchConfig& c);

}  // namespace lbt::engine
