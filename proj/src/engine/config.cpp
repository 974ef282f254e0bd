// SPDX-License-Identifier: Apache-2.0
#include "lbt/engine/config.hpp"

#include <cmath>
#include <string>

#include "lbt/error.hpp"

namespace lbt::engine {

HypergradMode parse_hypergrad_mode(std::string_view s) {
  if (s == "finite-difference" || s == "fd") return HypergradMode::kFiniteDifference;
  if (s == "exact-unrolled" || s == "unrolled") return HypergradMode::kExactUnrolled;
  throw ConfigError("hypergradient mode must be 'finite-difference' or 'exact-unrolled', got '" + std::string(s) + "'");
}

ObjectiveMode parse_objective_mode(std::string_view s) {
  if (s == "full") return ObjectiveMode::kFull;
  if (s == "ablation1") return ObjectiveMode::kAblation1;
  if (s == "ablation2") return ObjectiveMode::kAblation2;
  if (s == "baseline") return ObjectiveMode::kBaseline;
  throw ConfigError("objective mode must be full, ablation1, ablation2 or baseline, got '" + std::string(s) + "'");
}

ArchOptimizer parse_arch_optimizer(std::string_view s) {
  if (s == "sgd") return ArchOptimizer::kSgd;
  if (s == "momentum") return ArchOptimizer::kMomentum;
  if (s == "adam") return ArchOptimizer::kAdam;
  throw ConfigError("arch optimizer must be sgd, momentum or adam, got '" + std::string(s) + "'");
}

std::string_view name(HypergradMode m) {
  return m == HypergradMode::kFiniteDifference ? "finite-difference" : "exact-unrolled";
}

std::string_view name(ObjectiveMode m) {
  switch (m) {
    case ObjectiveMode::kFull: return "full";
    case ObjectiveMode::kAblation1: return "ablation1";
    case ObjectiveMode::kAblation2: return "ablation2";
    case ObjectiveMode::kBaseline: return "baseline";
  }
  return "unknown";
}

std::string_view name(ArchOptimizer m) {
  switch (m) {
    case ArchOptimizer::kSgd: return "sgd";
    case ArchOptimizer::kMomentum: return "momentum";
    case ArchOptimizer::kAdam: return "adam";
  }
  return "unknown";
}

void validate(const SearchConfig& c) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  auto finite = [](double v) { return std::isfinite(v); };
  need(finite(c.lambda) && c.lambda >= 0, "lambda must be finite and >= 0");
  need(finite(c.gamma) && c.gamma >= 0, "gamma must be finite and >= 0");
  // Zero rates are accepted: they are the degenerate cases the reductions test.
  need(finite(c.xi_t) && c.xi_t >= 0, "xi_t must be finite and >= 0");
  need(finite(c.xi_s) && c.xi_s >= 0, "xi_s must be finite and >= 0");
  need(finite(c.eta) && c.eta >= 0, "eta must be finite and >= 0");
  need(finite(c.lr_t), "lr_t must be finite");
  need(finite(c.lr_s), "lr_s must be finite");
  need(finite(c.c_fd) && c.c_fd > 0, "c_fd must be > 0");
  need(c.momentum >= 0 && c.momentum < 1, "momentum must lie in [0, 1)");
  need(c.adam_beta1 >= 0 && c.adam_beta1 < 1 && c.adam_beta2 >= 0 && c.adam_beta2 < 1,
       "adam betas must lie in [0, 1)");
  need(c.adam_eps > 0, "adam_eps must be > 0");
  need(c.divergence_threshold > 0, "divergence_threshold must be > 0");
  need(c.teacher.classes == c.student.classes, "teacher and student class counts differ");
  need(c.teacher.input_dim == c.student.input_dim, "teacher and student input dimensions differ");
}

}  // namespace lbt::engine
