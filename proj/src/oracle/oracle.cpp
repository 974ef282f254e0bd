// SPDX-License-Identifier: Apache-2.0
#include "lbt/oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "lbt/error.hpp"
#include "lbt/rng.hpp"

namespace lbt::oracle {

GradComparison compare(std::span<const double> candidate, std::span<const double> reference, bool with_table) {
  vec::require_same_size(candidate, reference);
  GradComparison c;
  c.candidate_norm = vec::norm(candidate);
  c.reference_norm = vec::norm(reference);
  if (c.reference_norm == 0.0) throw Error("comparison against a zero reference gradient is undefined");
  const double denom = c.candidate_norm * c.reference_norm;
  c.cosine = denom == 0.0 ? 0.0 : std::clamp(vec::dot(candidate, reference) / denom, -1.0, 1.0);
  c.relative_l2 = vec::norm(vec::sub(candidate, reference)) / c.reference_norm;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    c.max_abs_error = std::max(c.max_abs_error, std::abs(candidate[i] - reference[i]));
    if (with_table) c.table.push_back({i, candidate[i], reference[i]});
  }
  return c;
}

nlohmann::json to_json(const GradComparison& c) {
  nlohmann::json j{{"cosine", c.cosine},
                   {"relative_l2", c.relative_l2},
                   {"max_abs_error", c.max_abs_error},
                   {"candidate_norm", c.candidate_norm},
                   {"reference_norm", c.reference_norm}};
  if (!c.table.empty()) {
    auto& rows = j["coordinates"] = nlohmann::json::array();
    for (const auto& r : c.table) rows.push_back({{"index", r.index}, {"candidate", r.candidate}, {"reference", r.reference}});
  }
  return j;
}

vec::Vector fd_hypergradient(const ArchObjective& objective, const model::ArchParams& arch, double h,
                             std::size_t threads) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  const std::size_t n = arch.scalars().size();
  vec::Vector grad(n, 0.0);
  auto coordinate = [&](std::size_t i) {
    model::ArchParams plus = arch, minus = arch;
    plus.scalars()[i] += h;
    minus.scalars()[i] -= h;
    const double fp = objective(plus), fm = objective(minus);
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFiniteError("objective is not finite at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) coordinate(i);
    return grad;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) coordinate(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return grad;
}

ArchObjective composed_objective(const engine::Engine& engine, const model::WeightSet& t, const model::WeightSet& s,
                                 const model::ArchParams& arch, const engine::StageData& data) {
  return [&engine, &t, &s, arch, &data](const model::ArchParams& a) {
    return engine.val_objective(t, s, a, arch, data).value;
  };
}

vec::Vector unrolled_hypergradient(const engine::Engine& engine, const model::WeightSet& t, const model::WeightSet& s,
                                   const model::ArchParams& arch, const engine::StageData& data) {
  return engine.unrolled_arch_gradient(t, s, arch, data).combined;
}

Instance tiny_instance(std::uint64_t seed, engine::SearchConfig config) {
  config.seed = seed;
  config.teacher = model::TeacherSpec{.input_dim = 2, .hidden = 3, .classes = 3, .nodes = 2, .cells = 1};
  config.student = model::StudentSpec{.input_dim = 2, .classes = 3, .hidden = {4}, .capacity = "small"};
  data::TaskSpec task{.classes = 3, .feature_dim = 2, .separation = 1.5, .seed = derive_seed(seed, "tiny.data")};
  task.sizes = {12, 12, 12, 12, 12, 12};
  const data::DataBundle bundle = data::generate(task);
  engine::Engine e(config);
  Rng rng(derive_seed(seed, "tiny.arch"));
  model::ArchParams arch = e.init_arch();
  for (double& v : arch.scalars().values()) v = 0.5 * rng.normal();
  model::WeightSet t = e.init_teacher();
  model::WeightSet s = e.init_student();
  return Instance{std::move(e), std::move(t), std::move(s), std::move(arch), engine::full_stage_data(bundle)};
}

}  // namespace lbt::oracle
