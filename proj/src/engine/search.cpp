// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cmath>

#include "lbt/engine/engine.hpp"
#include "lbt/error.hpp"
#include "lbt/rng.hpp"

namespace lbt::engine {

namespace {

ad::Tensor take_rows(const ad::Tensor& x, std::span<const std::size_t> rows) {
  ad::Tensor out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = x.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * x.cols()));
  }
  return out;
}

// min(size, n) distinct rows, partial Fisher-Yates.
std::vector<std::size_t> sample_rows(std::size_t n, std::size_t size, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const std::size_t k = std::min(n, size);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(k);
  return idx;
}

Batch sample(const Batch& b, std::size_t size, Rng& rng) {
  const auto rows = sample_rows(b.size(), size, rng);
  return Batch{take_rows(b.x, rows), take_rows(b.y, rows)};
}

// Independent sampling streams for every (stage, split) pair.
struct Sampler {
  std::size_t batch_size;
  std::vector<Rng> streams;
  Sampler(std::uint64_t seed, std::size_t batch) : batch_size(batch) {
    for (const char* name : {"s1.ttr", "s2.str", "s2.u", "s3.ttr", "s3.tval", "s3.str", "s3.sval", "s3.u"}) {
      streams.emplace_back(derive_seed(seed, std::string("batch.") + name));
    }
  }
  Batch labeled(const Batch& b, std::size_t stream) { return sample(b, batch_size, streams[stream]); }
  ad::Tensor inputs(const ad::Tensor& x, std::size_t stream) {
    return take_rows(x, sample_rows(x.rows(), batch_size, streams[stream]));
  }
};

void guard(const SearchConfig& c, std::size_t it, const char* what, double value) {
  if (!std::isfinite(value) || std::abs(value) > c.divergence_threshold) {
    throw DivergenceError("diverged at iteration " + std::to_string(it) + ": " + what + " = " + std::to_string(value) +
                          " (threshold " + std::to_string(c.divergence_threshold) + ")");
  }
}

}  // namespace

SearchResult run_search(const SearchConfig& config_in, const data::DataBundle& bundle, const TraceSink& sink) {
  SearchConfig config = config_in;
  config.teacher.input_dim = config.student.input_dim = bundle.feature_dim;
  config.teacher.classes = config.student.classes = bundle.classes;
  const Engine engine(config);
  const SearchConfig& c = engine.config();
  if (c.has_student() && c.lambda != 0.0 && bundle.unlabeled.empty()) {
    throw ConfigError("the unlabeled pool may be empty only when lambda = 0");
  }

  const StageData full = full_stage_data(bundle);
  if (full.teacher_train.empty() || full.teacher_val.empty()) throw ConfigError("teacher splits must be non-empty");
  if (c.has_student() && (full.student_train.empty() || full.student_val.empty())) {
    throw ConfigError("student splits must be non-empty");
  }

  SearchResult result;
  model::ArchParams a = engine.init_arch();
  model::WeightSet t = engine.init_teacher();
  model::WeightSet s = c.has_student() ? engine.init_student() : model::WeightSet{};
  ArchStepper stepper(c);
  result.initial_teacher_test_error = error_rate(engine.teacher_logits(t, a, bundle.test.x), bundle.test.labels);

  const bool full_batch = c.batch_size == 0;
  const std::size_t per_epoch =
      full_batch ? 1 : (full.teacher_train.size() + c.batch_size - 1) / c.batch_size;
  Sampler sampler(c.seed, c.batch_size);

  const std::size_t iterations = c.epochs * per_epoch;
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto start = std::chrono::steady_clock::now();
    StepTrace tr;
    tr.iteration = it;
    tr.lambda = c.lambda;
    tr.gamma = c.gamma;
    tr.human_weight = c.human_weight();
    tr.teacher_val_weight = c.teacher_val_weight();
    tr.student_val_weight = c.student_val_weight();
    tr.xi_t = c.xi_t;
    tr.xi_s = c.xi_s;
    tr.eta = c.eta;
    try {
      // Stage 1: committed teacher step.
      {
        const Batch ttr = full_batch ? Batch{} : sampler.labeled(full.teacher_train, 0);
        vec::Vector g;
        tr.teacher_train_loss = engine.teacher_loss(t, a, full_batch ? full.teacher_train : ttr, &g);
        guard(c, it, "teacher train loss", tr.teacher_train_loss);
        tr.grad_norm_t = vec::norm(g);
        t = t.shifted(-c.committed_lr_t(), g);
      }
      // Stage 2: pseudo-labels from the updated teacher, committed student step.
      if (c.has_student()) {
        const Batch str = full_batch ? Batch{} : sampler.labeled(full.student_train, 1);
        const ad::Tensor u = full_batch ? ad::Tensor{} : sampler.inputs(full.unlabeled, 2);
        const PseudoLabeledSet pl = engine.pseudo_label(a, t, full_batch ? full.unlabeled : u);
        tr.pseudo_label_max_row_error = max_row_sum_error(pl);
        const StudentObjective os = engine.student_objective(s, full_batch ? full.student_train : str, pl, c.lambda);
        guard(c, it, "student objective", os.value);
        tr.student_train_loss = os.value;
        tr.grad_norm_s = vec::norm(os.grad);
        s = engine.student_virtual_step(s, os.grad, c.committed_lr_s());
      }
      // Stage 3: architecture update through fresh virtual steps.
      Engine::ArchGrad ag;
      if (full_batch) {
        ag = engine.arch_gradient(t, s, a, full);
      } else {
        const StageData d{sampler.labeled(full.teacher_train, 3), sampler.labeled(full.teacher_val, 4),
                          sampler.labeled(full.student_train, 5), sampler.labeled(full.student_val, 6),
                          sampler.inputs(full.unlabeled, 7)};
        ag = engine.arch_gradient(t, s, a, d);
      }
      tr.o_s_human = ag.student.human;
      tr.o_s_pseudo = ag.student.pseudo;
      tr.o_s = ag.student.value;
      tr.o_v_teacher_val = ag.objective.teacher_val;
      tr.o_v_student_val = ag.objective.student_val;
      tr.o_v = ag.objective.value;
      tr.grad_norm_a_teacher_val = vec::norm(ag.teacher_val);
      tr.grad_norm_a_student_val = ag.student_val.empty() ? 0.0 : vec::norm(ag.student_val);
      tr.grad_norm_a = vec::norm(ag.combined);
      tr.pseudo_label_max_row_error = std::max(tr.pseudo_label_max_row_error, ag.pseudo_row_error);
      guard(c, it, "O_s", tr.o_s);
      guard(c, it, "O_v", tr.o_v);
      guard(c, it, "architecture gradient norm", tr.grad_norm_a);
      a = stepper.step(a, ag.combined);
    } catch (const NonFiniteError& e) {
      throw DivergenceError("diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    tr.arch.assign(a.scalars().values().begin(), a.scalars().values().end());
    tr.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (sink) sink(tr);
    result.trace.push_back(std::move(tr));
  }

  result.genotype = model::derive_genotype(a);
  result.teacher_test_error = error_rate(engine.teacher_logits(t, a, bundle.test.x), bundle.test.labels);
  if (c.has_student()) {
    result.student_test_error = error_rate(engine.student_logits(s, bundle.test.x), bundle.test.labels);
  }
  result.arch = std::move(a);
  result.teacher = std::move(t);
  result.student = std::move(s);
  return result;
}

}  // namespace lbt::engine
