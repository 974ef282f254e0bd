// SPDX-License-Identifier: Apache-2.0
#include "lbt/engine/engine.hpp"

#include <mutex>

#include "lbt/autodiff/loss.hpp"
#include "lbt/error.hpp"
#include "lbt/rng.hpp"

namespace lbt::engine {

using model::ArchParams;
using model::WeightSet;

namespace {

constexpr const char* kTeacherPrefix = "t.";
constexpr const char* kStudentPrefix = "s.";

vec::Vector flatten(const std::vector<ad::Tensor>& values, std::size_t begin, std::size_t end) {
  vec::Vector out;
  for (std::size_t i = begin; i < end; ++i) out.insert(out.end(), values[i].values().begin(), values[i].values().end());
  return out;
}

}  // namespace

Batch labeled_batch(const data::Dataset& set, std::size_t classes) {
  return Batch{set.x, data::targets(set, classes)};
}

double max_row_sum_error(const PseudoLabeledSet& pl) {
  double worst = 0.0;
  for (std::size_t r = 0; r < pl.y.rows(); ++r) {
    double s = 0.0;
    for (double v : pl.y.row_span(r)) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

StageData full_stage_data(const data::DataBundle& b) {
  return StageData{labeled_batch(b.teacher_train, b.classes), labeled_batch(b.teacher_val, b.classes),
                   labeled_batch(b.student_train, b.classes), labeled_batch(b.student_val, b.classes),
                   b.unlabeled.x};
}

// Each program is a static graph compiled once per engine and evaluated with
// fresh bindings on every call.
struct Engine::Programs {
  struct Teacher {
    ad::Graph g;
    std::vector<ad::NodeId> weights;
    ad::NodeId arch, logits, loss, grad_arch;
    std::vector<ad::NodeId> grad_weights;
  } teacher;

  struct Student {
    ad::Graph g;
    std::vector<ad::NodeId> weights;
    ad::NodeId logits, loss;
    std::vector<ad::NodeId> grad_weights;
  } student;

  // d/dT of CE(student(S, x), softmax(teacher(T, A, x))): the pseudo-label
  // coupling used by the student-path Hessian-vector product.
  struct Coupling {
    ad::Graph g;
    std::vector<ad::NodeId> grad_teacher;
  } coupling;

  struct Unrolled {
    ad::Graph g;
    ad::NodeId teacher_val, student_val, human, pseudo, pseudo_labels, grad_tv, grad_sv;
  };
  std::once_flag unrolled_once;
  std::unique_ptr<Unrolled> unrolled;
};

Engine::Engine(SearchConfig config)
    : config_(std::move(config)), teacher_(config_.teacher), student_(config_.student),
      programs_(std::make_unique<Programs>()) {
  validate(config_);
  const std::size_t k = config_.teacher.classes;
  {
    auto& p = programs_->teacher;
    const auto x = p.g.input("x", config_.teacher.input_dim);
    const auto y = p.g.input("y", k);
    p.weights = model::declare(p.g, teacher_.layout(), kTeacherPrefix);
    p.arch = p.g.parameter("arch", teacher_.num_edges(), model::kNumCandidates);
    p.logits = teacher_.build(p.g, p.weights, p.arch, x);
    p.loss = p.g.soft_cross_entropy(p.g.softmax(p.logits), y);
    std::vector<ad::NodeId> wrt = p.weights;
    wrt.push_back(p.arch);
    auto grads = p.g.gradients(p.loss, wrt);
    p.grad_arch = grads.back();
    grads.pop_back();
    p.grad_weights = std::move(grads);
  }
  {
    auto& p = programs_->student;
    const auto x = p.g.input("x", config_.student.input_dim);
    const auto y = p.g.input("y", k);
    p.weights = model::declare(p.g, student_.layout(), kStudentPrefix);
    p.logits = student_.build(p.g, p.weights, x);
    p.loss = p.g.soft_cross_entropy(p.g.softmax(p.logits), y);
    p.grad_weights = p.g.gradients(p.loss, p.weights);
  }
  {
    auto& p = programs_->coupling;
    const auto x = p.g.input("x", config_.student.input_dim);
    const auto tw = model::declare(p.g, teacher_.layout(), kTeacherPrefix);
    const auto sw = model::declare(p.g, student_.layout(), kStudentPrefix);
    const auto arch = p.g.parameter("arch", teacher_.num_edges(), model::kNumCandidates);
    const auto q = p.g.softmax(teacher_.build(p.g, tw, arch, x));
    const auto loss = p.g.soft_cross_entropy(p.g.softmax(student_.build(p.g, sw, x)), q);
    p.grad_teacher = p.g.gradients(loss, tw);
  }
}

Engine::~Engine() = default;
Engine::Engine(Engine&&) noexcept = default;
Engine& Engine::operator=(Engine&&) noexcept = default;

std::size_t Engine::total_parameters() const {
  return teacher_.layout().total() + student_.layout().total() + teacher_.num_edges() * model::kNumCandidates;
}

ArchParams Engine::init_arch() const {
  return model::init_arch(config_.teacher.nodes, config_.teacher.cells, derive_seed(config_.seed, "init.arch"));
}

WeightSet Engine::init_teacher() const {
  return model::init_weights(teacher_.layout(), derive_seed(config_.seed, "init.teacher"));
}

WeightSet Engine::init_student() const {
  return model::init_weights(student_.layout(), derive_seed(config_.seed, "init.student"));
}

double Engine::teacher_loss(const WeightSet& t, const ArchParams& a, const Batch& d, vec::Vector* grad_t,
                            vec::Vector* grad_a) const {
  if (d.empty()) {
    if (grad_t) *grad_t = vec::Vector(teacher_.layout().total(), 0.0);
    if (grad_a) *grad_a = vec::Vector(a.scalars().size(), 0.0);
    return 0.0;
  }
  const auto& p = programs_->teacher;
  ad::Bindings b;
  t.bind(b, kTeacherPrefix);
  b.bind("arch", a.scalars());
  b.bind("x", d.x);
  b.bind("y", d.y);
  std::vector<ad::NodeId> outputs{p.loss};
  if (grad_t) outputs.insert(outputs.end(), p.grad_weights.begin(), p.grad_weights.end());
  if (grad_a) outputs.push_back(p.grad_arch);
  const auto values = ad::evaluate(p.g, b, outputs);
  if (grad_t) *grad_t = flatten(values, 1, 1 + p.grad_weights.size());
  if (grad_a) *grad_a = flatten(values, values.size() - 1, values.size());
  return values[0].item();
}

ad::Tensor Engine::teacher_logits(const WeightSet& t, const ArchParams& a, const ad::Tensor& x) const {
  const auto& p = programs_->teacher;
  ad::Bindings b;
  t.bind(b, kTeacherPrefix);
  b.bind("arch", a.scalars());
  b.bind("x", x);
  return ad::evaluate(p.g, b, p.logits);
}

double Engine::student_loss(const WeightSet& s, const Batch& d, vec::Vector* grad_s) const {
  if (d.empty()) {
    if (grad_s) *grad_s = vec::Vector(student_.layout().total(), 0.0);
    return 0.0;
  }
  const auto& p = programs_->student;
  ad::Bindings b;
  s.bind(b, kStudentPrefix);
  b.bind("x", d.x);
  b.bind("y", d.y);
  std::vector<ad::NodeId> outputs{p.loss};
  if (grad_s) outputs.insert(outputs.end(), p.grad_weights.begin(), p.grad_weights.end());
  const auto values = ad::evaluate(p.g, b, outputs);
  if (grad_s) *grad_s = flatten(values, 1, values.size());
  return values[0].item();
}

ad::Tensor Engine::student_logits(const WeightSet& s, const ad::Tensor& x) const {
  const auto& p = programs_->student;
  ad::Bindings b;
  s.bind(b, kStudentPrefix);
  b.bind("x", x);
  return ad::evaluate(p.g, b, p.logits);
}

PseudoLabeledSet Engine::pseudo_label(const ArchParams& a, const WeightSet& t, const ad::Tensor& unlabeled) const {
  if (unlabeled.rows() == 0) {
    return PseudoLabeledSet{ad::Tensor(0, config_.teacher.input_dim), ad::Tensor(0, config_.teacher.classes)};
  }
  return PseudoLabeledSet{unlabeled, ad::softmax(teacher_logits(t, a, unlabeled))};
}

WeightSet Engine::teacher_virtual_step(const WeightSet& t, const ArchParams& a, const Batch& d, double xi) const {
  if (xi == 0.0) return t;
  vec::Vector g;
  teacher_loss(t, a, d, &g);
  if (!vec::all_finite(g)) throw NonFiniteError("teacher gradient is not finite");
  return t.shifted(-xi, g);
}

StudentObjective Engine::student_objective(const WeightSet& s, const Batch& student_train, const PseudoLabeledSet& pl,
                                           double lambda) const {
  const double wh = config_.human_weight();
  if (student_train.empty() && wh != 0.0) throw ConfigError("student training set is empty");
  StudentObjective o;
  vec::Vector gh, gp;
  o.human = student_loss(s, student_train, &gh);
  o.pseudo = student_loss(s, pl, &gp);
  o.value = wh * o.human + lambda * o.pseudo;
  o.grad = vec::Vector(gh.size(), 0.0);
  if (wh != 0.0) o.grad = vec::axpy(o.grad, wh, gh);
  if (lambda != 0.0) o.grad = vec::axpy(o.grad, lambda, gp);
  return o;
}

WeightSet Engine::student_virtual_step(const WeightSet& s, std::span<const double> grad, double xi) const {
  if (xi == 0.0) return s;
  if (!vec::all_finite(grad)) throw NonFiniteError("student gradient is not finite");
  return s.shifted(-xi, grad);
}

TeacherValGrad Engine::grad_arch_teacher_val(const WeightSet& t, const WeightSet& t_virtual, const ArchParams& a,
                                             const Batch& teacher_train, const Batch& teacher_val, double xi_t,
                                             double c_fd) const {
  TeacherValGrad r;
  vec::Vector v;
  r.val_loss = teacher_loss(t_virtual, a, teacher_val, &v, &r.direct);
  r.v_norm = vec::norm(v);
  r.hvp = vec::Vector(r.direct.size(), 0.0);
  if (xi_t == 0.0 || r.v_norm == 0.0) {
    r.grad = r.direct;
    return r;
  }
  // Central difference of grad_A L(T, A, D_t^tr) along v.
  const double alpha = c_fd / r.v_norm;
  vec::Vector gp, gm;
  teacher_loss(t.shifted(alpha, v), a, teacher_train, nullptr, &gp);
  teacher_loss(t.shifted(-alpha, v), a, teacher_train, nullptr, &gm);
  r.hvp = vec::scaled(vec::sub(gp, gm), 1.0 / (2.0 * alpha));
  r.grad = vec::axpy(r.direct, -xi_t, r.hvp);
  return r;
}

StudentValGrad Engine::grad_arch_student_val(const WeightSet& t, const WeightSet& t_virtual, const WeightSet& s,
                                             const WeightSet& s_virtual, const ArchParams& a, const StageData& d,
                                             double lambda, double xi_t, double xi_s, double c_fd) const {
  StudentValGrad r;
  const std::size_t n = a.scalars().size();
  vec::Vector v;
  r.val_loss = student_loss(s_virtual, d.student_val, &v);
  r.v_norm = vec::norm(v);
  r.grad = vec::Vector(n, 0.0);
  const double factor = xi_s * xi_t * lambda;
  if (factor == 0.0 || r.v_norm == 0.0 || d.unlabeled.rows() == 0) return r;

  // u = grad^2_{T', S} L(S, D_pl(T')) . v, differencing grad_{T'} along S +- alpha v.
  const auto& cp = programs_->coupling;
  auto coupling_grad = [&](const WeightSet& s_shift) {
    ad::Bindings b;
    t_virtual.bind(b, kTeacherPrefix);
    s_shift.bind(b, kStudentPrefix);
    b.bind("arch", a.scalars());
    b.bind("x", d.unlabeled);
    return flatten(ad::evaluate(cp.g, b, cp.grad_teacher), 0, cp.grad_teacher.size());
  };
  const double alpha_v = c_fd / r.v_norm;
  const vec::Vector up = coupling_grad(s.shifted(alpha_v, v));
  const vec::Vector um = coupling_grad(s.shifted(-alpha_v, v));
  const vec::Vector u = vec::scaled(vec::sub(up, um), 1.0 / (2.0 * alpha_v));
  r.u_norm = vec::norm(u);
  if (r.u_norm == 0.0) return r;

  // grad^2_{A, T} L(T, A, D_t^tr) . u
  const double alpha_u = c_fd / r.u_norm;
  vec::Vector gp, gm;
  teacher_loss(t.shifted(alpha_u, u), a, d.teacher_train, nullptr, &gp);
  teacher_loss(t.shifted(-alpha_u, u), a, d.teacher_train, nullptr, &gm);
  r.grad = vec::scaled(vec::sub(gp, gm), factor / (2.0 * alpha_u));
  return r;
}

vec::Vector combine_arch_gradients(const SearchConfig& c, std::span<const double> g_tv, std::span<const double> g_sv) {
  vec::Vector out(g_tv.size(), 0.0);
  if (c.teacher_val_weight() != 0.0) out = vec::axpy(out, c.teacher_val_weight(), g_tv);
  if (c.student_val_weight() != 0.0 && !g_sv.empty()) out = vec::axpy(out, c.student_val_weight(), g_sv);
  return out;
}

ArchParams arch_step(const ArchParams& a, std::span<const double> grad, double eta) {
  if (grad.size() != a.scalars().size()) throw ShapeError("architecture gradient has the wrong length");
  if (!vec::all_finite(grad)) throw NonFiniteError("architecture gradient is not finite");
  ArchParams out = a;
  if (eta == 0.0) return out;
  for (std::size_t i = 0; i < grad.size(); ++i) out.scalars()[i] -= eta * grad[i];
  return out;
}

ArchParams ArchStepper::step(const ArchParams& a, std::span<const double> grad) {
  if (config_.arch_optimizer == ArchOptimizer::kSgd) return arch_step(a, grad, config_.eta);
  if (!vec::all_finite(grad)) throw NonFiniteError("architecture gradient is not finite");
  const std::size_t n = grad.size();
  if (m_.empty()) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
  ++t_;
  vec::Vector dir(n);
  if (config_.arch_optimizer == ArchOptimizer::kMomentum) {
    for (std::size_t i = 0; i < n; ++i) dir[i] = m_[i] = config_.momentum * m_[i] + grad[i];
  } else {
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < n; ++i) {
      m_[i] = b1 * m_[i] + (1 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1 - b2) * grad[i] * grad[i];
      dir[i] = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.adam_eps);
    }
  }
  return arch_step(a, dir, config_.eta);
}

Engine::ArchGrad Engine::arch_gradient(const WeightSet& t, const WeightSet& s, const ArchParams& a,
                                       const StageData& d) const {
  if (config_.hypergrad == HypergradMode::kExactUnrolled) return unrolled_arch_gradient(t, s, a, d);
  const SearchConfig& c = config_;
  ArchGrad r;
  const WeightSet t_virtual = teacher_virtual_step(t, a, d.teacher_train, c.xi_t);
  if (c.teacher_val_weight() != 0.0) {
    r.teacher_val = grad_arch_teacher_val(t, t_virtual, a, d.teacher_train, d.teacher_val, c.xi_t, c.c_fd).grad;
    r.objective.teacher_val = teacher_loss(t_virtual, a, d.teacher_val);
  } else {
    r.teacher_val = vec::Vector(a.scalars().size(), 0.0);
    r.objective.teacher_val = teacher_loss(t_virtual, a, d.teacher_val);
  }
  if (c.has_student()) {
    const PseudoLabeledSet pl = pseudo_label(a, t_virtual, d.unlabeled);
    r.pseudo_row_error = max_row_sum_error(pl);
    r.student = student_objective(s, d.student_train, pl, c.lambda);
    const WeightSet s_virtual = student_virtual_step(s, r.student.grad, c.xi_s);
    if (c.student_val_weight() != 0.0) {
      const auto sv = grad_arch_student_val(t, t_virtual, s, s_virtual, a, d, c.lambda, c.xi_t, c.xi_s, c.c_fd);
      r.student_val = sv.grad;
      r.objective.student_val = sv.val_loss;
    } else {
      r.objective.student_val = student_loss(s_virtual, d.student_val);
    }
  }
  r.objective.value = c.teacher_val_weight() * r.objective.teacher_val + c.student_val_weight() * r.objective.student_val;
  r.combined = combine_arch_gradients(c, r.teacher_val, r.student_val);
  return r;
}

ValObjective Engine::val_objective(const WeightSet& t, const WeightSet& s, const ArchParams& a,
                                   const ArchParams& a_pseudo, const StageData& d) const {
  const SearchConfig& c = config_;
  ValObjective o;
  const WeightSet t_virtual = teacher_virtual_step(t, a, d.teacher_train, c.xi_t);
  o.teacher_val = teacher_loss(t_virtual, a, d.teacher_val);
  if (c.has_student()) {
    const PseudoLabeledSet pl = pseudo_label(a_pseudo, t_virtual, d.unlabeled);
    const StudentObjective os = student_objective(s, d.student_train, pl, c.lambda);
    o.student_val = student_loss(student_virtual_step(s, os.grad, c.xi_s), d.student_val);
  }
  o.value = c.teacher_val_weight() * o.teacher_val + c.student_val_weight() * o.student_val;
  return o;
}

Engine::ArchGrad Engine::unrolled_arch_gradient(const WeightSet& t, const WeightSet& s, const ArchParams& a,
                                                const StageData& d) const {
  if (total_parameters() > config_.unrolled_param_ceiling) {
    throw ConfigError("exact-unrolled mode is limited to " + std::to_string(config_.unrolled_param_ceiling) +
                      " parameters, this instance has " + std::to_string(total_parameters()));
  }
  std::call_once(programs_->unrolled_once, [this] {
    auto u = std::make_unique<Programs::Unrolled>();
    ad::Graph& g = u->g;
    const std::size_t in = config_.teacher.input_dim, k = config_.teacher.classes;
    auto ce = [&](ad::NodeId logits, ad::NodeId target) { return g.soft_cross_entropy(g.softmax(logits), target); };
    auto step = [&](const std::vector<ad::NodeId>& w, const std::vector<ad::NodeId>& grad, ad::NodeId rate) {
      std::vector<ad::NodeId> out;
      for (std::size_t i = 0; i < w.size(); ++i) out.push_back(g.sub(w[i], g.scale_by(grad[i], rate)));
      return out;
    };
    const auto ttr_x = g.input("ttr.x", in), ttr_y = g.input("ttr.y", k);
    const auto tval_x = g.input("tval.x", in), tval_y = g.input("tval.y", k);
    const auto str_x = g.input("str.x", in), str_y = g.input("str.y", k);
    const auto sval_x = g.input("sval.x", in), sval_y = g.input("sval.y", k);
    const auto u_x = g.input("u.x", in);
    const auto tw = model::declare(g, teacher_.layout(), kTeacherPrefix);
    const auto sw = model::declare(g, student_.layout(), kStudentPrefix);
    const auto arch = g.parameter("arch", teacher_.num_edges(), model::kNumCandidates);
    const auto xi_t = g.parameter("xi_t", 1, 1), xi_s = g.parameter("xi_s", 1, 1);
    const auto lambda = g.parameter("lambda", 1, 1), w_h = g.parameter("w_h", 1, 1);

    const auto ttr = ce(teacher_.build(g, tw, arch, ttr_x), ttr_y);
    const auto t_virtual = step(tw, g.gradients(ttr, tw), xi_t);
    u->teacher_val = ce(teacher_.build(g, t_virtual, arch, tval_x), tval_y);
    u->pseudo_labels = g.softmax(teacher_.build(g, t_virtual, g.stop_gradient(arch), u_x));
    u->human = ce(student_.build(g, sw, str_x), str_y);
    u->pseudo = ce(student_.build(g, sw, u_x), u->pseudo_labels);
    const auto o_s = g.add(g.scale_by(u->human, w_h), g.scale_by(u->pseudo, lambda));
    const auto s_virtual = step(sw, g.gradients(o_s, sw), xi_s);
    u->student_val = ce(student_.build(g, s_virtual, sval_x), sval_y);
    u->grad_tv = g.gradient(u->teacher_val, arch);
    u->grad_sv = g.gradient(u->student_val, arch);
    programs_->unrolled = std::move(u);
  });
  const auto& u = *programs_->unrolled;
  const SearchConfig& c = config_;

  ad::Bindings b;
  t.bind(b, kTeacherPrefix);
  s.bind(b, kStudentPrefix);
  b.bind("arch", a.scalars());
  b.bind("xi_t", ad::Tensor::scalar(c.xi_t));
  b.bind("xi_s", ad::Tensor::scalar(c.xi_s));
  b.bind("lambda", ad::Tensor::scalar(c.lambda));
  b.bind("w_h", ad::Tensor::scalar(c.human_weight()));
  b.bind("ttr.x", d.teacher_train.x);
  b.bind("ttr.y", d.teacher_train.y);
  b.bind("tval.x", d.teacher_val.x);
  b.bind("tval.y", d.teacher_val.y);
  b.bind("str.x", d.student_train.x);
  b.bind("str.y", d.student_train.y);
  b.bind("sval.x", d.student_val.x);
  b.bind("sval.y", d.student_val.y);
  b.bind("u.x", d.unlabeled);

  std::vector<ad::NodeId> outputs{u.teacher_val, u.grad_tv};
  if (c.has_student()) {
    for (auto id : {u.student_val, u.human, u.pseudo, u.pseudo_labels}) outputs.push_back(id);
    if (c.student_val_weight() != 0.0) outputs.push_back(u.grad_sv);
  }
  const auto values = ad::evaluate(u.g, b, outputs);
  ArchGrad r;
  r.teacher_val = vec::Vector(values[1].values().begin(), values[1].values().end());
  r.objective.teacher_val = values[0].item();
  if (c.has_student()) {
    r.objective.student_val = values[2].item();
    r.student.human = values[3].item();
    r.student.pseudo = values[4].item();
    r.student.value = c.human_weight() * r.student.human + c.lambda * r.student.pseudo;
    r.pseudo_row_error = max_row_sum_error(PseudoLabeledSet{d.unlabeled, values[5]});
    if (c.student_val_weight() != 0.0) r.student_val = vec::Vector(values[6].values().begin(), values[6].values().end());
  }
  r.objective.value = c.teacher_val_weight() * r.objective.teacher_val + c.student_val_weight() * r.objective.student_val;
  r.combined = combine_arch_gradients(c, r.teacher_val, r.student_val);
  return r;
}

double error_rate(const ad::Tensor& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size()) throw ShapeError("logit rows and label count differ");
  if (labels.empty()) throw Error("error rate of an empty set is undefined");
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row_span(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    wrong += static_cast<int>(best) != labels[r];
  }
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

}  // namespace lbt::engine
