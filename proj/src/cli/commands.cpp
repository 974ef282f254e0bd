// SPDX-License-Identifier: Apache-2.0
#include "lbt/cli/commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "lbt/engine/retrain.hpp"
#include "lbt/error.hpp"
#include "lbt/oracle/oracle.hpp"

namespace lbt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw Error(fmt::format("cannot write {}", path.string()));
  f << j.dump(2) << '\n';
}

std::ofstream open_lines(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(fmt::format("cannot write {}", path.string()));
  return f;
}

json manifest(const RunConfig& c, const std::string& command, const fs::path& dir) {
  return json{{"tool", "lbt"},
              {"version", kToolVersion},
              {"command", command},
              {"seed", c.seed()},
              {"output_dir", dir.string()},
              {"data", c.data_dir.empty() ? json{{"source", "generated"}} : json{{"source", "csv"}, {"dir", c.data_dir}}},
              {"config", to_json(c)}};
}

json genotype_names(const model::Genotype& g) {
  json ops = json::array();
  for (auto op : g.ops) ops.push_back(std::string(model::candidate_name(op)));
  return ops;
}

// Runs fn(0..n-1) on up to `jobs` threads. The first failure by index is rethrown.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string value_label(double v) { return fmt::format("{}", v); }

struct Printer {
  std::ostream& out;
  bool quiet;
  template <class... Args>
  void line(fmt::format_string<Args...> f, Args&&... args) {
    if (!quiet) out << fmt::format(f, std::forward<Args>(args)...) << '\n';
  }
};

int cmd_search(const RunConfig& c, const fs::path& dir, Printer& p) {
  const auto r = search_run(c, "search", dir);
  p.line("teacher test error {:.4f} (initial {:.4f})", r.teacher_test_error, r.initial_teacher_test_error);
  if (r.student_test_error) p.line("student test error {:.4f}", *r.student_test_error);
  p.line("genotype: {}", fmt::join(genotype_names(r.genotype), " "));
  p.line("wrote {}", dir.string());
  return kExitOk;
}

int cmd_ablate(const RunConfig& c, const fs::path& dir, std::size_t jobs, Printer& p) {
  if (c.ablate_setting != 1 && c.ablate_setting != 2) throw ConfigError("ablate.setting must be 1 or 2");
  if (c.seeds.empty()) throw ConfigError("ablate needs at least one seed");
  const bool one = c.ablate_setting == 1;
  const auto ablated_mode = one ? engine::ObjectiveMode::kAblation1 : engine::ObjectiveMode::kAblation2;
  const std::string ablated_name(engine::name(ablated_mode));
  const std::string full_label = one ? "student+teacher" : "pseudo+human";
  const std::string ablated_label = one ? "student-only" : "pseudo-only";

  fs::create_directories(dir);
  write_json(dir / "manifest.json", manifest(c, "ablate", dir));
  const std::size_t n = c.seeds.size();
  std::vector<double> full(n), ablated(n);
  std::mutex print;
  parallel_for(2 * n, jobs, [&](std::size_t job) {
    const std::size_t i = job / 2;
    const bool is_full = job % 2 == 0;
    RunConfig rc = c;
    rc.set_seed(c.seeds[i]);
    rc.search.objective = is_full ? engine::ObjectiveMode::kFull : ablated_mode;
    const fs::path run_dir = dir / fmt::format("seed{}", c.seeds[i]) / (is_full ? "full" : ablated_name);
    const double err = search_run(rc, "ablate", run_dir).teacher_test_error;
    (is_full ? full : ablated)[i] = err;
    std::lock_guard lock(print);
    p.line("seed {} {}: teacher test error {:.4f}", c.seeds[i], is_full ? full_label : ablated_label, err);
  });

  auto pairs = open_lines(dir / "pairs.csv");
  pairs << "seed,full,ablation,delta\n";
  json rows = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    pairs << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", c.seeds[i], full[i], ablated[i], full[i] - ablated[i]);
    rows.push_back({{"seed", c.seeds[i]}, {"full", full[i]}, {"ablation", ablated[i]}, {"delta", full[i] - ablated[i]}});
  }
  const auto [fm, fs_] = mean_std(full);
  const auto [am, as] = mean_std(ablated);
  auto summary = open_lines(dir / "summary.csv");
  summary << "setting,teacher_test_error_mean,teacher_test_error_std,n_seeds\n";
  summary << fmt::format("{},{:.17g},{:.17g},{}\n", ablated_label, am, as, n);
  summary << fmt::format("{},{:.17g},{:.17g},{}\n", full_label, fm, fs_, n);
  write_json(dir / "summary.json",
             json{{"setting", c.ablate_setting},
                  {"rows", json::array({{{"setting", ablated_label}, {"mean", am}, {"std", as}, {"n_seeds", n}},
                                        {{"setting", full_label}, {"mean", fm}, {"std", fs_}, {"n_seeds", n}}})},
                  {"pairs", rows}});
  p.line("{:<16} {:>10} {:>10} {:>6}", "setting", "mean", "std", "seeds");
  p.line("{:<16} {:>10.4f} {:>10.4f} {:>6}", ablated_label, am, as, n);
  p.line("{:<16} {:>10.4f} {:>10.4f} {:>6}", full_label, fm, fs_, n);
  return kExitOk;
}

int cmd_sweep(const RunConfig& c, const fs::path& dir, std::size_t jobs, Printer& p) {
  if (c.sweep_parameter != "lambda" && c.sweep_parameter != "gamma") {
    throw ConfigError("sweep.parameter must be lambda or gamma");
  }
  if (c.sweep_values.empty()) throw ConfigError("sweep.values is empty");
  if (c.seeds.empty()) throw ConfigError("sweep needs at least one seed");
  fs::create_directories(dir);
  write_json(dir / "manifest.json", manifest(c, "sweep", dir));
  const std::size_t nv = c.sweep_values.size(), ns = c.seeds.size();
  std::vector<double> errors(nv * ns);
  parallel_for(nv * ns, jobs, [&](std::size_t job) {
    const std::size_t v = job / ns, s = job % ns;
    RunConfig rc = c;
    rc.set_seed(c.seeds[s]);
    set_key(rc, c.sweep_parameter, c.sweep_values[v]);
    const fs::path run_dir =
        dir / fmt::format("{}={}", c.sweep_parameter, value_label(c.sweep_values[v])) / fmt::format("seed{}", c.seeds[s]);
    errors[job] = search_run(rc, "sweep", run_dir).teacher_test_error;
  });

  auto csv = open_lines(dir / "sweep.csv");
  csv << "value,teacher_test_error_mean,teacher_test_error_std,n_seeds\n";
  p.line("{:>8} {:>10} {:>10} {:>6}", c.sweep_parameter, "mean", "std", "seeds");
  for (std::size_t v = 0; v < nv; ++v) {
    const std::vector<double> row(errors.begin() + static_cast<std::ptrdiff_t>(v * ns),
                                  errors.begin() + static_cast<std::ptrdiff_t>((v + 1) * ns));
    const auto [m, s] = mean_std(row);
    csv << fmt::format("{},{:.17g},{:.17g},{}\n", value_label(c.sweep_values[v]), m, s, ns);
    p.line("{:>8} {:>10.4f} {:>10.4f} {:>6}", value_label(c.sweep_values[v]), m, s, ns);
  }
  return kExitOk;
}

struct CheckOutcome {
  oracle::GradComparison cmp;
  bool pass = false;
};

CheckOutcome check(std::span<const double> candidate, std::span<const double> reference, bool exact,
                   const GradcheckOptions& o) {
  CheckOutcome r;
  if (vec::norm(reference) == 0.0) {
    // A constant objective: only the exact zero vector passes.
    r.cmp.candidate_norm = vec::norm(candidate);
    r.cmp.cosine = r.cmp.candidate_norm == 0.0 ? 1.0 : 0.0;
    r.cmp.relative_l2 = r.cmp.candidate_norm == 0.0 ? 0.0 : INFINITY;
    r.pass = r.cmp.candidate_norm == 0.0;
    return r;
  }
  r.cmp = oracle::compare(candidate, reference, true);
  r.pass = exact ? r.cmp.relative_l2 <= o.max_exact_error : r.cmp.cosine >= o.min_cosine;
  return r;
}

json outcome_json(const CheckOutcome& c) {
  json j = oracle::to_json(c.cmp);
  if (!std::isfinite(c.cmp.relative_l2)) j["relative_l2"] = nullptr;
  j["pass"] = c.pass;
  return j;
}

int cmd_gradcheck(const RunConfig& c, const fs::path& dir, std::size_t jobs, Printer& p) {
  const GradcheckOptions& o = c.gradcheck;
  if (o.corrupt != "none" && o.corrupt != "sign_flip") throw ConfigError("gradcheck.corrupt must be none or sign_flip");
  if (o.instances == 0) throw ConfigError("gradcheck.instances must be positive");
  fs::create_directories(dir);
  write_json(dir / "manifest.json", manifest(c, "gradcheck", dir));

  struct Row {
    std::uint64_t seed = 0;
    std::size_t parameters = 0;
    CheckOutcome fd, exact;
  };
  std::vector<Row> rows(o.instances);
  parallel_for(o.instances, jobs, [&](std::size_t i) {
    engine::SearchConfig sc = c.search;
    sc.hypergrad = engine::HypergradMode::kFiniteDifference;
    auto in = oracle::tiny_instance(c.seed() + i, sc);
    if (o.degenerate) {
      const std::size_t d = in.data.teacher_val.x.cols(), k = in.data.teacher_val.y.cols();
      in.data.teacher_val = in.data.student_val = engine::Batch{ad::Tensor(0, d), ad::Tensor(0, k)};
    }
    const auto ref = oracle::fd_hypergradient(
        oracle::composed_objective(in.engine, in.teacher, in.student, in.arch, in.data), in.arch, o.h);
    auto fd = in.engine.arch_gradient(in.teacher, in.student, in.arch, in.data).combined;
    auto exact = in.engine.unrolled_arch_gradient(in.teacher, in.student, in.arch, in.data).combined;
    if (o.corrupt == "sign_flip") {
      for (double& v : fd) v = -v;
      for (double& v : exact) v = -v;
    }
    rows[i] = Row{c.seed() + i, in.engine.total_parameters(), check(fd, ref, false, o), check(exact, ref, true, o)};
  });

  bool all = true;
  json report = json::array();
  for (const Row& r : rows) {
    all = all && r.fd.pass && r.exact.pass;
    p.line("seed {:>3} params {:>4} | fd-mode cosine {:.6f} rel {:.2e} {} | exact cosine {:.6f} rel {:.2e} {}", r.seed,
           r.parameters, r.fd.cmp.cosine, r.fd.cmp.relative_l2, r.fd.pass ? "PASS" : "FAIL", r.exact.cmp.cosine,
           r.exact.cmp.relative_l2, r.exact.pass ? "PASS" : "FAIL");
    report.push_back({{"seed", r.seed},
                      {"parameters", r.parameters},
                      {"fd_mode", outcome_json(r.fd)},
                      {"exact_unrolled", outcome_json(r.exact)}});
  }
  const json thresholds{{"min_cosine", o.min_cosine}, {"max_exact_error", o.max_exact_error}, {"h", o.h}};
  write_json(dir / "gradcheck.json", json{{"thresholds", thresholds}, {"instances", report}, {"pass", all}});
  write_json(dir / "metrics.json", json{{"pass", all}, {"instances", rows.size()}, {"thresholds", thresholds}});
  p.line("gradcheck {}", all ? "PASS" : "FAIL");
  return all ? kExitOk : kExitGradcheck;
}

int cmd_eval(const RunConfig& c, const fs::path& dir, Printer& p) {
  if (c.eval.genotype.empty()) throw ConfigError("missing config keys: eval.genotype");
  std::ifstream in(c.eval.genotype);
  if (!in) throw ConfigError(fmt::format("cannot read genotype file {}", c.eval.genotype));
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(fmt::format("{}: not valid JSON", c.eval.genotype));
  const model::Genotype g = model::genotype_from_json(doc);

  const data::DataBundle bundle = load_data(c);
  model::TeacherSpec spec = resolved_search(c, bundle).teacher;
  spec.nodes = g.nodes;
  spec.cells = c.eval.cells;
  const model::TeacherNet net(spec, g);

  fs::create_directories(dir);
  write_json(dir / "manifest.json", manifest(c, "eval", dir));
  write_json(dir / "genotype.json", model::genotype_to_json(g));
  const auto r = engine::retrain(net, data::concat(bundle.teacher_train, bundle.teacher_val), bundle.test,
                                 bundle.classes, {c.eval.epochs, c.eval.lr, c.seed()});
  auto trace = open_lines(dir / "trace.jsonl");
  for (std::size_t e = 0; e < r.train_loss.size(); ++e) trace << json{{"epoch", e}, {"train_loss", r.train_loss[e]}}.dump() << '\n';
  write_json(dir / "metrics.json", json{{"command", "eval"},
                                        {"seed", c.seed()},
                                        {"test_error", r.test_error},
                                        {"initial_test_error", r.initial_test_error},
                                        {"epochs", c.eval.epochs},
                                        {"cells", spec.cells},
                                        {"parameters", net.layout().total()},
                                        {"genotype", genotype_names(g)}});
  p.line("test error {:.4f} (initial {:.4f})", r.test_error, r.initial_test_error);
  return kExitOk;
}

}  // namespace

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

json trace_json(const engine::StepTrace& t) {
  return json{{"iteration", t.iteration},
              {"teacher_train_loss", t.teacher_train_loss},
              {"student_train_loss", t.student_train_loss},
              {"o_s", t.o_s},
              {"o_s_human", t.o_s_human},
              {"o_s_pseudo", t.o_s_pseudo},
              {"o_v", t.o_v},
              {"o_v_teacher_val", t.o_v_teacher_val},
              {"o_v_student_val", t.o_v_student_val},
              {"grad_norm_t", t.grad_norm_t},
              {"grad_norm_s", t.grad_norm_s},
              {"grad_norm_a", t.grad_norm_a},
              {"grad_norm_a_teacher_val", t.grad_norm_a_teacher_val},
              {"grad_norm_a_student_val", t.grad_norm_a_student_val},
              {"pseudo_label_max_row_error", t.pseudo_label_max_row_error},
              {"lambda", t.lambda},
              {"gamma", t.gamma},
              {"human_weight", t.human_weight},
              {"teacher_val_weight", t.teacher_val_weight},
              {"student_val_weight", t.student_val_weight},
              {"xi_t", t.xi_t},
              {"xi_s", t.xi_s},
              {"eta", t.eta},
              {"arch", t.arch}};
}

engine::SearchResult search_run(const RunConfig& c, const std::string& command, const fs::path& dir) {
  fs::create_directories(dir);
  write_json(dir / "manifest.json", manifest(c, command, dir));
  const data::DataBundle bundle = load_data(c);
  const engine::SearchConfig sc = resolved_search(c, bundle);
  auto trace = open_lines(dir / "trace.jsonl");
  auto timing = open_lines(dir / "timing.jsonl");
  const auto r = engine::run_search(sc, bundle, [&](const engine::StepTrace& t) {
    trace << trace_json(t).dump() << '\n';
    timing << json{{"iteration", t.iteration}, {"wall_time_s", t.wall_time_s}}.dump() << '\n';
  });
  write_json(dir / "genotype.json", model::genotype_to_json(r.genotype, &r.arch));
  json metrics{{"command", command},
               {"seed", c.seed()},
               {"objective", std::string(engine::name(sc.objective))},
               {"teacher_test_error", r.teacher_test_error},
               {"initial_teacher_test_error", r.initial_teacher_test_error},
               {"student_test_error", r.student_test_error ? json(*r.student_test_error) : json(nullptr)},
               {"iterations", r.trace.size()},
               {"genotype", genotype_names(r.genotype)}};
  if (!r.trace.empty()) {
    metrics["final_o_v"] = r.trace.back().o_v;
    metrics["final_o_s"] = r.trace.back().o_s;
    metrics["final_teacher_train_loss"] = r.trace.back().teacher_train_loss;
  }
  write_json(dir / "metrics.json", metrics);
  return r;
}

fs::path output_dir(const Invocation& inv) {
  if (inv.out) return *inv.out;
  const char* root = std::getenv("LBT_OUT_DIR");
  return fs::path(root != nullptr && *root != '\0' ? root : "runs") / inv.command;
}

RunConfig resolve_config(const Invocation& inv) {
  RunConfig c = inv.config ? load_config(*inv.config) : RunConfig{};
  for (const auto& o : inv.overrides) apply_override(c, o);
  if (inv.seed) {
    c.set_seed(*inv.seed);
    c.seeds = {*inv.seed};
  }
  return c;
}

int run(const Invocation& inv, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig c = resolve_config(inv);
    const fs::path dir = output_dir(inv);
    Printer p{out, inv.quiet};
    if (inv.command == "search") return cmd_search(c, dir, p);
    if (inv.command == "ablate") return cmd_ablate(c, dir, inv.jobs, p);
    if (inv.command == "sweep") return cmd_sweep(c, dir, inv.jobs, p);
    if (inv.command == "gradcheck") return cmd_gradcheck(c, dir, inv.jobs, p);
    if (inv.command == "eval") return cmd_eval(c, dir, p);
    throw ConfigError(fmt::format("unknown command '{}'", inv.command));
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const ParseError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const DivergenceError& e) {
    fmt::print(err, "divergence: {}\n", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitOther;
  }
}

}  // namespace lbt::cli
