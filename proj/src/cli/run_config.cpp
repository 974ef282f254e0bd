// SPDX-License-Identifier: Apache-2.0
#include "lbt/cli/run_config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include <fmt/format.h>

#include "lbt/error.hpp"

namespace lbt::cli {

using nlohmann::json;

namespace {

struct Key {
  std::string name;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

[[noreturn]] void bad_value(const std::string& key, const json& v, const char* want) {
  throw ConfigError(fmt::format("config key '{}': expected {}, got {}", key, want, v.dump()));
}

template <class T>
T convert(const std::string& key, const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) bad_value(key, v, "a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) bad_value(key, v, "a string");
    return v.get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) bad_value(key, v, "a number");
    return v.get<double>();
  } else if constexpr (std::is_integral_v<T>) {
    if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<T>(v.get<std::int64_t>());
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d >= 0 && d == std::floor(d) && d < 9.007199254740992e15) return static_cast<T>(d);
    }
    bad_value(key, v, "a non-negative integer");
  } else {
    if (!v.is_array()) bad_value(key, v, "a list");
    T out;
    for (const auto& e : v) out.push_back(convert<typename T::value_type>(key, e));
    return out;
  }
}

// Key bound to a field reached through `ref`.
template <class T, class F>
Key field(std::string name, F ref) {
  Key k{name, {}, {}};
  k.set = [ref, name](RunConfig& c, const json& v) { ref(c) = convert<T>(name, v); };
  k.get = [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); };
  return k;
}

// Key for an enum with parse and name functions.
template <class E>
Key named(std::string name, E& (*ref)(RunConfig&), E (*parse)(std::string_view), std::string_view (*show)(E)) {
  Key k{name, {}, {}};
  k.set = [=](RunConfig& c, const json& v) { ref(c) = parse(convert<std::string>(name, v)); };
  k.get = [=](const RunConfig& c) { return json(std::string(show(ref(const_cast<RunConfig&>(c))))); };
  return k;
}

#define LBT_REF(type, expr) [](RunConfig& c) -> type& { return expr; }

const std::vector<Key>& table() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back({"seed", [](RunConfig& c, const json& v) { c.set_seed(convert<std::uint64_t>("seed", v)); },
                 [](const RunConfig& c) { return json(c.seed()); }});
    k.push_back(field<double>("lambda", LBT_REF(double, c.search.lambda)));
    k.push_back(field<double>("gamma", LBT_REF(double, c.search.gamma)));
    k.push_back(field<double>("xi_t", LBT_REF(double, c.search.xi_t)));
    k.push_back(field<double>("xi_s", LBT_REF(double, c.search.xi_s)));
    k.push_back(field<double>("eta", LBT_REF(double, c.search.eta)));
    k.push_back(field<double>("lr_t", LBT_REF(double, c.search.lr_t)));
    k.push_back(field<double>("lr_s", LBT_REF(double, c.search.lr_s)));
    k.push_back(field<std::size_t>("epochs", LBT_REF(std::size_t, c.search.epochs)));
    k.push_back(field<std::size_t>("batch_size", LBT_REF(std::size_t, c.search.batch_size)));
    k.push_back(field<double>("c_fd", LBT_REF(double, c.search.c_fd)));
    k.push_back(named<engine::HypergradMode>("hypergrad", LBT_REF(engine::HypergradMode, c.search.hypergrad),
                                             engine::parse_hypergrad_mode, engine::name));
    k.push_back(named<engine::ObjectiveMode>("objective", LBT_REF(engine::ObjectiveMode, c.search.objective),
                                             engine::parse_objective_mode, engine::name));
    k.push_back(named<engine::ArchOptimizer>("arch_optimizer", LBT_REF(engine::ArchOptimizer, c.search.arch_optimizer),
                                             engine::parse_arch_optimizer, engine::name));
    k.push_back(field<double>("momentum", LBT_REF(double, c.search.momentum)));
    k.push_back(field<double>("adam_beta1", LBT_REF(double, c.search.adam_beta1)));
    k.push_back(field<double>("adam_beta2", LBT_REF(double, c.search.adam_beta2)));
    k.push_back(field<double>("adam_eps", LBT_REF(double, c.search.adam_eps)));
    k.push_back(field<double>("divergence_threshold", LBT_REF(double, c.search.divergence_threshold)));
    k.push_back(field<std::size_t>("unrolled_param_ceiling", LBT_REF(std::size_t, c.search.unrolled_param_ceiling)));

    k.push_back(field<std::size_t>("teacher.hidden", LBT_REF(std::size_t, c.search.teacher.hidden)));
    k.push_back(field<std::size_t>("teacher.nodes", LBT_REF(std::size_t, c.search.teacher.nodes)));
    k.push_back(field<std::size_t>("teacher.cells", LBT_REF(std::size_t, c.search.teacher.cells)));
    k.push_back(field<std::string>("student.capacity", LBT_REF(std::string, c.student_capacity)));
    k.push_back(field<std::vector<std::size_t>>("student.hidden", LBT_REF(std::vector<std::size_t>, c.student_hidden)));
    k.push_back(field<std::string>("student.activation", LBT_REF(std::string, c.student_activation)));

    k.push_back(named<data::Family>("data.family", LBT_REF(data::Family, c.task.family), data::parse_family,
                                    data::family_name));
    k.push_back(field<std::size_t>("data.classes", LBT_REF(std::size_t, c.task.classes)));
    k.push_back(field<std::size_t>("data.feature_dim", LBT_REF(std::size_t, c.task.feature_dim)));
    k.push_back(field<double>("data.label_noise", LBT_REF(double, c.task.label_noise)));
    k.push_back(field<double>("data.separation", LBT_REF(double, c.task.separation)));
    k.push_back(field<double>("data.spread", LBT_REF(double, c.task.spread)));
    k.push_back(field<double>("data.unlabeled_shift", LBT_REF(double, c.task.unlabeled_shift)));
    k.push_back(field<std::size_t>("data.sizes.teacher_train", LBT_REF(std::size_t, c.task.sizes.teacher_train)));
    k.push_back(field<std::size_t>("data.sizes.teacher_val", LBT_REF(std::size_t, c.task.sizes.teacher_val)));
    k.push_back(field<std::size_t>("data.sizes.student_train", LBT_REF(std::size_t, c.task.sizes.student_train)));
    k.push_back(field<std::size_t>("data.sizes.student_val", LBT_REF(std::size_t, c.task.sizes.student_val)));
    k.push_back(field<std::size_t>("data.sizes.unlabeled", LBT_REF(std::size_t, c.task.sizes.unlabeled)));
    k.push_back(field<std::size_t>("data.sizes.test", LBT_REF(std::size_t, c.task.sizes.test)));
    k.push_back(field<std::string>("data.dir", LBT_REF(std::string, c.data_dir)));

    k.push_back(field<std::vector<std::uint64_t>>("seeds", LBT_REF(std::vector<std::uint64_t>, c.seeds)));
    k.push_back(field<int>("ablate.setting", LBT_REF(int, c.ablate_setting)));
    k.push_back(field<std::string>("sweep.parameter", LBT_REF(std::string, c.sweep_parameter)));
    k.push_back(field<std::vector<double>>("sweep.values", LBT_REF(std::vector<double>, c.sweep_values)));

    k.push_back(field<std::size_t>("gradcheck.instances", LBT_REF(std::size_t, c.gradcheck.instances)));
    k.push_back(field<double>("gradcheck.h", LBT_REF(double, c.gradcheck.h)));
    k.push_back(field<double>("gradcheck.min_cosine", LBT_REF(double, c.gradcheck.min_cosine)));
    k.push_back(field<double>("gradcheck.max_exact_error", LBT_REF(double, c.gradcheck.max_exact_error)));
    k.push_back(field<std::string>("gradcheck.corrupt", LBT_REF(std::string, c.gradcheck.corrupt)));
    k.push_back(field<bool>("gradcheck.degenerate", LBT_REF(bool, c.gradcheck.degenerate)));

    k.push_back(field<std::string>("eval.genotype", LBT_REF(std::string, c.eval.genotype)));
    k.push_back(field<std::size_t>("eval.epochs", LBT_REF(std::size_t, c.eval.epochs)));
    k.push_back(field<double>("eval.lr", LBT_REF(double, c.eval.lr)));
    k.push_back(field<std::size_t>("eval.cells", LBT_REF(std::size_t, c.eval.cells)));
    return k;
  }();
  return keys;
}

#undef LBT_REF

const Key* find_key(const std::string& name) {
  for (const auto& k : table()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void flatten(const json& doc, const std::string& prefix, std::map<std::string, json>& out) {
  for (const auto& [k, v] : doc.items()) {
    const std::string name = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten(v, name, out);
    } else {
      out[name] = v;
    }
  }
}

data::Dataset load_split(const std::filesystem::path& dir, const char* name, std::size_t classes, bool labeled) {
  data::Dataset d = data::load_csv(dir / (std::string(name) + ".csv"), classes);
  if (labeled && !d.labeled) throw ConfigError(fmt::format("{}.csv needs a label column", name));
  return d;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  search.seed = s;
  task.seed = s;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : table()) n.push_back(k.name);
    return n;
  }();
  return names;
}

void set_key(RunConfig& c, const std::string& key, const json& value) {
  const Key* k = find_key(key);
  if (k == nullptr) throw ConfigError(fmt::format("unknown config key '{}'", key));
  k->set(c, value);
}

void apply_json(RunConfig& c, const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  const json& body = doc.contains("tool") && doc.contains("config") ? doc.at("config") : doc;
  std::map<std::string, json> flat;
  flatten(body, "", flat);
  std::vector<std::string> unknown;
  for (const auto& [k, v] : flat) {
    if (find_key(k) == nullptr) unknown.push_back(k);
  }
  if (!unknown.empty()) throw ConfigError(fmt::format("unknown config keys: {}", fmt::join(unknown, ", ")));
  // The seed first so that explicit keys are not reset by it.
  if (auto it = flat.find("seed"); it != flat.end()) set_key(c, it->first, it->second);
  for (const auto& [k, v] : flat) {
    if (k != "seed") set_key(c, k, v);
  }
}

void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' is not of the form key=value", assignment));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set_key(c, key, value);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config file {}", path.string()));
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(fmt::format("{}: not valid JSON", path.string()));
  RunConfig c;
  apply_json(c, doc);
  return c;
}

json to_json(const RunConfig& c) {
  json j = json::object();
  for (const auto& k : table()) j[k.name] = k.get(c);
  return j;
}

engine::SearchConfig resolved_search(const RunConfig& c, const data::DataBundle& bundle) {
  engine::SearchConfig s = c.search;
  s.student = model::student_preset(c.student_capacity, bundle.feature_dim, bundle.classes);
  if (!c.student_hidden.empty()) s.student.hidden = c.student_hidden;
  s.student.activation = model::parse_activation(c.student_activation);
  s.teacher.input_dim = bundle.feature_dim;
  s.teacher.classes = bundle.classes;
  return s;
}

data::DataBundle load_data(const RunConfig& c) {
  if (c.data_dir.empty()) return data::generate(c.task);
  const std::filesystem::path dir = c.data_dir;
  data::DataBundle b;
  b.classes = c.task.classes;
  b.teacher_train = load_split(dir, "teacher_train", b.classes, true);
  b.teacher_val = load_split(dir, "teacher_val", b.classes, true);
  b.student_train = load_split(dir, "student_train", b.classes, true);
  b.student_val = load_split(dir, "student_val", b.classes, true);
  b.unlabeled = load_split(dir, "unlabeled", b.classes, false);
  b.unlabeled.labels.clear();
  b.unlabeled.labeled = false;
  b.test = load_split(dir, "test", b.classes, true);
  b.feature_dim = b.teacher_train.feature_dim();
  for (const data::Dataset* d : {&b.teacher_val, &b.student_train, &b.student_val, &b.unlabeled, &b.test}) {
    if (d->feature_dim() != b.feature_dim) throw ConfigError("CSV splits disagree on the feature count");
  }
  return b;
}

}  // namespace lbt::cli
