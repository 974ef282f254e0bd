// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>

#include "lbt/data/dataset.hpp"
#include "lbt/error.hpp"
#include "lbt/rng.hpp"

namespace lbt::data {

namespace {

constexpr std::size_t kStreamCapacity = std::size_t{1} << 24;
constexpr std::size_t kMoonGridPerClass = 512;

}  // namespace

Dataset Dataset::select(std::span<const std::size_t> rows) const {
  Dataset out;
  out.labeled = labeled;
  out.x = ad::Tensor(rows.size(), feature_dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw ShapeError("row " + std::to_string(rows[i]) + " out of range");
    const auto src = x.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.x.values().begin() + static_cast<std::ptrdiff_t>(i * feature_dim()));
    out.ids.push_back(ids[rows[i]]);
    if (labeled) out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.feature_dim() != b.feature_dim() || a.labeled != b.labeled) {
    throw ShapeError("cannot concatenate datasets of different shape or labeling");
  }
  Dataset out;
  out.labeled = a.labeled;
  std::vector<double> values(a.x.values().begin(), a.x.values().end());
  values.insert(values.end(), b.x.values().begin(), b.x.values().end());
  out.x = ad::Tensor(a.size() + b.size(), a.feature_dim(), std::move(values));
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

ad::Tensor targets(const Dataset& set, std::size_t classes) {
  if (!set.labeled) throw ConfigError("unlabeled set has no targets");
  ad::Tensor t(set.size(), classes);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const int y = set.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ShapeError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
    t(i, static_cast<std::size_t>(y)) = 1.0;
  }
  return t;
}

Family parse_family(std::string_view name) {
  if (name == "gaussian-blobs") return Family::kGaussianBlobs;
  if (name == "concentric-rings") return Family::kConcentricRings;
  if (name == "two-moons-grid") return Family::kTwoMoonsGrid;
  throw ConfigError("unknown task family '" + std::string(name) + "'");
}

std::string_view family_name(Family f) {
  switch (f) {
    case Family::kGaussianBlobs: return "gaussian-blobs";
    case Family::kConcentricRings: return "concentric-rings";
    case Family::kTwoMoonsGrid: return "two-moons-grid";
  }
  return "unknown";
}

void validate(const TaskSpec& s) {
  const SplitSizes& z = s.sizes;
  if (z.teacher_train == 0 || z.teacher_val == 0 || z.student_train == 0 || z.student_val == 0 || z.test == 0) {
    throw ConfigError("labeled split sizes must be positive");
  }
  if (s.classes < 2) throw ConfigError("a task needs at least 2 classes");
  if (s.feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (s.family != Family::kGaussianBlobs && s.feature_dim < 2) {
    throw ConfigError(std::string(family_name(s.family)) + " needs feature_dim >= 2");
  }
  if (!(s.label_noise >= 0.0 && s.label_noise < 0.5)) throw ConfigError("label_noise must lie in [0, 0.5)");
  if (!(s.spread >= 0.0) || !std::isfinite(s.separation) || !std::isfinite(s.unlabeled_shift)) {
    throw ConfigError("task geometry parameters must be finite and spread non-negative");
  }
  if (z.total() > capacity(s)) {
    throw ConfigError("task asks for " + std::to_string(z.total()) + " examples, " +
                      std::string(family_name(s.family)) + " can produce " + std::to_string(capacity(s)));
  }
}

std::size_t capacity(const TaskSpec& s) {
  return s.family == Family::kTwoMoonsGrid ? s.classes * kMoonGridPerClass : kStreamCapacity;
}

namespace {

// Example i of the stream; its class is i mod K.
void draw(const TaskSpec& s, std::size_t i, Rng& rng, std::span<double> out) {
  const std::size_t k = i % s.classes;
  const double kd = static_cast<double>(k);
  const double tau = 2.0 * std::numbers::pi;
  for (double& v : out) v = 0.0;
  switch (s.family) {
    case Family::kGaussianBlobs: {
      if (s.feature_dim == 1) {
        out[0] = kd * s.separation;
      } else {
        const double angle = tau * kd / static_cast<double>(s.classes);
        out[0] = s.separation * std::cos(angle);
        out[1] = s.separation * std::sin(angle);
      }
      for (double& v : out) v += s.spread * rng.normal();
      break;
    }
    case Family::kConcentricRings: {
      const double radius = (kd + 1.0) * s.separation + 0.1 * s.separation * s.spread * rng.normal();
      const double angle = tau * rng.uniform();
      out[0] = radius * std::cos(angle);
      out[1] = radius * std::sin(angle);
      for (std::size_t d = 2; d < out.size(); ++d) out[d] = 0.1 * s.spread * rng.normal();
      break;
    }
    case Family::kTwoMoonsGrid: {
      // Evenly spaced arc positions: slot j of class k is used exactly once.
      const std::size_t slot = i / s.classes;
      const double t = std::numbers::pi * (static_cast<double>(slot) + 0.5) / static_cast<double>(kMoonGridPerClass);
      const double shift = static_cast<double>(k / 2) * (2.0 + s.separation);
      if (k % 2 == 0) {
        out[0] = std::cos(t) + shift;
        out[1] = std::sin(t);
      } else {
        out[0] = 1.0 - std::cos(t) + shift;
        out[1] = 0.5 - std::sin(t);
      }
      for (double& v : out) v += 0.1 * s.spread * rng.normal();
      break;
    }
  }
}

}  // namespace

DataBundle generate(const TaskSpec& spec) {
  validate(spec);
  const SplitSizes& z = spec.sizes;
  Rng rng(derive_seed(spec.seed, "data.stream"));
  Rng noise(derive_seed(spec.seed, "data.noise"));
  // The moon grid is sampled in a seed-dependent order so that small splits
  // still cover the whole arc.
  std::vector<std::size_t> order(z.total());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (spec.family == Family::kTwoMoonsGrid) {
    const std::size_t slots = capacity(spec) / spec.classes;
    std::vector<std::size_t> perm(slots);
    for (std::size_t j = 0; j < slots; ++j) perm[j] = j;
    Rng shuffle(derive_seed(spec.seed, "data.grid"));
    for (std::size_t j = slots; j > 1; --j) std::swap(perm[j - 1], perm[shuffle.index(j)]);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = perm[i / spec.classes] * spec.classes + i % spec.classes;
  }

  DataBundle b;
  b.classes = spec.classes;
  b.feature_dim = spec.feature_dim;
  std::size_t next = 0;
  auto take = [&](std::size_t n, bool labeled, bool noisy, double shift) {
    Dataset d;
    d.labeled = labeled;
    d.x = ad::Tensor(n, spec.feature_dim);
    for (std::size_t r = 0; r < n; ++r, ++next) {
      const std::size_t id = order[next];
      auto row = d.x.values().subspan(r * spec.feature_dim, spec.feature_dim);
      draw(spec, id, rng, row);
      for (double& v : row) v += shift;
      d.ids.push_back(next);
      if (!labeled) continue;
      int y = static_cast<int>(id % spec.classes);
      if (noisy && noise.uniform() < spec.label_noise) {
        y = static_cast<int>((static_cast<std::size_t>(y) + 1 + noise.index(spec.classes - 1)) % spec.classes);
      }
      d.labels.push_back(y);
    }
    return d;
  };
  b.teacher_train = take(z.teacher_train, true, true, 0.0);
  b.teacher_val = take(z.teacher_val, true, true, 0.0);
  b.student_train = take(z.student_train, true, true, 0.0);
  b.student_val = take(z.student_val, true, true, 0.0);
  b.test = take(z.test, true, false, 0.0);
  b.unlabeled = take(z.unlabeled, false, false, spec.unlabeled_shift);
  return b;
}

}  // namespace lbt::data
