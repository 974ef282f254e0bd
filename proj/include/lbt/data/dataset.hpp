// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lbt/autodiff/tensor.hpp"

namespace lbt::data {

/// Examples as rows of `x`. `ids` identify examples across splits; labels are
/// empty for an unlabeled set.
struct Dataset {
  ad::Tensor x;
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;
  bool labeled = true;

  std::size_t size() const { return x.rows(); }
  std::size_t feature_dim() const { return x.cols(); }
  bool empty() const { return size() == 0; }

  /// Rows picked by position, in the given order.
  Dataset select(std::span<const std::size_t> rows) const;
  bool operator==(const Dataset&) const = default;
};

Dataset concat(const Dataset& a, const Dataset& b);

/// One-hot targets of a labeled set.
ad::Tensor targets(const Dataset& set, std::size_t classes);

struct DataBundle {
  Dataset teacher_train;
  Dataset teacher_val;
  Dataset student_train;
  Dataset student_val;
  Dataset unlabeled;
  Dataset test;
  std::size_t classes = 0;
  std::size_t feature_dim = 0;
  bool operator==(const DataBundle&) const = default;
};

enum class Family : std::uint8_t { kGaussianBlobs, kConcentricRings, kTwoMoonsGrid };
Family parse_family(std::string_view name);
std::string_view family_name(Family f);

struct SplitSizes {
  std::size_t teacher_train = 60;
  std::size_t teacher_val = 60;
  std::size_t student_train = 60;
  std::size_t student_val = 60;
  std::size_t unlabeled = 120;
  std::size_t test = 300;
  std::size_t total() const {
    return teacher_train + teacher_val + student_train + student_val + unlabeled + test;
  }
  bool operator==(const SplitSizes&) const = default;
};

struct TaskSpec {
  Family family = Family::kGaussianBlobs;
  std::size_t classes = 3;
  std::size_t feature_dim = 2;
  SplitSizes sizes;
  /// Probability that a train or validation label is replaced by a different class.
  double label_noise = 0.0;
  /// Blob centre radius, ring spacing or moon offset, depending on the family.
  double separation = 2.0;
  /// Per-coordinate isotropic noise scale.
  double spread = 1.0;
  /// Constant offset added to every unlabeled input (distribution shift).
  double unlabeled_shift = 0.0;
  std::uint64_t seed = 0;
  bool operator==(const TaskSpec&) const = default;
};

void validate(const TaskSpec& spec);

/// Largest total example count a family can produce for the given spec.
std::size_t capacity(const TaskSpec& spec);

/// Draws one sample stream and cuts it into contiguous regions: teacher_train,
/// teacher_val, student_train, student_val, test, unlabeled. Label noise hits
/// the four train/val splits only.
DataBundle generate(const TaskSpec& spec);

/// Header row of feature names plus an optional trailing "label" column.
Dataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> classes = std::nullopt);
void write_csv(const std::filesystem::path& path, const Dataset& set);

}  // namespace lbt::data
