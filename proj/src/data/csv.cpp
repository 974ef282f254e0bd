// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "lbt/data/dataset.hpp"
#include "lbt/error.hpp"

namespace lbt::data {

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& c : cells) {
    while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
    while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
  }
  return cells;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> classes) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  const std::string where = path.string();
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(where + ": empty file, expected a header row");
  ++line_no;
  const auto header = split(line);
  const bool labeled = !header.empty() && header.back() == "label";
  const std::size_t features = header.size() - (labeled ? 1 : 0);
  if (features == 0) throw ParseError(where + ":1: header names no feature columns");
  for (std::size_t i = 0; i < features; ++i) {
    if (header[i].empty()) throw ParseError(fmt::format("{}:1: empty column name {}", where, i + 1));
    if (header[i] == "label") throw ParseError(where + ":1: 'label' must be the last column");
  }

  Dataset d;
  d.labeled = labeled;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw ParseError(fmt::format("{}:{}: expected {} fields, found {}", where, line_no, header.size(), cells.size()));
    }
    for (std::size_t i = 0; i < features; ++i) {
      double v = 0;
      const auto* end = cells[i].data() + cells[i].size();
      const auto [ptr, ec] = std::from_chars(cells[i].data(), end, v);
      if (ec != std::errc{} || ptr != end || cells[i].empty() || !std::isfinite(v)) {
        throw ParseError(fmt::format("{}:{}: column {} is not a finite number: '{}'", where, line_no, i + 1, cells[i]));
      }
      values.push_back(v);
    }
    if (labeled) {
      long long y = 0;
      const auto& cell = cells.back();
      const auto* end = cell.data() + cell.size();
      const auto [ptr, ec] = std::from_chars(cell.data(), end, y);
      if (ec != std::errc{} || ptr != end || cell.empty()) {
        throw ParseError(fmt::format("{}:{}: label is not an integer: '{}'", where, line_no, cell));
      }
      if (y < 0 || (classes && static_cast<std::size_t>(y) >= *classes)) {
        throw ParseError(fmt::format("{}:{}: label {} out of range", where, line_no, y));
      }
      d.labels.push_back(static_cast<int>(y));
    }
    d.ids.push_back(d.ids.size());
  }
  d.x = ad::Tensor(d.ids.size(), features, std::move(values));
  return d;
}

void write_csv(const std::filesystem::path& path, const Dataset& set) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t j = 0; j < set.feature_dim(); ++j) out << (j ? "," : "") << "x" << j;
  if (set.labeled) out << (set.feature_dim() ? "," : "") << "label";
  out << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < set.feature_dim(); ++j) out << (j ? "," : "") << fmt::format("{:.17g}", set.x(i, j));
    if (set.labeled) out << ',' << set.labels[i];
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace lbt::data
