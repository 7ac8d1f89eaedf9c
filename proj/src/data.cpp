#include "sgmcmc/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "sgmcmc/errors.hpp"

namespace sgmcmc {

Dataset::Dataset(TensorMap entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw ShapeError("dataset needs at least one entry");
  for (const auto& [name, t] : entries_) {
    if (t.rank() == 0) throw ShapeError("dataset entry '" + name + "' is a scalar");
    if (&t == &entries_.begin()->second) {
      n_ = t.shape()[0];
    } else if (t.shape()[0] != n_) {
      throw ShapeError("dataset entry '" + name + "' has " + std::to_string(t.shape()[0]) +
                       " rows, expected " + std::to_string(n_));
    }
  }
  if (n_ == 0) throw ShapeError("dataset has no observations");
}

const Tensor& Dataset::at(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw UnknownVariable("dataset has no entry '" + std::string(name) + "'");
  return it->second;
}

Dataset Dataset::gather(std::span<const std::size_t> indices) const {
  TensorMap out;
  for (const auto& [name, t] : entries_) {
    const std::size_t stride = t.row_stride();
    Shape shape = t.shape();
    shape[0] = indices.size();
    std::vector<double> values(indices.size() * stride);
    auto src = t.data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] >= n_) throw DomainError("row index " + std::to_string(indices[r]) + " out of range");
      std::copy_n(src.begin() + indices[r] * stride, stride, values.begin() + r * stride);
    }
    out.emplace(name, Tensor(std::move(shape), std::move(values)));
  }
  Dataset d;
  d.entries_ = std::move(out);
  d.n_ = indices.size();
  return d;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > n_) throw DomainError("bad row range");
  TensorMap out;
  for (const auto& [name, t] : entries_) {
    const std::size_t stride = t.row_stride();
    Shape shape = t.shape();
    shape[0] = end - begin;
    auto src = t.data();
    out.emplace(name, Tensor(std::move(shape), std::vector<double>(src.begin() + begin * stride,
                                                                  src.begin() + end * stride)));
  }
  Dataset d;
  d.entries_ = std::move(out);
  d.n_ = end - begin;
  return d;
}

// ---------------------------------------------------------------------------

namespace {
std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : engine_(make_engine(seed, stream)), seed_(seed), stream_(stream) {}

std::uint64_t Rng::next() {
  ++draws_;
  return engine_();
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0,1], keeps log finite
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  const unsigned __int128 wide = static_cast<unsigned __int128>(next()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

Rng Rng::spawn(std::uint64_t k) const {
  return Rng(seed_, splitmix64(stream_ ^ splitmix64(k + 1)));
}

// ---------------------------------------------------------------------------

std::size_t resolve_minibatch_size(double spec, std::size_t n_total) {
  if (!(spec > 0.0) || !std::isfinite(spec)) {
    throw DomainError("minibatch size must be positive, got " + format_double(spec));
  }
  if (spec < 1.0) {
    const auto n = static_cast<std::size_t>(std::floor(spec * static_cast<double>(n_total)));
    return std::max<std::size_t>(1, n);
  }
  return std::min(static_cast<std::size_t>(std::llround(spec)), n_total);
}

Minibatch sample_minibatch(const Dataset& data, std::size_t n, Rng& rng) {
  const std::size_t total = data.size();
  if (n < 1 || n > total) {
    throw DomainError("minibatch of " + std::to_string(n) + " rows from " + std::to_string(total));
  }
  Minibatch mb;
  if (n == total) {
    mb.indices.resize(total);
    for (std::size_t i = 0; i < total; ++i) mb.indices[i] = i;
    mb.views = data;
    return mb;
  }
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(2 * n);
  for (std::size_t j = total - n; j < total; ++j) {
    const std::size_t t = rng.index(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  mb.indices.assign(chosen.begin(), chosen.end());
  std::sort(mb.indices.begin(), mb.indices.end());
  mb.views = data.gather(mb.indices);
  return mb;
}

Tensor standard_normal(Rng& rng, const Shape& shape) {
  Tensor out(shape);
  for (double& v : out.data()) v = rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) {
    s.remove_suffix(1);
  }
  return s;
}

// "X.12" -> ("X", 12). Non-grouped names return suffix 0.
std::pair<std::string, std::size_t> split_group(std::string_view col) {
  const auto dot = col.rfind('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == col.size()) return {std::string(col), 0};
  std::size_t idx = 0;
  auto tail = col.substr(dot + 1);
  auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), idx);
  if (ec != std::errc() || p != tail.data() + tail.size()) return {std::string(col), 0};
  return {std::string(col.substr(0, dot)), idx};
}

}  // namespace

Dataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file, expected a header row");

  struct Column {
    std::string group;
    std::size_t suffix;
  };
  std::vector<Column> columns;
  for (auto name : split_commas(line)) {
    auto [group, suffix] = split_group(trim(name));
    if (group.empty()) throw IoError(path.string() + ":1: empty column name");
    columns.push_back({std::move(group), suffix});
  }

  // Group layout: group -> (suffix, column position), ordered by suffix.
  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> groups;
  for (std::size_t c = 0; c < columns.size(); ++c) groups[columns[c].group].push_back({columns[c].suffix, c});
  for (auto& [g, cols] : groups) {
    std::sort(cols.begin(), cols.end());
    const bool bare = cols.size() == 1 && cols[0].first == 0;
    for (std::size_t k = 0; k + 1 < cols.size(); ++k) {
      if (cols[k].first == cols[k + 1].first) throw IoError(path.string() + ":1: duplicate column for '" + g + "'");
    }
    if (!bare && cols[0].first == 0) throw IoError(path.string() + ":1: column '" + g + "' mixes bare and indexed names");
  }

  std::vector<std::vector<double>> values(columns.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_commas(line);
    if (fields.size() != columns.size()) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(columns.size()) + " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      auto f = trim(fields[c]);
      double v = 0.0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || p != f.data() + f.size()) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": cannot parse '" + std::string(f) +
                      "' as a number (column " + std::to_string(c + 1) + ")");
      }
      values[c].push_back(v);
    }
  }
  const std::size_t n = values.empty() ? 0 : values[0].size();
  if (n == 0) throw IoError(path.string() + ": no data rows");

  TensorMap entries;
  for (const auto& [g, cols] : groups) {
    if (cols.size() == 1 && cols[0].first == 0) {
      entries.emplace(g, Tensor(Shape{n}, values[cols[0].second]));
      continue;
    }
    const std::size_t k = cols.size();
    std::vector<double> flat(n * k);
    for (std::size_t j = 0; j < k; ++j) {
      const auto& col = values[cols[j].second];
      for (std::size_t r = 0; r < n; ++r) flat[r * k + j] = col[r];
    }
    entries.emplace(g, Tensor(Shape{n, k}, std::move(flat)));
  }
  return Dataset(std::move(entries));
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  std::vector<std::string> header;
  for (const auto& [name, t] : data.entries()) {
    if (t.rank() == 1) {
      header.push_back(name);
    } else if (t.rank() == 2) {
      for (std::size_t j = 0; j < t.shape()[1]; ++j) header.push_back(name + "." + std::to_string(j + 1));
    } else {
      throw ShapeError("cannot write rank-" + std::to_string(t.rank()) + " entry '" + name + "' to CSV");
    }
  }
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    bool first = true;
    for (const auto& [name, t] : data.entries()) {
      const std::size_t stride = t.row_stride();
      for (std::size_t j = 0; j < stride; ++j) {
        out << (first ? "" : ",") << format_double(t[r * stride + j]);
        first = false;
      }
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace sgmcmc
