#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgmcmc/graph.hpp"
#include "sgmcmc/tensor.hpp"

namespace sgmcmc {

/// Named tensors sharing a first (observation) axis of extent N >= 1.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(TensorMap entries);

  std::size_t size() const noexcept { return n_; }
  const TensorMap& entries() const noexcept { return entries_; }
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

  /// Rows `indices` of every entry, in the given order.
  Dataset gather(std::span<const std::size_t> indices) const;
  /// Contiguous rows [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const;

  Feed feed() const { return make_feed(entries_); }

 private:
  TensorMap entries_;
  std::size_t n_ = 0;
};

/// Seeded generator: mt19937_64 keyed by (seed, stream) through seed_seq.
///
/// Every variate has a fixed raw-draw cost so chains replay exactly:
///   uniform  1 draw, 53-bit mantissa in [0,1)
///   normal   2 draws, Box-Muller cosine branch, no caching
///   index    1 draw, multiply-high reduction onto [0,n)
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next();
  double uniform();
  double normal();
  std::size_t index(std::size_t n);

  /// Independent child stream `k`; does not advance this generator.
  Rng spawn(std::uint64_t k) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t draws() const noexcept { return draws_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t draws_ = 0;
};

struct Minibatch {
  std::vector<std::size_t> indices;  // sorted ascending
  Dataset views;
};

/// `spec` < 1 is a proportion of N (floored, at least 1); `spec` >= 1 is a
/// row count (rounded, capped at N). So 1.0 means one row.
std::size_t resolve_minibatch_size(double spec, std::size_t n_total);

/// n distinct rows drawn uniformly without replacement (Floyd's method).
/// When n == N every row is taken and no random draws are consumed.
Minibatch sample_minibatch(const Dataset& data, std::size_t n, Rng& rng);

Tensor standard_normal(Rng& rng, const Shape& shape);

/// Reads a header-named CSV. Columns `name.1, name.2, ...` are grouped into
/// one [N,k] entry ordered by suffix; any other column becomes an [N] entry.
Dataset read_csv(const std::filesystem::path& path);
/// Inverse of read_csv. Entries must be rank 1 or 2.
void write_csv(const std::filesystem::path& path, const Dataset& data);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace sgmcmc
