#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "numclip/binning.hpp"
#include "numclip/matrix.hpp"

namespace numclip {

struct Dataset {
  Matrix x;                        // N x D_in
  std::vector<double> y;           // labels
  std::vector<std::size_t> bins;   // assign_bin(y[i]); empty until binned

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Fills `bins` from the labels. Error(out_of_range) if a label falls
/// outside the spec.
void assign_bins(Dataset& data, const BinSpec& spec);

struct SyntheticConfig {
  std::size_t n = 1000;
  std::size_t input_dim = 8;
  double lo = 16.0;
  double hi = 77.0;
  double noise_std = 0.3;
  double omega = 0.1;  // radians per label unit
  std::uint64_t seed = 0;
};

/// t ~ U(lo, hi); features [sin(ωt), cos(ωt), 2(t-lo)/(hi-lo)-1, 0, ...] plus
/// N(0, noise_std) on every coordinate; label = t.
Dataset generate_synthetic(const SyntheticConfig& cfg, const BinSpec& spec);

/// Header `label,f0,...,f{D-1}`, one sample per LF-terminated row.
Dataset load_embeddings_csv(const std::filesystem::path& path);
void write_embeddings_csv(const Dataset& data, const std::filesystem::path& path);

/// Seeded shuffle then split. With `shots_per_bin`, the train side takes
/// that many samples of each bin (all of them when fewer exist) and
/// `train_fraction` is ignored. Requires binned data.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction,
                                  std::optional<std::size_t> shots_per_bin, std::uint64_t seed);

}  // namespace numclip
