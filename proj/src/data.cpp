#include "numclip/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "numclip/error.hpp"
#include "numclip/random.hpp"
#include "numclip/text_io.hpp"

namespace numclip {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.x = Matrix(indices.size(), x.cols());
  out.y.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t src = indices[r];
    std::copy_n(x.row(src).begin(), x.cols(), out.x.row(r).begin());
    out.y.push_back(y[src]);
    if (!bins.empty()) out.bins.push_back(bins[src]);
  }
  return out;
}

void assign_bins(Dataset& data, const BinSpec& spec) {
  data.bins.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) data.bins[i] = spec.assign(data.y[i]);
}

Dataset generate_synthetic(const SyntheticConfig& cfg, const BinSpec& spec) {
  if (cfg.input_dim < 3) {
    throw Error(Errc::dimension_too_small, "synthetic features need at least 3 dimensions");
  }
  if (cfg.n == 0 || !(cfg.lo < cfg.hi) || !(cfg.noise_std >= 0.0)) {
    throw Error(Errc::invalid_argument, "invalid synthetic config");
  }
  if (cfg.lo < spec.lower() || cfg.hi > spec.upper()) {
    throw Error(Errc::out_of_range, "synthetic label range exceeds the bin spec");
  }

  Rng rng(cfg.seed);
  Dataset data;
  data.x = Matrix(cfg.n, cfg.input_dim);
  data.y.resize(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) data.y[i] = rng.uniform(cfg.lo, cfg.hi);
  const double span = cfg.hi - cfg.lo;
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const double t = data.y[i];
    auto row = data.x.row(i);
    row[0] = std::sin(cfg.omega * t);
    row[1] = std::cos(cfg.omega * t);
    row[2] = 2.0 * (t - cfg.lo) / span - 1.0;
    if (cfg.noise_std > 0.0) {
      for (double& v : row) v += rng.normal(0.0, cfg.noise_std);
    }
  }
  assign_bins(data, spec);
  return data;
}

Dataset load_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line) || line.empty()) {
    throw Error(Errc::empty_file, path.string() + " is empty");
  }
  const auto header = split_fields(line, ',');
  if (header.size() < 2 || header[0] != "label") {
    throw Error(Errc::malformed_header, "expected header label,f0,f1,...");
  }
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (header[c] != "f" + std::to_string(c - 1)) {
      throw Error(Errc::malformed_header, "column " + std::to_string(c) + " should be f" +
                                              std::to_string(c - 1));
    }
  }
  const std::size_t dim = header.size() - 1;

  std::vector<double> labels;
  std::vector<double> features;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line, ',');
    if (fields.size() != dim + 1) {
      throw Error(Errc::ragged_row, "line " + std::to_string(line_no) + " has " +
                                        std::to_string(fields.size()) + " fields, expected " +
                                        std::to_string(dim + 1));
    }
    labels.push_back(parse_double(fields[0], line_no));
    for (std::size_t c = 1; c < fields.size(); ++c) {
      features.push_back(parse_double(fields[c], line_no));
    }
  }
  if (labels.empty()) throw Error(Errc::empty_file, path.string() + " holds no samples");

  Dataset data;
  data.x = Matrix(labels.size(), dim, std::move(features));
  data.y = std::move(labels);
  return data;
}

void write_embeddings_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << "label";
  for (std::size_t c = 0; c < data.dim(); ++c) out << ",f" << c;
  out << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    out << format_double(data.y[r]);
    for (double v : data.x.row(r)) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction,
                                  std::optional<std::size_t> shots_per_bin, std::uint64_t seed) {
  if (data.bins.size() != data.size()) {
    throw Error(Errc::invalid_argument, "split requires a binned dataset");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> eval_idx;
  if (shots_per_bin) {
    std::vector<std::size_t> taken;
    for (std::size_t idx : order) {
      const std::size_t b = data.bins[idx];
      if (taken.size() <= b) taken.resize(b + 1, 0);
      if (taken[b] < *shots_per_bin) {
        ++taken[b];
        train_idx.push_back(idx);
      } else {
        eval_idx.push_back(idx);
      }
    }
  } else {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw Error(Errc::invalid_argument, "train fraction must lie in (0, 1)");
    }
    const auto n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(data.size())));
    train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, order.size())));
    eval_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(train_idx.size()), order.end());
  }
  if (train_idx.empty() || eval_idx.empty()) {
    throw Error(Errc::empty_split, "split leaves " + std::to_string(train_idx.size()) +
                                       " train / " + std::to_string(eval_idx.size()) +
                                       " eval samples");
  }
  return {data.subset(train_idx), data.subset(eval_idx)};
}

}  // namespace numclip
