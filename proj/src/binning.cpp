#include "numclip/binning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "numclip/error.hpp"
#include "numclip/text_io.hpp"

namespace numclip {

std::string_view to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::absolute: return "absolute";
    case DistanceKind::sqrt_absolute: return "sqrt";
    case DistanceKind::squared: return "squared";
  }
  return "unknown";
}

DistanceKind parse_distance_kind(std::string_view name) {
  if (name == "absolute") return DistanceKind::absolute;
  if (name == "sqrt" || name == "sqrt-absolute") return DistanceKind::sqrt_absolute;
  if (name == "squared") return DistanceKind::squared;
  throw Error(Errc::bad_flag, "unknown distance kind '" + std::string(name) + "'");
}

BinSpec::BinSpec(std::vector<double> edges, std::vector<double> centers,
                 std::vector<std::string> concepts)
    : edges_(std::move(edges)), centers_(std::move(centers)), concepts_(std::move(concepts)) {
  if (centers_.size() < 2) throw Error(Errc::invalid_argument, "need at least two bins");
  if (edges_.size() != centers_.size() + 1) {
    throw Error(Errc::bad_arity, "edges must have one more entry than centers");
  }
  if (concepts_.size() != centers_.size()) {
    throw Error(Errc::bad_arity, "one concept name per bin required");
  }
  for (double e : edges_) {
    if (!std::isfinite(e)) throw Error(Errc::invalid_argument, "bin edges must be finite");
  }
  for (std::size_t i = 0; i + 1 < edges_.size(); ++i) {
    if (!(edges_[i] < edges_[i + 1])) {
      throw Error(Errc::invalid_argument, "bin edges must be strictly ascending");
    }
    if (!(centers_[i] >= edges_[i] && centers_[i] <= edges_[i + 1])) {
      throw Error(Errc::invalid_argument,
                  "center of bin " + std::to_string(i) + " lies outside its edges");
    }
  }
}

std::size_t BinSpec::assign(double label) const {
  if (!(label >= edges_.front() && label <= edges_.back())) {
    throw Error(Errc::out_of_range, "label " + format_double(label) + " outside [" +
                                        format_double(edges_.front()) + ", " +
                                        format_double(edges_.back()) + "]");
  }
  // First edge strictly greater than the label, minus one; the top edge
  // belongs to the last bin.
  const auto it = std::upper_bound(edges_.begin(), edges_.end(), label);
  const auto idx = static_cast<std::size_t>(it - edges_.begin());
  return std::min(idx == 0 ? 0 : idx - 1, size() - 1);
}

std::size_t assign_bin(double label, const BinSpec& spec) { return spec.assign(label); }

double label_distance(double a, double b, DistanceKind kind) {
  const double d = std::abs(a - b);
  switch (kind) {
    case DistanceKind::absolute: return d;
    case DistanceKind::sqrt_absolute: return std::sqrt(d);
    case DistanceKind::squared: return d * d;
  }
  return d;
}

BinSpec default_bins(double lo, double hi, std::size_t count, std::vector<std::string> concepts) {
  if (!(lo < hi)) throw Error(Errc::invalid_argument, "default_bins requires lo < hi");
  if (count < 2) throw Error(Errc::invalid_argument, "default_bins requires at least two bins");
  if (concepts.size() != count) {
    throw Error(Errc::bad_arity, "got " + std::to_string(concepts.size()) + " concept names for " +
                                     std::to_string(count) + " bins");
  }
  std::vector<double> edges(count + 1);
  const double width = (hi - lo) / static_cast<double>(count);
  for (std::size_t i = 0; i <= count; ++i) edges[i] = lo + width * static_cast<double>(i);
  edges.back() = hi;
  std::vector<double> centers(count);
  for (std::size_t i = 0; i < count; ++i) centers[i] = 0.5 * (edges[i] + edges[i + 1]);
  return BinSpec(std::move(edges), std::move(centers), std::move(concepts));
}

std::vector<std::string> age_concepts() {
  return {"teenager", "young adult", "middle adult", "older adult", "senior"};
}

std::vector<std::string> decade_concepts(int first_decade, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(std::to_string(first_decade + 10 * static_cast<int>(i)) + "s");
  }
  return out;
}

std::vector<std::string> generic_concepts(std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back("level-" + std::to_string(i));
  return out;
}

BinSpec load_bin_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::vector<double> edges;
  std::vector<double> centers;
  std::vector<std::string> concepts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line, ',');
    if (fields.size() != 4) {
      throw Error(Errc::ragged_row, path.string() + ":" + std::to_string(line_no) +
                                        ": expected edge_lo,edge_hi,center,concept");
    }
    const double lo = parse_double(fields[0], line_no);
    const double hi = parse_double(fields[1], line_no);
    const double center = parse_double(fields[2], line_no);
    if (edges.empty()) {
      edges.push_back(lo);
    } else if (edges.back() != lo) {
      throw Error(Errc::invalid_argument, path.string() + ":" + std::to_string(line_no) +
                                              ": bin does not start at previous upper edge");
    }
    edges.push_back(hi);
    centers.push_back(center);
    concepts.emplace_back(fields[3]);
  }
  if (centers.empty()) throw Error(Errc::empty_file, path.string() + " holds no bins");
  return BinSpec(std::move(edges), std::move(centers), std::move(concepts));
}

void save_bin_spec(const BinSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  for (std::size_t i = 0; i < spec.size(); ++i) {
    out << format_double(spec.edges()[i]) << ',' << format_double(spec.edges()[i + 1]) << ','
        << format_double(spec.centers()[i]) << ',' << spec.concepts()[i] << '\n';
  }
}

}  // namespace numclip
