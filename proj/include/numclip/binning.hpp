#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace numclip {

enum class DistanceKind { absolute, sqrt_absolute, squared };

std::string_view to_string(DistanceKind kind);
/// Accepts "absolute", "sqrt" / "sqrt-absolute", "squared".
DistanceKind parse_distance_kind(std::string_view name);

/// Ordered concept bins over a continuous label range.
///
/// Bins are half-open [edges[i], edges[i+1]) except the last, which is
/// closed on both ends. Immutable once constructed.
class BinSpec {
 public:
  BinSpec(std::vector<double> edges, std::vector<double> centers,
          std::vector<std::string> concepts);

  std::size_t size() const noexcept { return centers_.size(); }
  const std::vector<double>& edges() const noexcept { return edges_; }
  const std::vector<double>& centers() const noexcept { return centers_; }
  const std::vector<std::string>& concepts() const noexcept { return concepts_; }
  double lower() const noexcept { return edges_.front(); }
  double upper() const noexcept { return edges_.back(); }

  std::size_t assign(double label) const;

 private:
  std::vector<double> edges_;
  std::vector<double> centers_;
  std::vector<std::string> concepts_;
};

/// Index of the bin holding `label`; Error(out_of_range) outside the edges.
std::size_t assign_bin(double label, const BinSpec& spec);

double label_distance(double a, double b, DistanceKind kind);

/// Uniform-width bins with centers at the midpoints.
BinSpec default_bins(double lo, double hi, std::size_t count, std::vector<std::string> concepts);

/// Five age-group descriptions, youngest first.
std::vector<std::string> age_concepts();
/// "1930s", "1940s", ... starting at `first_decade`.
std::vector<std::string> decade_concepts(int first_decade, std::size_t count);
/// "level-0", "level-1", ...
std::vector<std::string> generic_concepts(std::size_t count);

/// One bin per line: `edge_lo,edge_hi,center,concept-name`.
/// Consecutive bins must share edges.
BinSpec load_bin_spec(const std::filesystem::path& path);
void save_bin_spec(const BinSpec& spec, const std::filesystem::path& path);

}  // namespace numclip
