#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sipmlab {

struct PulseHeightSpectrum {
  std::vector<double> bin_edges;       // counts.size() + 1 entries
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  double bin_width() const { return bin_edges.size() > 1 ? bin_edges[1] - bin_edges[0] : 0.0; }
  double center(std::size_t i) const { return 0.5 * (bin_edges[i] + bin_edges[i + 1]); }
  std::size_t n_bins() const { return counts.size(); }
};

/// Histogram over [min, max] padded by one bin on each side.
inline PulseHeightSpectrum build_spectrum(const std::vector<double>& values, double bin_width) {
  if (values.empty()) throw std::invalid_argument("build_spectrum: empty input");
  if (!(bin_width > 0.0)) throw std::invalid_argument("build_spectrum: bin_width must be > 0");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn - bin_width;
  const double hi = *mx + bin_width;
  const std::size_t nbins = static_cast<std::size_t>(std::ceil((hi - lo) / bin_width - 1e-12));
  PulseHeightSpectrum spec;
  spec.counts.assign(std::max<std::size_t>(nbins, 1), 0);
  spec.bin_edges.resize(spec.counts.size() + 1);
  for (std::size_t i = 0; i < spec.bin_edges.size(); ++i)
    spec.bin_edges[i] = lo + static_cast<double>(i) * bin_width;
  for (double v : values) {
    auto idx = static_cast<std::int64_t>(std::floor((v - lo) / bin_width));
    idx = std::clamp<std::int64_t>(idx, 0, static_cast<std::int64_t>(spec.counts.size()) - 1);
    ++spec.counts[static_cast<std::size_t>(idx)];
  }
  spec.total = values.size();
  return spec;
}

}  // namespace sipmlab
