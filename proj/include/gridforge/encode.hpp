#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridforge/tensor.hpp"

namespace gridforge::encode {

/// Ordered scalar signal (spectrum intensity, sensor trace, ...).
struct Series {
    std::vector<double> values;
};

/// Forward/side scatter events, one point per droplet.
struct PointCloud {
    std::vector<std::array<double, 2>> points; // (fsc, ssc)
};

/// Gramian angular fields of one series: gasf is symmetric, gadf is
/// antisymmetric, all entries in [-1, 1].
struct GafPair {
    Tensor gasf; // n x n
    Tensor gadf; // n x n
};

/// m named series of equal length.
struct MultiSeries {
    std::vector<Series> series;
    std::vector<std::string> names;
};

/// Min-max rescale to [-1, 1]; a constant series maps to all zeros.
Series rescale_unit(const Series& s);

/// Polar-angle encoding: phi_i = arccos(x_i), gasf = cos(phi_i + phi_j),
/// gadf = sin(phi_i - phi_j). Input outside [-1, 1] is rescaled first.
GafPair gaf_encode(const Series& s);

/// Piecewise aggregate approximation: mean of target_len contiguous
/// near-equal segments. Requires 2 <= target_len <= length.
Series resample(const Series& s, std::size_t target_len);

struct BinRange {
    double fsc_lo, fsc_hi, ssc_lo, ssc_hi;
};

/// 2D histogram of the cloud on a bins x bins grid (shape bins x bins x 1).
/// Auto-ranges from the data when `range` is absent (cloud must be
/// non-empty). Points on the upper edge land in the last bin; out-of-range
/// points are dropped. With log_counts, entries are ln(1 + count).
Tensor bin_scatter(const PointCloud& p, std::size_t bins, std::optional<BinRange> range,
                   bool log_counts);

/// Stacks equal-size single-channel grids into one rows x cols x k tensor.
Tensor stack_channels(const std::vector<Tensor>& channels);

/// MultiSeries as an m x T x 1 grid; optional per-row z-scoring
/// (population std; constant rows map to zero).
Tensor series_matrix(const MultiSeries& ms, bool normalize);

/// sRGB [0,1] -> CIELAB (D65). L in [0, 100].
Tensor rgb_to_lab(const Tensor& img);

enum class PerturbKind { fog, spatter, cutout, shift, rotate90, brightness };

struct PerturbParams {
    double intensity = 0.5;   // fog blend strength in [0, 1]
    std::size_t count = 8;    // spatter: number of discs
    double radius = 2.0;      // spatter: disc radius in pixels
    double splat_value = 0.0; // spatter: value written inside discs
    std::size_t cut_rows = 8; // cutout rectangle extents
    std::size_t cut_cols = 8;
    double fill = 0.0;        // cutout fill value
    long shift_rows = 0;      // shift: translation (rows, cols), zero fill
    long shift_cols = 0;
    double factor = 1.0;      // brightness multiplier, clamped to [0, 1]
};

/// Seeded image perturbation; bit-identical for a fixed seed.
Tensor perturb(const Tensor& img, PerturbKind kind, const PerturbParams& params,
               std::uint64_t seed);

PerturbKind perturb_kind_from_name(const std::string& name);

} // namespace gridforge::encode
