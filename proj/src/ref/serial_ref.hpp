#pragma once

#include <cstdint>
#include <vector>

#include "gridforge/tensor.hpp"

// Serial reference implementations, written independently of the OpenMP
// kernels in the main library. They favor the most literal formulation of
// each operation (explicit nested loops, full distance matrices, padded
// copies) and are kept for two purposes: the test suites compare the fast
// kernels against them, and the benchmark target measures the speedup.
// Nothing here is linked into the production code paths.
namespace gridforge::ref {

/// Valid or zero-padded "same" 2D convolution by direct summation.
/// input (h, w, c); one kernel per filter, each (kh, kw, c); bias per filter.
Tensor conv2d(const Tensor& input, const std::vector<Tensor>& kernels,
              const std::vector<double>& bias, bool zero_pad);

/// 1D analogue; input (n, c), kernels (kw, c).
Tensor conv1d(const Tensor& input, const std::vector<Tensor>& kernels,
              const std::vector<double>& bias, bool zero_pad);

/// Non-overlapping windowed max / mean per channel; trailing partial
/// windows dropped. Rank-3 input pools (wh, ww); rank-2 pools (wh) rows.
Tensor pool_max(const Tensor& input, std::size_t wh, std::size_t ww);
Tensor pool_avg(const Tensor& input, std::size_t wh, std::size_t ww);

/// GASF / GADF via the algebraic identities (no arccos):
///   gasf[i][j] = x_i*x_j - sqrt(1-x_i^2)*sqrt(1-x_j^2)
///   gadf[i][j] = sqrt(1-x_i^2)*x_j - x_i*sqrt(1-x_j^2)
/// Input must already lie in [-1, 1].
void gaf(const std::vector<double>& x, Tensor& gasf, Tensor& gadf);

/// Per-bin recount: for every bin, scans all points and counts the ones
/// that land in it. Returns raw counts (no log transform).
Tensor bin_counts(const std::vector<double>& fsc, const std::vector<double>& ssc,
                  std::size_t bins, double fsc_lo, double fsc_hi, double ssc_lo,
                  double ssc_hi);

/// Mean Euclidean distance from `query` to its k nearest points in
/// `reference`, by sorting the full distance list.
double knn_mean_distance(const std::vector<std::vector<double>>& reference,
                         const std::vector<double>& query, std::size_t k);

/// One explicit-Euler cart-pole step, deriving the accelerations by solving
/// the 2x2 linear system of the equations of motion with Cramer's rule
/// (an independent algebraic route from the closed-form update).
struct CartState {
    double x, x_dot, theta, theta_dot;
};
CartState cartpole_step(const CartState& s, double force, double gravity,
                        double cart_mass, double pole_mass, double half_length,
                        double dt);

/// Filtered-derivative PID recursion applied to a whole error sequence at
/// once; returns the control sequence. Spreadsheet-style restatement of the
/// streaming controller.
std::vector<double> pid_sequence(const std::vector<double>& errors, double kp,
                                 double ki, double kd, double filter_n, double dt);

} // namespace gridforge::ref
