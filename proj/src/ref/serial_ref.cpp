#include "serial_ref.hpp"

#include <algorithm>
#include <cmath>

#include "gridforge/error.hpp"

namespace gridforge::ref {

static Tensor zero_pad_2d(const Tensor& input, std::size_t kh, std::size_t kw) {
    std::size_t h = input.extent(0), w = input.extent(1), c = input.extent(2);
    std::size_t top = (kh - 1) / 2, left = (kw - 1) / 2;
    Tensor padded = Tensor::zeros({h + kh - 1, w + kw - 1, c});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            for (std::size_t ch = 0; ch < c; ++ch)
                padded.at(i + top, j + left, ch) = input.at(i, j, ch);
    return padded;
}

Tensor conv2d(const Tensor& input, const std::vector<Tensor>& kernels,
              const std::vector<double>& bias, bool zero_pad) {
    std::size_t kh = kernels.front().extent(0), kw = kernels.front().extent(1);
    Tensor in = zero_pad ? zero_pad_2d(input, kh, kw) : input;
    std::size_t h = in.extent(0), w = in.extent(1), c = in.extent(2);
    std::size_t nf = kernels.size();
    std::size_t oh = h - kh + 1, ow = w - kw + 1;
    Tensor out = Tensor::zeros({oh, ow, nf});
    for (std::size_t f = 0; f < nf; ++f)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double acc = bias[f];
                for (std::size_t di = 0; di < kh; ++di)
                    for (std::size_t dj = 0; dj < kw; ++dj)
                        for (std::size_t ch = 0; ch < c; ++ch)
                            acc += kernels[f].at(di, dj, ch) * in.at(i + di, j + dj, ch);
                out.at(i, j, f) = acc;
            }
    return out;
}

static Tensor zero_pad_1d(const Tensor& input, std::size_t kw) {
    std::size_t n = input.extent(0), c = input.extent(1);
    std::size_t left = (kw - 1) / 2;
    Tensor padded = Tensor::zeros({n + kw - 1, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) padded.at(i + left, ch) = input.at(i, ch);
    return padded;
}

Tensor conv1d(const Tensor& input, const std::vector<Tensor>& kernels,
              const std::vector<double>& bias, bool zero_pad) {
    std::size_t kw = kernels.front().extent(0);
    Tensor in = zero_pad ? zero_pad_1d(input, kw) : input;
    std::size_t n = in.extent(0), c = in.extent(1);
    std::size_t nf = kernels.size();
    std::size_t on = n - kw + 1;
    Tensor out = Tensor::zeros({on, nf});
    for (std::size_t f = 0; f < nf; ++f)
        for (std::size_t i = 0; i < on; ++i) {
            double acc = bias[f];
            for (std::size_t dj = 0; dj < kw; ++dj)
                for (std::size_t ch = 0; ch < c; ++ch)
                    acc += kernels[f].at(dj, ch) * in.at(i + dj, ch);
            out.at(i, f) = acc;
        }
    return out;
}

template <bool Max>
static Tensor pool_impl(const Tensor& input, std::size_t wh, std::size_t ww) {
    if (input.rank() == 2) {
        std::size_t n = input.extent(0), c = input.extent(1);
        std::size_t on = n / wh;
        Tensor out = Tensor::zeros({on, c});
        for (std::size_t i = 0; i < on; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = Max ? input.at(i * wh, ch) : 0.0;
                for (std::size_t d = 0; d < wh; ++d) {
                    double v = input.at(i * wh + d, ch);
                    acc = Max ? std::max(acc, v) : acc + v;
                }
                out.at(i, ch) = Max ? acc : acc / static_cast<double>(wh);
            }
        return out;
    }
    std::size_t h = input.extent(0), w = input.extent(1), c = input.extent(2);
    std::size_t oh = h / wh, ow = w / ww;
    Tensor out = Tensor::zeros({oh, ow, c});
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = Max ? input.at(i * wh, j * ww, ch) : 0.0;
                for (std::size_t di = 0; di < wh; ++di)
                    for (std::size_t dj = 0; dj < ww; ++dj) {
                        double v = input.at(i * wh + di, j * ww + dj, ch);
                        acc = Max ? std::max(acc, v) : acc + v;
                    }
                out.at(i, j, ch) = Max ? acc : acc / static_cast<double>(wh * ww);
            }
    return out;
}

Tensor pool_max(const Tensor& input, std::size_t wh, std::size_t ww) {
    return pool_impl<true>(input, wh, ww);
}

Tensor pool_avg(const Tensor& input, std::size_t wh, std::size_t ww) {
    return pool_impl<false>(input, wh, ww);
}

void gaf(const std::vector<double>& x, Tensor& gasf, Tensor& gadf) {
    std::size_t n = x.size();
    gasf = Tensor::zeros({n, n});
    gadf = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double si = std::sqrt(std::max(0.0, 1.0 - x[i] * x[i]));
            double sj = std::sqrt(std::max(0.0, 1.0 - x[j] * x[j]));
            gasf.at(i, j) = x[i] * x[j] - si * sj;
            gadf.at(i, j) = si * x[j] - x[i] * sj;
        }
}

Tensor bin_counts(const std::vector<double>& fsc, const std::vector<double>& ssc,
                  std::size_t bins, double fsc_lo, double fsc_hi, double ssc_lo,
                  double ssc_hi) {
    Tensor out = Tensor::zeros({bins, bins, 1});
    double fw = (fsc_hi - fsc_lo) / static_cast<double>(bins);
    double sw = (ssc_hi - ssc_lo) / static_cast<double>(bins);
    for (std::size_t bi = 0; bi < bins; ++bi)
        for (std::size_t bj = 0; bj < bins; ++bj) {
            double flo = fsc_lo + static_cast<double>(bi) * fw;
            double fhi = fsc_lo + static_cast<double>(bi + 1) * fw;
            double slo = ssc_lo + static_cast<double>(bj) * sw;
            double shi = ssc_lo + static_cast<double>(bj + 1) * sw;
            bool last_f = bi + 1 == bins, last_s = bj + 1 == bins;
            long count = 0;
            for (std::size_t p = 0; p < fsc.size(); ++p) {
                bool in_f = fsc[p] >= flo && (last_f ? fsc[p] <= fsc_hi : fsc[p] < fhi);
                bool in_s = ssc[p] >= slo && (last_s ? ssc[p] <= ssc_hi : ssc[p] < shi);
                if (in_f && in_s) ++count;
            }
            out.at(bi, bj, 0) = static_cast<double>(count);
        }
    return out;
}

double knn_mean_distance(const std::vector<std::vector<double>>& reference,
                         const std::vector<double>& query, std::size_t k) {
    std::vector<double> dist;
    dist.reserve(reference.size());
    for (const auto& r : reference) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < query.size(); ++i) {
            double d = r[i] - query[i];
            d2 += d * d;
        }
        dist.push_back(std::sqrt(d2));
    }
    std::sort(dist.begin(), dist.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += dist[i];
    return acc / static_cast<double>(k);
}

CartState cartpole_step(const CartState& s, double force, double gravity,
                        double cart_mass, double pole_mass, double half_length,
                        double dt) {
    // Equations of motion in matrix form:
    //   [ M+m        m*l*cos(th) ] [ xdd  ]   [ F + m*l*thd^2*sin(th) ]
    //   [ m*l*cos(th) (4/3)m*l^2 ] [ thdd ] = [ m*g*l*sin(th)         ]
    double m = pole_mass, M = cart_mass, l = half_length;
    double c = std::cos(s.theta), sn = std::sin(s.theta);
    double a11 = M + m;
    double a12 = m * l * c;
    double a21 = m * l * c;
    double a22 = (4.0 / 3.0) * m * l * l;
    double b1 = force + m * l * s.theta_dot * s.theta_dot * sn;
    double b2 = m * gravity * l * sn;
    double det = a11 * a22 - a12 * a21;
    double xdd = (b1 * a22 - a12 * b2) / det;
    double thdd = (a11 * b2 - b1 * a21) / det;
    CartState next;
    next.x = s.x + dt * s.x_dot;
    next.x_dot = s.x_dot + dt * xdd;
    next.theta = s.theta + dt * s.theta_dot;
    next.theta_dot = s.theta_dot + dt * thdd;
    return next;
}

std::vector<double> pid_sequence(const std::vector<double>& errors, double kp,
                                 double ki, double kd, double filter_n, double dt) {
    std::vector<double> u(errors.size());
    double integral = 0.0, d = 0.0, e_prev = 0.0;
    for (std::size_t i = 0; i < errors.size(); ++i) {
        double e = errors[i];
        integral += e * dt;
        d = (d + filter_n * (e - e_prev)) / (1.0 + filter_n * dt);
        u[i] = kp * e + ki * integral + kd * d;
        e_prev = e;
    }
    return u;
}

} // namespace gridforge::ref
