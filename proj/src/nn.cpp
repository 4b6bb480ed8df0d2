#include "gridforge/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "gridforge/error.hpp"
#include "gridforge/parallel.hpp"
#include "gridforge/rng.hpp"

namespace gridforge::nn {

using nlohmann::json;

namespace {

const char* layer_name(const LayerSpec& layer) {
    return std::visit(
        [](const auto& l) -> const char* {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, Conv1DSpec>) return "conv1d";
            else if constexpr (std::is_same_v<T, Conv2DSpec>) return "conv2d";
            else if constexpr (std::is_same_v<T, ActSpec>) return "activation";
            else if constexpr (std::is_same_v<T, PoolSpec>) return "pool";
            else if constexpr (std::is_same_v<T, FlattenSpec>) return "flatten";
            else if constexpr (std::is_same_v<T, DenseSpec>) return "dense";
            else if constexpr (std::is_same_v<T, DropoutSpec>) return "dropout";
            else return "softmax";
        },
        layer);
}

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

void check_finite(const Tensor& t, std::size_t layer_index, const char* what) {
    if (!t.all_finite())
        throw NumericError(std::string("non-finite ") + what + " at layer " +
                           std::to_string(layer_index));
}

// ---- convolution kernels -------------------------------------------------

// Window extents for pooling: (wh, ww) from the spec's window list.
std::pair<std::size_t, std::size_t> pool_window(const PoolSpec& p, std::size_t rank) {
    if (p.window.empty() || p.window.size() > 2)
        throw SpecError("pool window must have one or two extents");
    for (std::size_t w : p.window)
        if (w == 0) throw SpecError("pool window extents must be >= 1");
    if (rank == 2) {
        if (p.window.size() != 1)
            throw ShapeError("1D pooling expects a single window extent");
        return {p.window[0], 1};
    }
    std::size_t wh = p.window[0];
    std::size_t ww = p.window.size() == 2 ? p.window[1] : p.window[0];
    return {wh, ww};
}

Tensor conv2d_forward(const Tensor& in, const Tensor& W, const Tensor& b, Pad pad) {
    const std::size_t h = in.extent(0), w = in.extent(1), c = in.extent(2);
    const std::size_t nf = W.extent(0), kh = W.extent(1), kw = W.extent(2);
    const std::size_t pt = pad == Pad::same ? (kh - 1) / 2 : 0;
    const std::size_t pl = pad == Pad::same ? (kw - 1) / 2 : 0;
    const std::size_t oh = pad == Pad::same ? h : h - kh + 1;
    const std::size_t ow = pad == Pad::same ? w : w - kw + 1;
    Tensor out = Tensor::zeros({oh, ow, nf});
    const double* pin = in.data();
    const double* pw = W.data();
    const double* pb = b.data();
    double* po = out.data();
    const long long loh = static_cast<long long>(oh);
    const bool par = oh * ow * nf * kh * kw * c >= 16384;
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (par)
    for (long long i = 0; i < loh; ++i) {
        const std::size_t di_lo = pt > static_cast<std::size_t>(i) ? pt - i : 0;
        const std::size_t di_hi = std::min(kh, h + pt - static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < ow; ++j) {
            const std::size_t dj_lo = pl > j ? pl - j : 0;
            const std::size_t dj_hi = std::min(kw, w + pl - j);
            for (std::size_t f = 0; f < nf; ++f) {
                double acc = pb[f];
                for (std::size_t di = di_lo; di < di_hi; ++di) {
                    const std::size_t y = static_cast<std::size_t>(i) + di - pt;
                    for (std::size_t dj = dj_lo; dj < dj_hi; ++dj) {
                        const std::size_t x = j + dj - pl;
                        const double* wrow = pw + ((f * kh + di) * kw + dj) * c;
                        const double* irow = pin + (y * w + x) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) acc += wrow[ch] * irow[ch];
                    }
                }
                po[(static_cast<std::size_t>(i) * ow + j) * nf + f] = acc;
            }
        }
    }
    return out;
}

struct ConvGrads {
    Tensor dweights;
    Tensor dbias;
    Tensor dinput;
};

ConvGrads conv2d_backward(const Tensor& in, const Tensor& W, const Tensor& dout, Pad pad) {
    const std::size_t h = in.extent(0), w = in.extent(1), c = in.extent(2);
    const std::size_t nf = W.extent(0), kh = W.extent(1), kw = W.extent(2);
    const std::size_t pt = pad == Pad::same ? (kh - 1) / 2 : 0;
    const std::size_t pl = pad == Pad::same ? (kw - 1) / 2 : 0;
    const std::size_t oh = dout.extent(0), ow = dout.extent(1);
    ConvGrads g{Tensor::zeros(W.shape()), Tensor::zeros({nf}), Tensor::zeros(in.shape())};
    const double* pin = in.data();
    const double* pw = W.data();
    const double* pdo = dout.data();
    double* pdw = g.dweights.data();
    double* pdb = g.dbias.data();
    double* pdi = g.dinput.data();

    // Filter gradients: each thread owns the whole slab of one filter, so
    // accumulation order is fixed regardless of the thread count.
    const long long lnf = static_cast<long long>(nf);
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (nf >= 2 && oh * ow * kh * kw * c >= 8192)
    for (long long f = 0; f < lnf; ++f) {
        double bias_acc = 0.0;
        for (std::size_t i = 0; i < oh; ++i) {
            const std::size_t di_lo = pt > i ? pt - i : 0;
            const std::size_t di_hi = std::min(kh, h + pt - i);
            for (std::size_t j = 0; j < ow; ++j) {
                const double gval = pdo[(i * ow + j) * nf + static_cast<std::size_t>(f)];
                bias_acc += gval;
                const std::size_t dj_lo = pl > j ? pl - j : 0;
                const std::size_t dj_hi = std::min(kw, w + pl - j);
                for (std::size_t di = di_lo; di < di_hi; ++di) {
                    const std::size_t y = i + di - pt;
                    for (std::size_t dj = dj_lo; dj < dj_hi; ++dj) {
                        const std::size_t x = j + dj - pl;
                        double* wrow = pdw + ((static_cast<std::size_t>(f) * kh + di) * kw + dj) * c;
                        const double* irow = pin + (y * w + x) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) wrow[ch] += gval * irow[ch];
                    }
                }
            }
        }
        pdb[f] = bias_acc;
    }

    // Input gradient, gather form: every input cell sums its own
    // contributions in a fixed (f, di, dj) order.
    const long long lh = static_cast<long long>(h);
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (h >= 2 && h * w * c * nf * kh * kw >= 16384)
    for (long long y = 0; y < lh; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double* drow = pdi + (static_cast<std::size_t>(y) * w + x) * c;
            for (std::size_t f = 0; f < nf; ++f) {
                for (std::size_t di = 0; di < kh; ++di) {
                    const std::size_t ypt = static_cast<std::size_t>(y) + pt;
                    if (ypt < di) continue;
                    const std::size_t oy = ypt - di;
                    if (oy >= oh) continue;
                    for (std::size_t dj = 0; dj < kw; ++dj) {
                        const std::size_t xpl = x + pl;
                        if (xpl < dj) continue;
                        const std::size_t ox = xpl - dj;
                        if (ox >= ow) continue;
                        const double gval = pdo[(oy * ow + ox) * nf + f];
                        const double* wrow = pw + ((f * kh + di) * kw + dj) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) drow[ch] += gval * wrow[ch];
                    }
                }
            }
        }
    }
    return g;
}

Tensor conv1d_forward(const Tensor& in, const Tensor& W, const Tensor& b, Pad pad) {
    const std::size_t n = in.extent(0), c = in.extent(1);
    const std::size_t nf = W.extent(0), kw = W.extent(1);
    const std::size_t pl = pad == Pad::same ? (kw - 1) / 2 : 0;
    const std::size_t on = pad == Pad::same ? n : n - kw + 1;
    Tensor out = Tensor::zeros({on, nf});
    const double* pin = in.data();
    const double* pw = W.data();
    const double* pb = b.data();
    double* po = out.data();
    const long long lon = static_cast<long long>(on);
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (on >= 64 && on * nf * kw * c >= 16384)
    for (long long i = 0; i < lon; ++i) {
        const std::size_t dj_lo = pl > static_cast<std::size_t>(i) ? pl - i : 0;
        const std::size_t dj_hi = std::min(kw, n + pl - static_cast<std::size_t>(i));
        for (std::size_t f = 0; f < nf; ++f) {
            double acc = pb[f];
            for (std::size_t dj = dj_lo; dj < dj_hi; ++dj) {
                const std::size_t x = static_cast<std::size_t>(i) + dj - pl;
                const double* wrow = pw + (f * kw + dj) * c;
                const double* irow = pin + x * c;
                for (std::size_t ch = 0; ch < c; ++ch) acc += wrow[ch] * irow[ch];
            }
            po[static_cast<std::size_t>(i) * nf + f] = acc;
        }
    }
    return out;
}

ConvGrads conv1d_backward(const Tensor& in, const Tensor& W, const Tensor& dout, Pad pad) {
    const std::size_t n = in.extent(0), c = in.extent(1);
    const std::size_t nf = W.extent(0), kw = W.extent(1);
    const std::size_t pl = pad == Pad::same ? (kw - 1) / 2 : 0;
    const std::size_t on = dout.extent(0);
    ConvGrads g{Tensor::zeros(W.shape()), Tensor::zeros({nf}), Tensor::zeros(in.shape())};
    const double* pin = in.data();
    const double* pw = W.data();
    const double* pdo = dout.data();
    double* pdw = g.dweights.data();
    double* pdb = g.dbias.data();
    double* pdi = g.dinput.data();

    const long long lnf = static_cast<long long>(nf);
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (nf >= 2 && on * kw * c >= 8192)
    for (long long f = 0; f < lnf; ++f) {
        double bias_acc = 0.0;
        for (std::size_t i = 0; i < on; ++i) {
            const double gval = pdo[i * nf + static_cast<std::size_t>(f)];
            bias_acc += gval;
            const std::size_t dj_lo = pl > i ? pl - i : 0;
            const std::size_t dj_hi = std::min(kw, n + pl - i);
            for (std::size_t dj = dj_lo; dj < dj_hi; ++dj) {
                const std::size_t x = i + dj - pl;
                double* wrow = pdw + (static_cast<std::size_t>(f) * kw + dj) * c;
                const double* irow = pin + x * c;
                for (std::size_t ch = 0; ch < c; ++ch) wrow[ch] += gval * irow[ch];
            }
        }
        pdb[f] = bias_acc;
    }

    const long long ln = static_cast<long long>(n);
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (n >= 64 && n * c * nf * kw >= 16384)
    for (long long x = 0; x < ln; ++x) {
        double* drow = pdi + static_cast<std::size_t>(x) * c;
        for (std::size_t f = 0; f < nf; ++f)
            for (std::size_t dj = 0; dj < kw; ++dj) {
                const std::size_t xpl = static_cast<std::size_t>(x) + pl;
                if (xpl < dj) continue;
                const std::size_t ox = xpl - dj;
                if (ox >= on) continue;
                const double gval = pdo[ox * nf + f];
                const double* wrow = pw + (f * kw + dj) * c;
                for (std::size_t ch = 0; ch < c; ++ch) drow[ch] += gval * wrow[ch];
            }
    }
    return g;
}

// ---- pooling -------------------------------------------------------------

Tensor pool_forward(const Tensor& in, PoolKind kind, std::size_t wh, std::size_t ww) {
    const bool is2d = in.rank() == 3;
    const std::size_t h = in.extent(0);
    const std::size_t w = is2d ? in.extent(1) : 1;
    const std::size_t c = is2d ? in.extent(2) : in.extent(1);
    const std::size_t oh = h / wh;
    const std::size_t ow = is2d ? w / ww : 1;
    Tensor out = is2d ? Tensor::zeros({oh, ow, c}) : Tensor::zeros({oh, c});
    const double* pin = in.data();
    double* po = out.data();
    const double inv = 1.0 / static_cast<double>(wh * ww);
    const long long loh = static_cast<long long>(oh);
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (oh >= 8 && oh * ow * c * wh * ww >= 16384)
    for (long long i = 0; i < loh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = kind == PoolKind::max
                                 ? pin[((static_cast<std::size_t>(i) * wh) * w + j * ww) * c + ch]
                                 : 0.0;
                for (std::size_t di = 0; di < wh; ++di)
                    for (std::size_t dj = 0; dj < ww; ++dj) {
                        const double v =
                            pin[((static_cast<std::size_t>(i) * wh + di) * w + j * ww + dj) * c + ch];
                        acc = kind == PoolKind::max ? std::max(acc, v) : acc + v;
                    }
                po[(static_cast<std::size_t>(i) * ow + j) * c + ch] =
                    kind == PoolKind::max ? acc : acc * inv;
            }
    return out;
}

Tensor pool_backward(const Tensor& in, const Tensor& dout, PoolKind kind, std::size_t wh,
                     std::size_t ww) {
    const bool is2d = in.rank() == 3;
    const std::size_t h = in.extent(0);
    const std::size_t w = is2d ? in.extent(1) : 1;
    const std::size_t c = is2d ? in.extent(2) : in.extent(1);
    const std::size_t oh = h / wh;
    const std::size_t ow = is2d ? w / ww : 1;
    Tensor din = Tensor::zeros(in.shape());
    const double* pin = in.data();
    const double* pdo = dout.data();
    double* pdi = din.data();
    const double inv = 1.0 / static_cast<double>(wh * ww);
    const long long loh = static_cast<long long>(oh);
    // Windows do not overlap, so parallel scatter over output cells is safe.
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (oh >= 8 && oh * ow * c * wh * ww >= 16384)
    for (long long i = 0; i < loh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double gval = pdo[(static_cast<std::size_t>(i) * ow + j) * c + ch];
                if (kind == PoolKind::avg) {
                    for (std::size_t di = 0; di < wh; ++di)
                        for (std::size_t dj = 0; dj < ww; ++dj)
                            pdi[((static_cast<std::size_t>(i) * wh + di) * w + j * ww + dj) * c +
                                ch] += gval * inv;
                } else {
                    // first row-major maximizer takes the whole gradient
                    std::size_t best_off =
                        ((static_cast<std::size_t>(i) * wh) * w + j * ww) * c + ch;
                    double best = pin[best_off];
                    for (std::size_t di = 0; di < wh; ++di)
                        for (std::size_t dj = 0; dj < ww; ++dj) {
                            const std::size_t off =
                                ((static_cast<std::size_t>(i) * wh + di) * w + j * ww + dj) * c +
                                ch;
                            if (pin[off] > best) {
                                best = pin[off];
                                best_off = off;
                            }
                        }
                    pdi[best_off] += gval;
                }
            }
    return din;
}

// ---- dense / activations / softmax ----------------------------------------

Tensor dense_forward(const Tensor& v, const Tensor& W, const Tensor& b) {
    const std::size_t units = W.extent(0), in_n = W.extent(1);
    Tensor out = Tensor::zeros({units});
    const double* pv = v.data();
    const double* pw = W.data();
    const double* pb = b.data();
    double* po = out.data();
    const long long lu = static_cast<long long>(units);
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (units >= 8 && units * in_n >= 32768)
    for (long long u = 0; u < lu; ++u) {
        const double* wrow = pw + static_cast<std::size_t>(u) * in_n;
        double acc = pb[u];
        for (std::size_t i = 0; i < in_n; ++i) acc += wrow[i] * pv[i];
        po[u] = acc;
    }
    return out;
}

struct DenseGrads {
    Tensor dweights;
    Tensor dbias;
    Tensor dinput;
};

DenseGrads dense_backward(const Tensor& v, const Tensor& W, const Tensor& dout) {
    const std::size_t units = W.extent(0), in_n = W.extent(1);
    DenseGrads g{Tensor::zeros(W.shape()), dout, Tensor::zeros(v.shape())};
    const double* pv = v.data();
    const double* pw = W.data();
    const double* pdo = dout.data();
    double* pdw = g.dweights.data();
    double* pdi = g.dinput.data();
    const long long lu = static_cast<long long>(units);
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (units >= 8 && units * in_n >= 32768)
    for (long long u = 0; u < lu; ++u) {
        const double gval = pdo[u];
        double* wrow = pdw + static_cast<std::size_t>(u) * in_n;
        for (std::size_t i = 0; i < in_n; ++i) wrow[i] = gval * pv[i];
    }
    const long long li = static_cast<long long>(in_n);
#pragma omp parallel for num_threads(thread_count()) schedule(static) \
    if (in_n >= 64 && units * in_n >= 32768)
    for (long long i = 0; i < li; ++i) {
        double acc = 0.0;
        for (std::size_t u = 0; u < units; ++u)
            acc += pw[u * in_n + static_cast<std::size_t>(i)] * pdo[u];
        pdi[i] = acc;
    }
    return g;
}

double act_apply(Act kind, double z) {
    switch (kind) {
        case Act::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Act::tanh: return std::tanh(z);
        case Act::relu: return z > 0.0 ? z : 0.0;
    }
    return 0.0;
}

Tensor act_forward(const Tensor& in, Act kind) {
    Tensor out = in;
    double* p = out.data();
    const long long n = static_cast<long long>(out.size());
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (n >= 32768)
    for (long long i = 0; i < n; ++i) p[i] = act_apply(kind, p[i]);
    return out;
}

// d/dz computed from the cached input z and output a.
Tensor act_backward(const Tensor& z, const Tensor& a, Act kind, const Tensor& dout) {
    Tensor din = dout;
    double* p = din.data();
    const double* pz = z.data();
    const double* pa = a.data();
    const long long n = static_cast<long long>(din.size());
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (n >= 32768)
    for (long long i = 0; i < n; ++i) {
        double d = 0.0;
        switch (kind) {
            case Act::sigmoid: d = pa[i] * (1.0 - pa[i]); break;
            case Act::tanh: d = 1.0 - pa[i] * pa[i]; break;
            case Act::relu: d = pz[i] > 0.0 ? 1.0 : 0.0; break;
        }
        p[i] *= d;
    }
    return din;
}

Tensor softmax_forward(const Tensor& v) {
    Tensor out = v;
    double* p = out.data();
    const std::size_t n = out.size();
    double m = p[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, p[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::exp(p[i] - m);
        s += p[i];
    }
    for (std::size_t i = 0; i < n; ++i) p[i] /= s;
    return out;
}

Tensor softmax_backward(const Tensor& prob, const Tensor& dout) {
    const std::size_t n = prob.size();
    const double* pp = prob.data();
    const double* pd = dout.data();
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += pd[i] * pp[i];
    Tensor din = Tensor::zeros(prob.shape());
    double* po = din.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pp[i] * (pd[i] - dot);
    return din;
}

Tensor dropout_mask(const Shape& shape, double rate, std::uint64_t seed) {
    Tensor mask = Tensor::zeros(shape);
    Rng rng(seed);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& m : mask.storage()) m = rng.uniform() < rate ? 0.0 : keep_scale;
    return mask;
}

Tensor elementwise_product(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] *= pb[i];
    return out;
}

// ---- parameter bookkeeping -------------------------------------------------

Params zeros_like(const Params& p) {
    Params z;
    z.layers.resize(p.layers.size());
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        if (!p.layers[i].weights.empty()) z.layers[i].weights = Tensor::zeros(p.layers[i].weights.shape());
        if (!p.layers[i].bias.empty()) z.layers[i].bias = Tensor::zeros(p.layers[i].bias.shape());
    }
    return z;
}

void accumulate(Params& acc, const Params& g) {
    for (std::size_t i = 0; i < acc.layers.size(); ++i) {
        double* aw = acc.layers[i].weights.data();
        const double* gw = g.layers[i].weights.data();
        for (std::size_t k = 0; k < acc.layers[i].weights.size(); ++k) aw[k] += gw[k];
        double* ab = acc.layers[i].bias.data();
        const double* gb = g.layers[i].bias.data();
        for (std::size_t k = 0; k < acc.layers[i].bias.size(); ++k) ab[k] += gb[k];
    }
}

void apply_update(Params& p, const Params& g, double scale) {
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        double* pw = p.layers[i].weights.data();
        const double* gw = g.layers[i].weights.data();
        for (std::size_t k = 0; k < p.layers[i].weights.size(); ++k) pw[k] += scale * gw[k];
        double* pb = p.layers[i].bias.data();
        const double* gb = g.layers[i].bias.data();
        for (std::size_t k = 0; k < p.layers[i].bias.size(); ++k) pb[k] += scale * gb[k];
    }
}

std::size_t argmax_first(const Tensor& t) {
    const double* p = t.data();
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.size(); ++i)
        if (p[i] > p[best]) best = i;
    return best;
}

} // namespace

// ---- shape propagation -----------------------------------------------------

std::vector<Shape> propagate_shapes(const NetworkSpec& spec) {
    if (spec.layers.empty()) throw SpecError("network must have at least one layer");
    if (spec.input_shape.empty()) throw ShapeError("network input shape is empty");
    for (std::size_t e : spec.input_shape)
        if (e == 0) throw ShapeError("network input extents must be >= 1");

    std::vector<Shape> shapes;
    Shape cur = spec.input_shape;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& layer = spec.layers[li];
        auto fail = [&](const std::string& msg) {
            throw ShapeError("layer " + std::to_string(li) + " (" + layer_name(layer) +
                             "): " + msg);
        };
        if (const auto* c1 = std::get_if<Conv1DSpec>(&layer)) {
            if (cur.size() != 2) fail("conv1d expects (length, channels) input");
            if (c1->filters == 0 || c1->width == 0) fail("filter count and width must be >= 1");
            if (c1->pad == Pad::valid && c1->width > cur[0]) fail("kernel wider than input");
            std::size_t n = c1->pad == Pad::same ? cur[0] : cur[0] - c1->width + 1;
            cur = {n, c1->filters};
        } else if (const auto* c2 = std::get_if<Conv2DSpec>(&layer)) {
            if (cur.size() != 3) fail("conv2d expects (rows, cols, channels) input");
            if (c2->filters == 0 || c2->height == 0 || c2->width == 0)
                fail("filter count and extents must be >= 1");
            if (c2->pad == Pad::valid && (c2->height > cur[0] || c2->width > cur[1]))
                fail("kernel larger than input");
            std::size_t oh = c2->pad == Pad::same ? cur[0] : cur[0] - c2->height + 1;
            std::size_t ow = c2->pad == Pad::same ? cur[1] : cur[1] - c2->width + 1;
            cur = {oh, ow, c2->filters};
        } else if (std::get_if<ActSpec>(&layer)) {
            // shape preserved
        } else if (const auto* pl = std::get_if<PoolSpec>(&layer)) {
            if (cur.size() != 2 && cur.size() != 3) fail("pooling expects rank 2 or 3 input");
            auto [wh, ww] = pool_window(*pl, cur.size());
            if (cur.size() == 2) {
                if (cur[0] / wh == 0) fail("pool window larger than input");
                cur = {cur[0] / wh, cur[1]};
            } else {
                if (cur[0] / wh == 0 || cur[1] / ww == 0) fail("pool window larger than input");
                cur = {cur[0] / wh, cur[1] / ww, cur[2]};
            }
        } else if (std::get_if<FlattenSpec>(&layer)) {
            cur = {numel(cur)};
        } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            if (cur.size() != 1) fail("dense expects a flat vector input");
            if (d->units == 0) fail("dense units must be >= 1");
            cur = {d->units};
        } else if (const auto* dr = std::get_if<DropoutSpec>(&layer)) {
            if (dr->rate < 0.0 || dr->rate >= 1.0)
                throw SpecError("layer " + std::to_string(li) + ": dropout rate must be in [0, 1)");
        } else if (std::get_if<SoftmaxSpec>(&layer)) {
            if (cur.size() != 1) fail("softmax expects a flat vector input");
        }
        shapes.push_back(cur);
    }

    const bool terminal_softmax = std::holds_alternative<SoftmaxSpec>(spec.layers.back());
    if (spec.loss == LossKind::cross_entropy && !terminal_softmax)
        throw SpecError("cross-entropy loss requires a terminal softmax layer");
    if (spec.loss == LossKind::sse && terminal_softmax)
        throw SpecError("sse loss requires a linear (non-softmax) output");
    if (spec.loss == LossKind::sse && shapes.back().size() != 1)
        throw SpecError("sse loss requires a flat vector or scalar output");
    return shapes;
}

// ---- init ------------------------------------------------------------------

Params init_params(const NetworkSpec& spec, std::uint64_t seed) {
    std::vector<Shape> shapes = propagate_shapes(spec);
    Params params;
    params.seed = seed;
    params.layers.resize(spec.layers.size());
    Rng rng(seed);
    Shape cur = spec.input_shape;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& layer = spec.layers[li];
        if (const auto* c1 = std::get_if<Conv1DSpec>(&layer)) {
            std::size_t fan_in = c1->width * cur[1];
            std::size_t fan_out = c1->width * c1->filters;
            double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            Tensor w = Tensor::zeros({c1->filters, c1->width, cur[1]});
            for (double& v : w.storage()) v = rng.uniform(-limit, limit);
            params.layers[li] = {std::move(w), Tensor::zeros({c1->filters})};
        } else if (const auto* c2 = std::get_if<Conv2DSpec>(&layer)) {
            std::size_t fan_in = c2->height * c2->width * cur[2];
            std::size_t fan_out = c2->height * c2->width * c2->filters;
            double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            Tensor w = Tensor::zeros({c2->filters, c2->height, c2->width, cur[2]});
            for (double& v : w.storage()) v = rng.uniform(-limit, limit);
            params.layers[li] = {std::move(w), Tensor::zeros({c2->filters})};
        } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            std::size_t fan_in = cur[0];
            std::size_t fan_out = d->units;
            double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            Tensor w = Tensor::zeros({d->units, cur[0]});
            for (double& v : w.storage()) v = rng.uniform(-limit, limit);
            params.layers[li] = {std::move(w), Tensor::zeros({d->units})};
        }
        cur = shapes[li];
    }
    return params;
}

// ---- forward / backward ------------------------------------------------------

Tensor forward(const NetworkSpec& spec, const Params& params, const Tensor& input,
               ForwardTrace* trace, bool training, std::uint64_t dropout_seed) {
    if (params.layers.size() != spec.layers.size())
        throw SpecError("params do not match network layer count");
    if (input.shape() != spec.input_shape)
        throw ShapeError("input shape does not match network input shape");
    if (trace) {
        trace->outputs.clear();
        trace->dropout_masks.assign(spec.layers.size(), Tensor());
        trace->training = training;
    }
    Tensor cur = input;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& layer = spec.layers[li];
        if (const auto* c1 = std::get_if<Conv1DSpec>(&layer)) {
            if (cur.extent(1) != params.layers[li].weights.extent(2))
                throw ShapeError("conv1d channel mismatch at layer " + std::to_string(li));
            cur = conv1d_forward(cur, params.layers[li].weights, params.layers[li].bias, c1->pad);
        } else if (const auto* c2 = std::get_if<Conv2DSpec>(&layer)) {
            if (cur.extent(2) != params.layers[li].weights.extent(3))
                throw ShapeError("conv2d channel mismatch at layer " + std::to_string(li));
            cur = conv2d_forward(cur, params.layers[li].weights, params.layers[li].bias, c2->pad);
        } else if (const auto* a = std::get_if<ActSpec>(&layer)) {
            cur = act_forward(cur, a->kind);
        } else if (const auto* pl = std::get_if<PoolSpec>(&layer)) {
            auto [wh, ww] = pool_window(*pl, cur.rank());
            cur = pool_forward(cur, pl->kind, wh, ww);
        } else if (std::get_if<FlattenSpec>(&layer)) {
            cur = cur.reshape({cur.size()});
        } else if (std::get_if<DenseSpec>(&layer)) {
            cur = dense_forward(cur, params.layers[li].weights, params.layers[li].bias);
        } else if (const auto* dr = std::get_if<DropoutSpec>(&layer)) {
            if (training && dr->rate > 0.0) {
                Tensor mask = dropout_mask(cur.shape(), dr->rate, derive_seed(dropout_seed, li));
                cur = elementwise_product(cur, mask);
                if (trace) trace->dropout_masks[li] = std::move(mask);
            }
        } else if (std::get_if<SoftmaxSpec>(&layer)) {
            cur = softmax_forward(cur);
        }
        check_finite(cur, li, "activation values");
        if (trace) trace->outputs.push_back(cur);
    }
    return cur;
}

double loss_value(const Tensor& pred, const Tensor& target, LossKind kind) {
    if (pred.shape() != target.shape())
        throw ShapeError("prediction and target shapes differ");
    const double* pp = pred.data();
    const double* pt = target.data();
    double acc = 0.0;
    if (kind == LossKind::sse) {
        for (std::size_t i = 0; i < pred.size(); ++i) {
            double d = pp[i] - pt[i];
            acc += d * d;
        }
    } else {
        for (std::size_t i = 0; i < pred.size(); ++i)
            acc -= pt[i] * std::log(pp[i] + 1e-12);
    }
    return acc;
}

BackwardResult backward(const NetworkSpec& spec, const Params& params, const Tensor& input,
                        const Tensor& target, bool training, std::uint64_t dropout_seed) {
    ForwardTrace trace;
    Tensor pred = forward(spec, params, input, &trace, training, dropout_seed);

    BackwardResult result;
    result.prediction = pred;
    result.loss = loss_value(pred, target, spec.loss);
    result.grads = zeros_like(params);
    result.grads.seed = params.seed;

    // dL/d(prediction)
    Tensor delta = Tensor::zeros(pred.shape());
    {
        const double* pp = pred.data();
        const double* pt = target.data();
        double* pd = delta.data();
        if (spec.loss == LossKind::sse) {
            for (std::size_t i = 0; i < pred.size(); ++i) pd[i] = 2.0 * (pp[i] - pt[i]);
        } else {
            for (std::size_t i = 0; i < pred.size(); ++i) pd[i] = -pt[i] / (pp[i] + 1e-12);
        }
    }

    for (std::size_t k = spec.layers.size(); k-- > 0;) {
        const LayerSpec& layer = spec.layers[k];
        const Tensor& layer_in = k == 0 ? input : trace.outputs[k - 1];
        const Tensor& layer_out = trace.outputs[k];
        if (const auto* c1 = std::get_if<Conv1DSpec>(&layer)) {
            ConvGrads g = conv1d_backward(layer_in, params.layers[k].weights, delta, c1->pad);
            result.grads.layers[k].weights = std::move(g.dweights);
            result.grads.layers[k].bias = std::move(g.dbias);
            delta = std::move(g.dinput);
        } else if (const auto* c2 = std::get_if<Conv2DSpec>(&layer)) {
            ConvGrads g = conv2d_backward(layer_in, params.layers[k].weights, delta, c2->pad);
            result.grads.layers[k].weights = std::move(g.dweights);
            result.grads.layers[k].bias = std::move(g.dbias);
            delta = std::move(g.dinput);
        } else if (const auto* a = std::get_if<ActSpec>(&layer)) {
            delta = act_backward(layer_in, layer_out, a->kind, delta);
        } else if (const auto* pl = std::get_if<PoolSpec>(&layer)) {
            auto [wh, ww] = pool_window(*pl, layer_in.rank());
            delta = pool_backward(layer_in, delta, pl->kind, wh, ww);
        } else if (std::get_if<FlattenSpec>(&layer)) {
            delta = delta.reshape(layer_in.shape());
        } else if (std::get_if<DenseSpec>(&layer)) {
            DenseGrads g = dense_backward(layer_in, params.layers[k].weights, delta);
            result.grads.layers[k].weights = std::move(g.dweights);
            result.grads.layers[k].bias = std::move(g.dbias);
            delta = std::move(g.dinput);
        } else if (std::get_if<DropoutSpec>(&layer)) {
            if (!trace.dropout_masks[k].empty())
                delta = elementwise_product(delta, trace.dropout_masks[k]);
        } else if (std::get_if<SoftmaxSpec>(&layer)) {
            delta = softmax_backward(layer_out, delta);
        }
        check_finite(delta, k, "gradients");
    }
    return result;
}

// ---- training / evaluation ---------------------------------------------------

TrainResult train(const NetworkSpec& spec, const Dataset& data, const TrainConfig& cfg) {
    if (data.empty()) throw TrainingError("training dataset is empty");
    if (cfg.learning_rate <= 0.0) throw ParamError("learning rate must be positive");
    if (cfg.batch_size == 0) throw ParamError("batch size must be >= 1");
    propagate_shapes(spec);

    TrainResult result;
    result.params = init_params(spec, derive_seed(cfg.seed, 1));

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 1000 + epoch));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            Params acc = zeros_like(result.params);
            double batch_loss = 0.0;
            for (std::size_t s = start; s < stop; ++s) {
                const auto& [x, y] = data[order[s]];
                std::uint64_t drop_seed =
                    derive_seed(derive_seed(cfg.seed, 2000 + epoch), order[s]);
                BackwardResult b = backward(spec, result.params, x, y, true, drop_seed);
                accumulate(acc, b.grads);
                batch_loss += b.loss;
            }
            if (!std::isfinite(batch_loss))
                throw TrainingError("training loss became non-finite at epoch " +
                                    std::to_string(epoch) + " batch " +
                                    std::to_string(batch_index));
            const double n = static_cast<double>(stop - start);
            apply_update(result.params, acc, -cfg.learning_rate / n);
            epoch_loss += batch_loss;
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return result;
}

Tensor predict(const NetworkSpec& spec, const Params& params, const Tensor& input) {
    return forward(spec, params, input);
}

Metrics evaluate(const NetworkSpec& spec, const Params& params, const Dataset& data) {
    Metrics m;
    m.classification = spec.loss == LossKind::cross_entropy;
    if (data.empty()) return m;
    double se = 0.0;
    std::size_t value_count = 0;
    std::size_t correct = 0;
    if (m.classification) {
        const std::size_t n_classes = propagate_shapes(spec).back()[0];
        m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    }
    for (const auto& [x, y] : data) {
        Tensor pred = predict(spec, params, x);
        m.mean_loss += loss_value(pred, y, spec.loss);
        if (m.classification) {
            std::size_t pc = argmax_first(pred);
            std::size_t tc = argmax_first(y);
            m.confusion[pc][tc] += 1;
            if (pc == tc) ++correct;
        } else {
            const double* pp = pred.data();
            const double* pt = y.data();
            for (std::size_t i = 0; i < pred.size(); ++i) {
                double d = pp[i] - pt[i];
                se += d * d;
            }
            value_count += pred.size();
        }
    }
    m.mean_loss /= static_cast<double>(data.size());
    if (m.classification) {
        m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
        const std::size_t n_classes = m.confusion.size();
        m.per_class_accuracy.assign(n_classes, 0.0);
        for (std::size_t c = 0; c < n_classes; ++c) {
            std::size_t col = 0;
            for (std::size_t r = 0; r < n_classes; ++r) col += m.confusion[r][c];
            if (col > 0)
                m.per_class_accuracy[c] =
                    static_cast<double>(m.confusion[c][c]) / static_cast<double>(col);
        }
    } else {
        m.rmse = std::sqrt(se / static_cast<double>(value_count));
    }
    return m;
}

// ---- serialization -------------------------------------------------------------

namespace {

json shape_to_json(const Shape& s) {
    json a = json::array();
    for (std::size_t e : s) a.push_back(e);
    return a;
}

Shape shape_from_json(const json& a) {
    Shape s;
    for (const auto& e : a) s.push_back(e.get<std::size_t>());
    return s;
}

json layer_to_json(const LayerSpec& layer) {
    json j;
    if (const auto* c1 = std::get_if<Conv1DSpec>(&layer)) {
        j["type"] = "conv1d";
        j["filters"] = c1->filters;
        j["width"] = c1->width;
        j["pad"] = c1->pad == Pad::same ? "same" : "valid";
    } else if (const auto* c2 = std::get_if<Conv2DSpec>(&layer)) {
        j["type"] = "conv2d";
        j["filters"] = c2->filters;
        j["height"] = c2->height;
        j["width"] = c2->width;
        j["pad"] = c2->pad == Pad::same ? "same" : "valid";
    } else if (const auto* a = std::get_if<ActSpec>(&layer)) {
        j["type"] = a->kind == Act::sigmoid ? "sigmoid" : a->kind == Act::tanh ? "tanh" : "relu";
    } else if (const auto* p = std::get_if<PoolSpec>(&layer)) {
        j["type"] = p->kind == PoolKind::max ? "maxpool" : "avgpool";
        if (p->window.size() == 1)
            j["window"] = p->window[0];
        else
            j["window"] = p->window;
    } else if (std::get_if<FlattenSpec>(&layer)) {
        j["type"] = "flatten";
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
        j["type"] = "dense";
        j["units"] = d->units;
    } else if (const auto* dr = std::get_if<DropoutSpec>(&layer)) {
        j["type"] = "dropout";
        j["rate"] = dr->rate;
    } else {
        j["type"] = "softmax";
    }
    return j;
}

Pad pad_from_json(const json& j) {
    std::string p = j.value("pad", "valid");
    if (p == "same") return Pad::same;
    if (p == "valid") return Pad::valid;
    throw ConfigError("unknown padding '" + p + "'");
}

LayerSpec layer_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv1d")
        return Conv1DSpec{j.at("filters").get<std::size_t>(), j.at("width").get<std::size_t>(),
                          pad_from_json(j)};
    if (type == "conv2d")
        return Conv2DSpec{j.at("filters").get<std::size_t>(), j.at("height").get<std::size_t>(),
                          j.at("width").get<std::size_t>(), pad_from_json(j)};
    if (type == "relu") return ActSpec{Act::relu};
    if (type == "sigmoid") return ActSpec{Act::sigmoid};
    if (type == "tanh") return ActSpec{Act::tanh};
    if (type == "maxpool" || type == "avgpool") {
        PoolSpec p;
        p.kind = type == "maxpool" ? PoolKind::max : PoolKind::avg;
        const json& w = j.at("window");
        p.window.clear();
        if (w.is_array())
            for (const auto& e : w) p.window.push_back(e.get<std::size_t>());
        else
            p.window.push_back(w.get<std::size_t>());
        return p;
    }
    if (type == "flatten") return FlattenSpec{};
    if (type == "dense") return DenseSpec{j.at("units").get<std::size_t>()};
    if (type == "dropout") return DropoutSpec{j.at("rate").get<double>()};
    if (type == "softmax") return SoftmaxSpec{};
    throw ConfigError("unknown layer type '" + type + "'");
}

json tensor_to_nested(const Tensor& t, std::size_t axis, std::size_t offset, std::size_t stride) {
    json a = json::array();
    const std::size_t extent = t.shape()[axis];
    const std::size_t inner = stride / extent;
    for (std::size_t i = 0; i < extent; ++i) {
        if (axis + 1 == t.rank())
            a.push_back(t.data()[offset + i]);
        else
            a.push_back(tensor_to_nested(t, axis + 1, offset + i * inner, inner));
    }
    return a;
}

json tensor_to_json(const Tensor& t) {
    if (t.empty()) return nullptr;
    return tensor_to_nested(t, 0, 0, t.size());
}

void flatten_nested(const json& j, std::vector<double>& out, Shape& shape, std::size_t depth) {
    if (j.is_array()) {
        if (depth == shape.size())
            shape.push_back(j.size());
        else if (shape[depth] != j.size())
            throw ConfigError("ragged nested array in tensor data");
        for (const auto& e : j) flatten_nested(e, out, shape, depth + 1);
    } else {
        if (depth != shape.size()) throw ConfigError("inconsistent tensor nesting");
        out.push_back(j.get<double>());
    }
}

Tensor tensor_from_json(const json& j) {
    if (j.is_null()) return Tensor();
    std::vector<double> data;
    Shape shape;
    flatten_nested(j, data, shape, 0);
    if (shape.empty()) throw ConfigError("tensor data must be a nested array");
    return Tensor::from_data(shape, std::move(data));
}

} // namespace

std::string network_spec_to_json(const NetworkSpec& spec) {
    json j;
    j["input_shape"] = shape_to_json(spec.input_shape);
    j["loss"] = spec.loss == LossKind::sse ? "sse" : "cross_entropy";
    json layers = json::array();
    for (const auto& l : spec.layers) layers.push_back(layer_to_json(l));
    j["layers"] = layers;
    return j.dump(2);
}

NetworkSpec network_spec_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid network spec JSON: ") + e.what());
    }
    try {
        NetworkSpec spec;
        spec.input_shape = shape_from_json(j.at("input_shape"));
        const std::string loss = j.at("loss").get<std::string>();
        if (loss == "sse")
            spec.loss = LossKind::sse;
        else if (loss == "cross_entropy")
            spec.loss = LossKind::cross_entropy;
        else
            throw ConfigError("unknown loss '" + loss + "'");
        for (const auto& l : j.at("layers")) spec.layers.push_back(layer_from_json(l));
        return spec;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid network spec: ") + e.what());
    }
}

std::string params_to_json(const Params& params) {
    json j;
    j["format_version"] = 1;
    j["seed"] = params.seed;
    json layers = json::array();
    for (const auto& lp : params.layers) {
        if (lp.weights.empty() && lp.bias.empty()) {
            layers.push_back(nullptr);
        } else {
            json e;
            e["weights"] = tensor_to_json(lp.weights);
            e["bias"] = tensor_to_json(lp.bias);
            layers.push_back(e);
        }
    }
    j["layers"] = layers;
    return j.dump();
}

Params params_from_json(const std::string& text, const NetworkSpec& spec) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid params JSON: ") + e.what());
    }
    if (j.value("format_version", 0) != 1)
        throw ConfigError("unsupported params format_version");
    Params params;
    params.seed = j.value("seed", 0ull);
    const json& layers = j.at("layers");
    if (layers.size() != spec.layers.size())
        throw ConfigError("params layer count does not match network spec");
    params.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].is_null()) continue;
        params.layers[i].weights = tensor_from_json(layers[i].at("weights"));
        params.layers[i].bias = tensor_from_json(layers[i].at("bias"));
    }
    // Cross-check shapes against a freshly initialized parameter set.
    Params expect = init_params(spec, 0);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (params.layers[i].weights.shape() != expect.layers[i].weights.shape() ||
            params.layers[i].bias.shape() != expect.layers[i].bias.shape())
            throw ConfigError("params shape mismatch at layer " + std::to_string(i));
    }
    return params;
}

} // namespace gridforge::nn
