#include "cftwin/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "cftwin/error.hpp"

namespace cftwin::nn {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;

template <typename T>
void im2col(const T* x, int c_in, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
    const std::size_t p = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < c_in; ++c) {
        const T* plane = x + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* row = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * p;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    T* dst = row + static_cast<std::size_t>(oh) * wo;
                    if (ih < 0 || ih >= h) {
                        std::fill(dst, dst + wo, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(ih) * w;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, int c_in, int h, int w, int k, int stride, int pad, int ho, int wo, T* dx) {
    const std::size_t p = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < c_in; ++c) {
        T* plane = dx + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* row = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * p;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    const T* src = row + static_cast<std::size_t>(oh) * wo;
                    T* dst = plane + static_cast<std::size_t>(ih) * w;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < w) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
Param<T>::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    const std::size_t count = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                              [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    value.assign(count, T(0));
    grad.assign(count, T(0));
}

template <typename T>
void init_fan_avg(Param<T>& p, int fan_in, int fan_out, Rng& rng, double scale) {
    const double a = std::sqrt(3.0 * scale / ((fan_in + fan_out) / 2.0));
    for (auto& v : p.value) v = static_cast<T>(rng.uniform(-a, a));
}

// ---- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int ci, int co, int k, int s, Rng& rng, bool zero_init)
    : c_in(ci), c_out(co), kernel(k), stride(s), pad(k / 2),
      weight(name + ".weight", {co, ci, k, k}), bias(name + ".bias", {co}) {
    if (ci < 1 || co < 1 || k < 1 || s < 1) throw DomainError("Conv2d: invalid geometry");
    if (!zero_init) init_fan_avg(weight, ci * k * k, co * k * k, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
    if (x.c() != c_in) throw DomainError("Conv2d " + weight.name + ": expected " + std::to_string(c_in) + " channels, got " + x.shape_string());
    const int ho = out_side(x.h()), wo = out_side(x.w());
    const int p = ho * wo;
    const int kk = c_in * kernel * kernel;
    Tensor<T> y(x.n(), c_out, ho, wo);
    CMapM<T> wm(weight.value.data(), c_out, kk);
    const bool direct = kernel == 1 && stride == 1;
    std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(kk) * p);
    for (int i = 0; i < x.n(); ++i) {
        const T* src = x.sample(i);
        if (!direct) {
            im2col(src, c_in, x.h(), x.w(), kernel, stride, pad, ho, wo, cols.data());
            src = cols.data();
        }
        MapM<T> ym(y.sample(i), c_out, p);
        ym.noalias() = wm * CMapM<T>(src, kk, p);
        for (int c = 0; c < c_out; ++c) ym.row(c).array() += bias.value[c];
    }
    return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy) {
    const int ho = out_side(x.h()), wo = out_side(x.w());
    if (dy.n() != x.n() || dy.c() != c_out || dy.h() != ho || dy.w() != wo) throw DomainError("Conv2d backward: gradient shape");
    const int p = ho * wo;
    const int kk = c_in * kernel * kernel;
    Tensor<T> dx(x.n(), c_in, x.h(), x.w());
    CMapM<T> wm(weight.value.data(), c_out, kk);
    MapM<T> dw(weight.grad.data(), c_out, kk);
    const bool direct = kernel == 1 && stride == 1;
    std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(kk) * p);
    std::vector<T> dcols(direct ? 0 : static_cast<std::size_t>(kk) * p);
    for (int i = 0; i < x.n(); ++i) {
        CMapM<T> dym(dy.sample(i), c_out, p);
        const T* src = x.sample(i);
        if (!direct) {
            im2col(src, c_in, x.h(), x.w(), kernel, stride, pad, ho, wo, cols.data());
            src = cols.data();
        }
        dw.noalias() += dym * CMapM<T>(src, kk, p).transpose();
        for (int c = 0; c < c_out; ++c) bias.grad[c] += dym.row(c).sum();
        if (direct) {
            MapM<T>(dx.sample(i), kk, p).noalias() = wm.transpose() * dym;
        } else {
            MapM<T>(dcols.data(), kk, p).noalias() = wm.transpose() * dym;
            col2im(dcols.data(), c_in, x.h(), x.w(), kernel, stride, pad, ho, wo, dx.sample(i));
        }
    }
    return dx;
}

// ---- GroupNorm

int group_count(int channels, int max_groups) {
    if (channels < 1 || max_groups < 1) throw DomainError("group_count: channels and max_groups must be positive");
    for (int g = std::min(channels, max_groups); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

template <typename T>
GroupNorm<T>::GroupNorm(std::string name, int ch, int max_groups)
    : channels(ch), groups(group_count(ch, max_groups)), gamma(name + ".gamma", {ch}), beta(name + ".beta", {ch}) {
    std::fill(gamma.value.begin(), gamma.value.end(), T(1));
}

template <typename T>
Tensor<T> GroupNorm<T>::forward(const Tensor<T>& x, GroupNormCache<T>* cache) const {
    if (x.c() != channels) throw DomainError("GroupNorm " + gamma.name + ": channel mismatch " + x.shape_string());
    Tensor<T> y(x.n(), x.c(), x.h(), x.w());
    const int cpg = channels / groups;
    const std::size_t plane = x.plane_size();
    const std::size_t m = cpg * plane;
    if (cache) {
        cache->mean.assign(static_cast<std::size_t>(x.n()) * groups, 0.0);
        cache->rstd.assign(static_cast<std::size_t>(x.n()) * groups, 0.0);
    }
    for (int i = 0; i < x.n(); ++i) {
        for (int g = 0; g < groups; ++g) {
            const T* src = x.sample(i) + g * m;
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += src[k];
            const double mean = s / m;
            double v = 0.0;
            for (std::size_t k = 0; k < m; ++k) {
                const double d = src[k] - mean;
                v += d * d;
            }
            const double rstd = 1.0 / std::sqrt(v / m + eps);
            if (cache) {
                cache->mean[i * groups + g] = mean;
                cache->rstd[i * groups + g] = rstd;
            }
            T* dst = y.sample(i) + g * m;
            for (int c = 0; c < cpg; ++c) {
                const int ch = g * cpg + c;
                const T scale = static_cast<T>(rstd) * gamma.value[ch];
                const T shift = beta.value[ch] - static_cast<T>(mean) * scale;
                for (std::size_t k = c * plane; k < (c + 1) * plane; ++k) dst[k] = src[k] * scale + shift;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> GroupNorm<T>::backward(const Tensor<T>& x, const GroupNormCache<T>& cache, const Tensor<T>& dy) {
    x.require_same_shape(dy, "GroupNorm backward");
    Tensor<T> dx(x.n(), x.c(), x.h(), x.w());
    const int cpg = channels / groups;
    const std::size_t plane = x.plane_size();
    const std::size_t m = cpg * plane;
    for (int i = 0; i < x.n(); ++i) {
        for (int g = 0; g < groups; ++g) {
            const double mean = cache.mean[i * groups + g];
            const double rstd = cache.rstd[i * groups + g];
            const T* xs = x.sample(i) + g * m;
            const T* ds = dy.sample(i) + g * m;
            double sum1 = 0.0, sum2 = 0.0;
            for (int c = 0; c < cpg; ++c) {
                const int ch = g * cpg + c;
                double dg = 0.0, db = 0.0;
                for (std::size_t k = c * plane; k < (c + 1) * plane; ++k) {
                    const double xhat = (xs[k] - mean) * rstd;
                    dg += ds[k] * xhat;
                    db += ds[k];
                    const double dxhat = ds[k] * static_cast<double>(gamma.value[ch]);
                    sum1 += dxhat;
                    sum2 += dxhat * xhat;
                }
                gamma.grad[ch] += static_cast<T>(dg);
                beta.grad[ch] += static_cast<T>(db);
            }
            T* out = dx.sample(i) + g * m;
            for (int c = 0; c < cpg; ++c) {
                const int ch = g * cpg + c;
                for (std::size_t k = c * plane; k < (c + 1) * plane; ++k) {
                    const double xhat = (xs[k] - mean) * rstd;
                    const double dxhat = ds[k] * static_cast<double>(gamma.value[ch]);
                    out[k] = static_cast<T>(rstd * (dxhat - sum1 / m - xhat * sum2 / m));
                }
            }
        }
    }
    return dx;
}

// ---- Linear

template <typename T>
Linear<T>::Linear(std::string name, int i, int o, Rng& rng)
    : in(i), out(o), weight(name + ".weight", {o, i}), bias(name + ".bias", {o}) {
    if (i < 1 || o < 1) throw DomainError("Linear: invalid size");
    init_fan_avg(weight, i, o, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
    if (static_cast<int>(x.sample_size()) != in) throw DomainError("Linear " + weight.name + ": input size mismatch");
    Tensor<T> y(x.n(), out, 1, 1);
    CMapM<T> xm(x.data(), x.n(), in);
    MapM<T> ym(y.data(), x.n(), out);
    ym.noalias() = xm * CMapM<T>(weight.value.data(), out, in).transpose();
    for (int r = 0; r < x.n(); ++r)
        for (int c = 0; c < out; ++c) ym(r, c) += bias.value[c];
    return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& x, const Tensor<T>& dy) {
    CMapM<T> xm(x.data(), x.n(), in);
    CMapM<T> dym(dy.data(), x.n(), out);
    MapM<T>(weight.grad.data(), out, in).noalias() += dym.transpose() * xm;
    for (int r = 0; r < x.n(); ++r)
        for (int c = 0; c < out; ++c) bias.grad[c] += dym(r, c);
    Tensor<T> dx(x.n(), x.c(), x.h(), x.w());
    MapM<T>(dx.data(), x.n(), in).noalias() = dym * CMapM<T>(weight.value.data(), out, in);
    return dx;
}

// ---- elementwise

template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
    Tensor<T> y(x.n(), x.c(), x.h(), x.w());
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] * sigmoid(x[k]);
    return y;
}

template <typename T>
Tensor<T> swish_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.n(), x.c(), x.h(), x.w());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const T s = sigmoid(x[k]);
        dx[k] = dy[k] * (s + x[k] * s * (T(1) - s));
    }
    return dx;
}

template <typename T>
Tensor<T> dropout_mask(const Tensor<T>& like, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw DomainError("dropout: rate must lie in [0, 1)");
    Tensor<T> mask(like.n(), like.c(), like.h(), like.w());
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    for (auto& v : mask.span()) v = rng.uniform() < p ? T(0) : keep;
    return mask;
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& x, const Tensor<T>& mask) {
    if (mask.empty()) return x;
    x.require_same_shape(mask, "apply_mask");
    Tensor<T> y(x.n(), x.c(), x.h(), x.w());
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] * mask[k];
    return y;
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    Tensor<T> y(x.n(), x.c(), 2 * x.h(), 2 * x.w());
    for (int i = 0; i < x.n(); ++i)
        for (int c = 0; c < x.c(); ++c)
            for (int r = 0; r < y.h(); ++r)
                for (int q = 0; q < y.w(); ++q) y.at(i, c, r, q) = x.at(i, c, r / 2, q / 2);
    return y;
}

template <typename T>
Tensor<T> upsample_nearest2_backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
    for (int i = 0; i < dy.n(); ++i)
        for (int c = 0; c < dy.c(); ++c)
            for (int r = 0; r < dy.h(); ++r)
                for (int q = 0; q < dy.w(); ++q) dx.at(i, c, r / 2, q / 2) += dy.at(i, c, r, q);
    return dx;
}

// ---- attention

template <typename T>
SelfAttention<T>::SelfAttention(std::string name, int ch, int kd, Rng& rng)
    : channels(ch), key_dim(kd), wq(name + ".wq", {ch, kd}), wk(name + ".wk", {ch, kd}), wv(name + ".wv", {ch, ch}) {
    if (ch < 1 || kd < 1) throw DomainError("SelfAttention: invalid size");
    init_fan_avg(wq, ch, kd, rng);
    init_fan_avg(wk, ch, kd, rng);
    init_fan_avg(wv, ch, ch, rng);
}

template <typename T>
Tensor<T> SelfAttention<T>::forward(const Tensor<T>& z, AttentionCache<T>* cache) const {
    if (z.c() != channels) throw DomainError("SelfAttention " + wq.name + ": channel mismatch " + z.shape_string());
    const int p = static_cast<int>(z.plane_size());
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(key_dim)));
    CMapM<T> wqm(wq.value.data(), channels, key_dim);
    CMapM<T> wkm(wk.value.data(), channels, key_dim);
    CMapM<T> wvm(wv.value.data(), channels, channels);
    Tensor<T> y(z.n(), z.c(), z.h(), z.w());
    if (cache) {
        cache->q.resize(z.n());
        cache->k.resize(z.n());
        cache->v.resize(z.n());
        cache->s.resize(z.n());
    }
    Mat<T> q, k, v, s;
    for (int i = 0; i < z.n(); ++i) {
        CMapM<T> zt(z.sample(i), channels, p);
        q.noalias() = zt.transpose() * wqm;
        k.noalias() = zt.transpose() * wkm;
        v.noalias() = zt.transpose() * wvm;
        s.noalias() = (q * k.transpose()) * scale;
        for (int r = 0; r < p; ++r) {
            auto row = s.row(r);
            const T mx = row.maxCoeff();
            row = (row.array() - mx).exp();
            row /= row.sum();
        }
        MapM<T>(y.sample(i), channels, p).noalias() = (s * v).transpose();
        if (cache) {
            cache->q[i].assign(q.data(), q.data() + q.size());
            cache->k[i].assign(k.data(), k.data() + k.size());
            cache->v[i].assign(v.data(), v.data() + v.size());
            cache->s[i].assign(s.data(), s.data() + s.size());
        }
    }
    return y;
}

template <typename T>
Tensor<T> SelfAttention<T>::backward(const Tensor<T>& z, const AttentionCache<T>& cache, const Tensor<T>& dy) {
    z.require_same_shape(dy, "SelfAttention backward");
    const int p = static_cast<int>(z.plane_size());
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(key_dim)));
    CMapM<T> wqm(wq.value.data(), channels, key_dim);
    CMapM<T> wkm(wk.value.data(), channels, key_dim);
    CMapM<T> wvm(wv.value.data(), channels, channels);
    MapM<T> dwq(wq.grad.data(), channels, key_dim);
    MapM<T> dwk(wk.grad.data(), channels, key_dim);
    MapM<T> dwv(wv.grad.data(), channels, channels);
    Tensor<T> dz(z.n(), z.c(), z.h(), z.w());
    Mat<T> dv, ds, dq, dk;
    for (int i = 0; i < z.n(); ++i) {
        CMapM<T> zt(z.sample(i), channels, p);
        CMapM<T> q(cache.q[i].data(), p, key_dim);
        CMapM<T> k(cache.k[i].data(), p, key_dim);
        CMapM<T> v(cache.v[i].data(), p, channels);
        CMapM<T> s(cache.s[i].data(), p, p);
        CMapM<T> dot(dy.sample(i), channels, p);  // dOᵀ
        dv.noalias() = s.transpose() * dot.transpose();
        ds.noalias() = dot.transpose() * v.transpose();
        for (int r = 0; r < p; ++r) {
            const T inner = ds.row(r).dot(s.row(r));
            ds.row(r) = (s.row(r).array() * (ds.row(r).array() - inner)) * scale;
        }
        dq.noalias() = ds * k;
        dk.noalias() = ds.transpose() * q;
        dwq.noalias() += zt * dq;
        dwk.noalias() += zt * dk;
        dwv.noalias() += zt * dv;
        MapM<T> dzt(dz.sample(i), channels, p);
        dzt.noalias() = wqm * dq.transpose();
        dzt.noalias() += wkm * dk.transpose();
        dzt.noalias() += wvm * dv.transpose();
    }
    return dz;
}

#define CFTWIN_INSTANTIATE(T)                                                         \
    template struct Param<T>;                                                         \
    template void init_fan_avg(Param<T>&, int, int, Rng&, double);                    \
    template struct Conv2d<T>;                                                        \
    template struct GroupNorm<T>;                                                     \
    template struct Linear<T>;                                                        \
    template struct SelfAttention<T>;                                                 \
    template Tensor<T> swish(const Tensor<T>&);                                       \
    template Tensor<T> swish_backward(const Tensor<T>&, const Tensor<T>&);            \
    template Tensor<T> dropout_mask(const Tensor<T>&, double, Rng&);                  \
    template Tensor<T> apply_mask(const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> upsample_nearest2(const Tensor<T>&);                           \
    template Tensor<T> upsample_nearest2_backward(const Tensor<T>&);

CFTWIN_INSTANTIATE(float)
CFTWIN_INSTANTIATE(double)
#undef CFTWIN_INSTANTIATE

}  // namespace cftwin::nn
