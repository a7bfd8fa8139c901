#pragma once

// Loop-level reference implementations of the network building blocks.

#include <cmath>
#include <vector>

namespace oracle {

struct Image {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;
    Image() = default;
    Image(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    double& at(int ch, int i, int j) { return v[(static_cast<std::size_t>(ch) * h + i) * w + j]; }
    double at(int ch, int i, int j) const { return v[(static_cast<std::size_t>(ch) * h + i) * w + j]; }
};

template <typename W>
Image conv(const Image& x, const W& weight, const W& bias, int c_out, int k, int stride) {
    const int pad = k / 2;
    const int ho = (x.h + 2 * pad - k) / stride + 1, wo = (x.w + 2 * pad - k) / stride + 1;
    Image y(c_out, ho, wo);
    for (int o = 0; o < c_out; ++o)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                double s = bias[o];
                for (int c = 0; c < x.c; ++c)
                    for (int a = 0; a < k; ++a)
                        for (int b = 0; b < k; ++b) {
                            const int r = i * stride - pad + a, q = j * stride - pad + b;
                            if (r < 0 || r >= x.h || q < 0 || q >= x.w) continue;
                            s += weight[((static_cast<std::size_t>(o) * x.c + c) * k + a) * k + b] * x.at(c, r, q);
                        }
                y.at(o, i, j) = s;
            }
    return y;
}

template <typename W>
Image group_norm(const Image& x, int groups, const W& gamma, const W& beta, double eps) {
    Image y(x.c, x.h, x.w);
    const int cpg = x.c / groups;
    for (int g = 0; g < groups; ++g) {
        double mean = 0.0;
        int count = 0;
        for (int c = g * cpg; c < (g + 1) * cpg; ++c)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j, ++count) mean += x.at(c, i, j);
        mean /= count;
        double var = 0.0;
        for (int c = g * cpg; c < (g + 1) * cpg; ++c)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) var += (x.at(c, i, j) - mean) * (x.at(c, i, j) - mean);
        var /= count;
        for (int c = g * cpg; c < (g + 1) * cpg; ++c)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j)
                    y.at(c, i, j) = (x.at(c, i, j) - mean) / std::sqrt(var + eps) * gamma[c] + beta[c];
    }
    return y;
}

inline double swish(double x) { return x / (1.0 + std::exp(-x)); }

inline Image swish(const Image& x) {
    Image y = x;
    for (auto& v : y.v) v = swish(v);
    return y;
}

template <typename W>
std::vector<double> linear(const std::vector<double>& x, const W& weight, const W& bias, int out) {
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
        double s = bias[o];
        for (std::size_t i = 0; i < x.size(); ++i) s += weight[o * x.size() + i] * x[i];
        y[o] = s;
    }
    return y;
}

// Attention over a positions-by-features matrix stored row-major, element by element.
template <typename W>
std::vector<double> attention(const std::vector<double>& z, int dm, int dn, const W& wq, const W& wk, const W& wv, int dk,
                              std::vector<double>* attn_out = nullptr) {
    std::vector<double> q(dm * dk, 0.0), k(dm * dk, 0.0), v(dm * dn, 0.0);
    for (int i = 0; i < dm; ++i) {
        for (int a = 0; a < dk; ++a)
            for (int f = 0; f < dn; ++f) {
                q[i * dk + a] += z[i * dn + f] * wq[f * dk + a];
                k[i * dk + a] += z[i * dn + f] * wk[f * dk + a];
            }
        for (int b = 0; b < dn; ++b)
            for (int f = 0; f < dn; ++f) v[i * dn + b] += z[i * dn + f] * wv[f * dn + b];
    }
    std::vector<double> s(dm * dm);
    for (int i = 0; i < dm; ++i) {
        double denom = 0.0;
        for (int j = 0; j < dm; ++j) {
            double dot = 0.0;
            for (int a = 0; a < dk; ++a) dot += q[i * dk + a] * k[j * dk + a];
            s[i * dm + j] = std::exp(dot / std::sqrt(static_cast<double>(dk)));
            denom += s[i * dm + j];
        }
        for (int j = 0; j < dm; ++j) s[i * dm + j] /= denom;
    }
    std::vector<double> out(dm * dn, 0.0);
    for (int i = 0; i < dm; ++i)
        for (int b = 0; b < dn; ++b)
            for (int j = 0; j < dm; ++j) out[i * dn + b] += s[i * dm + j] * v[j * dn + b];
    if (attn_out) *attn_out = s;
    return out;
}

}  // namespace oracle
