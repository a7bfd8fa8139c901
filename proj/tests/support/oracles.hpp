#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

// Mean and variance of p(x) ∝ N(y; a·x, s2_lik) · N(x; m0, s2_prior) by
// trapezoidal quadrature on a grid refined around the bulk of the density.
inline Moments gaussian_posterior_quadrature(double y, double a, double s2_lik, double m0, double s2_prior) {
    auto log_density = [&](double x) {
        const double r = y - a * x;
        const double q = x - m0;
        return -0.5 * r * r / s2_lik - 0.5 * q * q / s2_prior;
    };
    auto integrate = [&](double lo, double hi, int n) {
        const double h = (hi - lo) / (n - 1);
        double peak = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) peak = std::max(peak, log_density(lo + i * h));
        double z = 0.0, m1 = 0.0, m2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = lo + i * h;
            const double w = (i == 0 || i == n - 1 ? 0.5 : 1.0) * std::exp(log_density(x) - peak);
            z += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        Moments m;
        m.mean = m1 / z;
        m.variance = std::max(m2 / z - m.mean * m.mean, 0.0);
        return m;
    };
    // Coarse scan over a range that contains both factors.
    const double s_prior = std::sqrt(s2_prior);
    const double x_lik = y / a;
    const double s_lik = std::sqrt(s2_lik) / std::abs(a);
    const double lo = std::min(m0 - 12 * s_prior, x_lik - 12 * s_lik);
    const double hi = std::max(m0 + 12 * s_prior, x_lik + 12 * s_lik);
    Moments m = integrate(lo, hi, 200001);
    for (int pass = 0; pass < 2; ++pass) {
        const double sd = std::max(std::sqrt(m.variance), 1e-300);
        m = integrate(m.mean - 14 * sd, m.mean + 14 * sd, 40001);
    }
    // Central moments again on the final grid for a cleaner variance.
    const double sd = std::sqrt(m.variance);
    const double c = m.mean;
    const int n = 40001;
    const double a0 = c - 14 * sd, h = 28 * sd / (n - 1);
    double peak = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) peak = std::max(peak, log_density(a0 + i * h));
    double z = 0.0, mu = 0.0;
    for (int i = 0; i < n; ++i) {
        const double w = (i == 0 || i == n - 1 ? 0.5 : 1.0) * std::exp(log_density(a0 + i * h) - peak);
        z += w;
        mu += w * (a0 + i * h - c);
    }
    mu /= z;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double w = (i == 0 || i == n - 1 ? 0.5 : 1.0) * std::exp(log_density(a0 + i * h) - peak);
        const double d = a0 + i * h - c - mu;
        var += w * d * d;
    }
    return {c + mu, var / z};
}

// Products of (1 - β) accumulated through logarithms.
inline std::vector<double> alpha_bar_log_sum(const std::vector<double>& betas) {
    std::vector<double> out(betas.size());
    double s = 0.0;
    for (std::size_t i = 0; i < betas.size(); ++i) {
        s += std::log1p(-betas[i]);
        out[i] = std::exp(s);
    }
    return out;
}

inline double two_pass_mse(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> sq(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) sq[i] = (a[i] - b[i]) * (a[i] - b[i]);
    // pairwise summation
    while (sq.size() > 1) {
        std::vector<double> next((sq.size() + 1) / 2);
        for (std::size_t i = 0; i < next.size(); ++i) next[i] = sq[2 * i] + (2 * i + 1 < sq.size() ? sq[2 * i + 1] : 0.0);
        sq.swap(next);
    }
    return sq.empty() ? 0.0 : sq[0] / static_cast<double>(a.size());
}

// Metric definitions unrolled in extended precision with one-pass moments.
inline double nmse_long(const std::vector<double>& p, const std::vector<double>& r) {
    long double num = 0, den = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        num += (static_cast<long double>(p[i]) - r[i]) * (static_cast<long double>(p[i]) - r[i]);
        den += static_cast<long double>(r[i]) * r[i];
    }
    return static_cast<double>(num / den);
}

inline double ssim_long(const std::vector<double>& p, const std::vector<double>& r, double peak) {
    long double sp = 0, sr = 0, spp = 0, srr = 0, spr = 0;
    const long double n = static_cast<long double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        sp += p[i];
        sr += r[i];
        spp += static_cast<long double>(p[i]) * p[i];
        srr += static_cast<long double>(r[i]) * r[i];
        spr += static_cast<long double>(p[i]) * r[i];
    }
    const long double up = sp / n, ur = sr / n;
    const long double vp = spp / n - up * up, vr = srr / n - ur * ur, cov = spr / n - up * ur;
    const long double c1 = 0.0001L * peak * peak, c2 = 0.0009L * peak * peak;
    return static_cast<double>((2 * up * ur + c1) * (2 * cov + c2) / ((up * up + ur * ur + c1) * (vp + vr + c2)));
}

}  // namespace oracle
