#include "cftwin/diffusion.hpp"

#include <cmath>
#include <string>

#include "cftwin/error.hpp"

namespace cftwin::diffusion {

void NoiseSchedule::require_step(int t, const char* where) const {
    if (t < 1 || t > steps)
        throw DomainError(std::string(where) + ": step " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
}

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
    if (betas.empty()) throw DomainError("schedule: at least one step required");
    for (std::size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw DomainError("schedule: betas must lie in (0, 1)");
        if (i > 0 && betas[i] < betas[i - 1]) throw DomainError("schedule: betas must be non-decreasing");
    }
    NoiseSchedule s;
    s.steps = static_cast<int>(betas.size());
    s.betas = std::move(betas);
    s.alphas.resize(s.steps);
    s.alpha_bars.resize(s.steps);
    s.posterior_vars.resize(s.steps);
    const bool log_domain = s.steps >= 10000;
    double prod = 1.0;
    double log_sum = 0.0;
    for (int i = 0; i < s.steps; ++i) {
        s.alphas[i] = 1.0 - s.betas[i];
        if (log_domain) {
            log_sum += std::log1p(-s.betas[i]);
            s.alpha_bars[i] = std::exp(log_sum);
        } else {
            prod *= s.alphas[i];
            s.alpha_bars[i] = prod;
        }
    }
    for (int t = 1; t <= s.steps; ++t)
        s.posterior_vars[t - 1] = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
    return s;
}

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw DomainError("linear_schedule: steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw DomainError("linear_schedule: require 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(steps);
    if (steps == 1) {
        betas[0] = beta_start;
    } else {
        for (int i = 0; i < steps; ++i)
            betas[i] = beta_start + static_cast<double>(i) / (steps - 1) * (beta_end - beta_start);
    }
    return schedule_from_betas(std::move(betas));
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& g0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
    std::vector<int> ts(g0.n(), t);
    return q_sample(g0, std::span<const int>(ts), eps, sched);
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& g0, std::span<const int> ts, const Tensor<T>& eps, const NoiseSchedule& sched) {
    g0.require_same_shape(eps, "q_sample");
    if (ts.size() != static_cast<std::size_t>(g0.n())) throw DomainError("q_sample: one step per batch entry required");
    Tensor<T> out(g0.n(), g0.c(), g0.h(), g0.w());
    const std::size_t per = g0.sample_size();
    for (int i = 0; i < g0.n(); ++i) {
        sched.require_step(ts[i], "q_sample");
        const double ab = sched.alpha_bar(ts[i]);
        const T a = static_cast<T>(std::sqrt(ab));
        const T b = static_cast<T>(std::sqrt(1.0 - ab));
        const T* x = g0.sample(i);
        const T* e = eps.sample(i);
        T* y = out.sample(i);
        for (std::size_t k = 0; k < per; ++k) y[k] = a * x[k] + b * e[k];
    }
    return out;
}

template <typename T>
Posterior<T> posterior_params(const Tensor<T>& g_t, const Tensor<T>& g0, int t, const NoiseSchedule& sched) {
    g_t.require_same_shape(g0, "posterior_params");
    sched.require_step(t, "posterior_params");
    const double a = sched.alpha(t);
    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t - 1);
    const double c_t = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
    const double c_0 = std::sqrt(ab_prev) * (1.0 - a) / (1.0 - ab);
    Posterior<T> post{Tensor<T>(g_t.n(), g_t.c(), g_t.h(), g_t.w()), sched.posterior_var(t)};
    for (std::size_t k = 0; k < g_t.size(); ++k) post.mean[k] = static_cast<T>(c_t * g_t[k] + c_0 * g0[k]);
    return post;
}

template <typename T>
Tensor<T> posterior_mean_from_eps(const Tensor<T>& g_t, const Tensor<T>& eps, int t, const NoiseSchedule& sched) {
    g_t.require_same_shape(eps, "posterior_mean_from_eps");
    sched.require_step(t, "posterior_mean_from_eps");
    const double inv_sqrt_a = 1.0 / std::sqrt(sched.alpha(t));
    const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
    Tensor<T> out(g_t.n(), g_t.c(), g_t.h(), g_t.w());
    for (std::size_t k = 0; k < g_t.size(); ++k) out[k] = static_cast<T>(inv_sqrt_a * (g_t[k] - coef * eps[k]));
    return out;
}

template <typename T>
Tensor<T> predict_x0(const Tensor<T>& g_t, const Tensor<T>& eps_hat, int t, const NoiseSchedule& sched) {
    g_t.require_same_shape(eps_hat, "predict_x0");
    sched.require_step(t, "predict_x0");
    const double ab = sched.alpha_bar(t);
    const double s1 = std::sqrt(1.0 - ab);
    const double inv = 1.0 / std::sqrt(ab);
    Tensor<T> out(g_t.n(), g_t.c(), g_t.h(), g_t.w());
    for (std::size_t k = 0; k < g_t.size(); ++k) out[k] = static_cast<T>((g_t[k] - s1 * eps_hat[k]) * inv);
    return out;
}

template <typename T>
Tensor<T> reverse_step(const Tensor<T>& g_t, const Tensor<T>& eps_hat, int t, const Tensor<T>& noise,
                       const NoiseSchedule& sched) {
    g_t.require_same_shape(eps_hat, "reverse_step");
    g_t.require_same_shape(noise, "reverse_step");
    sched.require_step(t, "reverse_step");
    if (t == 1) {
        for (std::size_t k = 0; k < noise.size(); ++k)
            if (noise[k] != T(0)) throw DomainError("reverse_step: noise must be zero at t = 1");
    }
    const double inv_sqrt_a = 1.0 / std::sqrt(sched.alpha(t));
    const double coef = (1.0 - sched.alpha(t)) / std::sqrt(1.0 - sched.alpha_bar(t));
    const double sigma = std::sqrt(sched.posterior_var(t));
    Tensor<T> out(g_t.n(), g_t.c(), g_t.h(), g_t.w());
    for (std::size_t k = 0; k < g_t.size(); ++k)
        out[k] = static_cast<T>(inv_sqrt_a * (g_t[k] - coef * eps_hat[k]) + sigma * noise[k]);
    return out;
}

template <typename T>
double training_loss(const Tensor<T>& eps_true, const Tensor<T>& eps_hat) {
    eps_true.require_same_shape(eps_hat, "training_loss");
    if (eps_true.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t k = 0; k < eps_true.size(); ++k) {
        const double d = static_cast<double>(eps_true[k]) - static_cast<double>(eps_hat[k]);
        acc += d * d;
    }
    return acc / static_cast<double>(eps_true.size());
}

std::vector<double> elbo_loss_weights(const NoiseSchedule& sched) {
    std::vector<double> w(sched.steps, 1.0);
    if (sched.steps < 2) return w;
    double mean = 0.0;
    for (int t = 2; t <= sched.steps; ++t) {
        const double a = sched.alpha(t);
        const double pv = sched.posterior_var(t);
        w[t - 1] = (1.0 - a) * (1.0 - a) / (2.0 * pv * pv * a * (1.0 - sched.alpha_bar(t)));
        mean += w[t - 1];
    }
    mean /= (sched.steps - 1);
    for (int t = 2; t <= sched.steps; ++t) w[t - 1] /= mean;
    w[0] = w[1];
    return w;
}

#define CFTWIN_INSTANTIATE(T)                                                                                     \
    template Tensor<T> q_sample(const Tensor<T>&, int, const Tensor<T>&, const NoiseSchedule&);                  \
    template Tensor<T> q_sample(const Tensor<T>&, std::span<const int>, const Tensor<T>&, const NoiseSchedule&); \
    template Posterior<T> posterior_params(const Tensor<T>&, const Tensor<T>&, int, const NoiseSchedule&);       \
    template Tensor<T> posterior_mean_from_eps(const Tensor<T>&, const Tensor<T>&, int, const NoiseSchedule&);   \
    template Tensor<T> predict_x0(const Tensor<T>&, const Tensor<T>&, int, const NoiseSchedule&);                \
    template Tensor<T> reverse_step(const Tensor<T>&, const Tensor<T>&, int, const Tensor<T>&,                   \
                                    const NoiseSchedule&);                                                       \
    template double training_loss(const Tensor<T>&, const Tensor<T>&);

CFTWIN_INSTANTIATE(float)
CFTWIN_INSTANTIATE(double)
#undef CFTWIN_INSTANTIATE

}  // namespace cftwin::diffusion
