#pragma once

#include <span>
#include <vector>

#include "cftwin/tensor.hpp"

namespace cftwin::diffusion {

// Variance schedule with 1-based step accessors; index 0 of alpha_bar is the
// ᾱ_0 = 1 convention, which makes the t = 1 posterior variance exactly zero.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> betas;           // β_1..β_T
    std::vector<double> alphas;          // 1 - β_t
    std::vector<double> alpha_bars;      // ∏_{i<=t} α_i
    std::vector<double> posterior_vars;  // (1 - ᾱ_{t-1}) / (1 - ᾱ_t) · β_t

    double beta(int t) const { return betas.at(t - 1); }
    double alpha(int t) const { return alphas.at(t - 1); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }
    double posterior_var(int t) const { return posterior_vars.at(t - 1); }

    void require_step(int t, const char* where) const;
};

// Builds derived arrays from an explicit β sequence. Products switch to the
// log domain when steps >= 10^4.
NoiseSchedule schedule_from_betas(std::vector<double> betas);
NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end);

// √ᾱ_t·g0 + √(1-ᾱ_t)·eps for a single t shared by every batch entry.
template <typename T>
Tensor<T> q_sample(const Tensor<T>& g0, int t, const Tensor<T>& eps, const NoiseSchedule& sched);

// Per-batch-entry timesteps; ts.size() must equal g0.n().
template <typename T>
Tensor<T> q_sample(const Tensor<T>& g0, std::span<const int> ts, const Tensor<T>& eps, const NoiseSchedule& sched);

template <typename T>
struct Posterior {
    Tensor<T> mean;
    double variance = 0.0;
};

// Mean and variance of q(G_{t-1} | G_t, G_0) in the explicit (g_t, g0) form.
template <typename T>
Posterior<T> posterior_params(const Tensor<T>& g_t, const Tensor<T>& g0, int t, const NoiseSchedule& sched);

// Same posterior mean written through the noise that links g0 to g_t.
template <typename T>
Tensor<T> posterior_mean_from_eps(const Tensor<T>& g_t, const Tensor<T>& eps, int t, const NoiseSchedule& sched);

template <typename T>
Tensor<T> predict_x0(const Tensor<T>& g_t, const Tensor<T>& eps_hat, int t, const NoiseSchedule& sched);

// One refinement step G_t -> G_{t-1}. At t = 1 the noise tensor must be all zeros.
template <typename T>
Tensor<T> reverse_step(const Tensor<T>& g_t, const Tensor<T>& eps_hat, int t, const Tensor<T>& noise,
                       const NoiseSchedule& sched);

// Mean of squared differences over every element of the batch.
template <typename T>
double training_loss(const Tensor<T>& eps_true, const Tensor<T>& eps_hat);

// Per-step weight of the full variational bound, normalised to mean 1 over
// t = 2..T; t = 1 reuses the t = 2 weight because β̃_1 = 0.
std::vector<double> elbo_loss_weights(const NoiseSchedule& sched);

}  // namespace cftwin::diffusion
