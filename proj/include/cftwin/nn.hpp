#pragma once

#include <string>
#include <vector>

#include "cftwin/rng.hpp"
#include "cftwin/tensor.hpp"

namespace cftwin::nn {

template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    AlignedVector<T> value;
    AlignedVector<T> grad;

    Param() = default;
    Param(std::string n, std::vector<int> s);
    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
    void release() {
        value.clear(); value.shrink_to_fit();
        grad.clear(); grad.shrink_to_fit();
    }
};

// Uniform variance scaling over the average of fan-in and fan-out.
template <typename T>
void init_fan_avg(Param<T>& p, int fan_in, int fan_out, Rng& rng, double scale = 1.0);

template <typename T>
struct Conv2d {
    int c_in = 0, c_out = 0, kernel = 3, stride = 1, pad = 1;
    Param<T> weight;  // [c_out, c_in, k, k]
    Param<T> bias;    // [c_out]

    Conv2d() = default;
    Conv2d(std::string name, int c_in, int c_out, int kernel, int stride, Rng& rng, bool zero_init = false);

    int out_side(int side) const { return (side + 2 * pad - kernel) / stride + 1; }
    Tensor<T> forward(const Tensor<T>& x) const;
    // Accumulates parameter gradients and returns the input gradient.
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy);
    std::size_t param_count() const { return weight.size() + bias.size(); }
};

template <typename T>
struct GroupNormCache {
    std::vector<double> mean, rstd;  // [n * groups]
};

template <typename T>
struct GroupNorm {
    int channels = 0, groups = 1;
    double eps = 1e-5;
    Param<T> gamma, beta;

    GroupNorm() = default;
    GroupNorm(std::string name, int channels, int max_groups);

    Tensor<T> forward(const Tensor<T>& x, GroupNormCache<T>* cache) const;
    Tensor<T> backward(const Tensor<T>& x, const GroupNormCache<T>& cache, const Tensor<T>& dy);
    std::size_t param_count() const { return gamma.size() + beta.size(); }
};

// Largest divisor of `channels` not exceeding `max_groups`.
int group_count(int channels, int max_groups);

template <typename T>
struct Linear {
    int in = 0, out = 0;
    Param<T> weight;  // [out, in]
    Param<T> bias;    // [out]

    Linear() = default;
    Linear(std::string name, int in, int out, Rng& rng);

    // x is [n, in, 1, 1].
    Tensor<T> forward(const Tensor<T>& x) const;
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy);
    std::size_t param_count() const { return weight.size() + bias.size(); }
};

template <typename T>
Tensor<T> swish(const Tensor<T>& x);
template <typename T>
Tensor<T> swish_backward(const Tensor<T>& x, const Tensor<T>& dy);

// Inverted dropout. The mask holds 0 or 1/(1-p); an empty mask means identity.
template <typename T>
Tensor<T> dropout_mask(const Tensor<T>& like, double p, Rng& rng);
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& x, const Tensor<T>& mask);

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample_nearest2_backward(const Tensor<T>& dy);

template <typename T>
struct AttentionCache {
    std::vector<std::vector<T>> q, k, v, s;  // per batch entry, row-major
};

// Single-head self-attention over the spatial positions of each sample:
// out = x + (softmax(Q Kᵀ / √d_k) V)ᵀ with Q = Z Wq, K = Z Wk, V = Z Wv and
// Z the position-major view of z (positions x channels).
template <typename T>
struct SelfAttention {
    int channels = 0, key_dim = 0;
    Param<T> wq, wk;  // [channels, key_dim]
    Param<T> wv;      // [channels, channels]

    SelfAttention() = default;
    SelfAttention(std::string name, int channels, int key_dim, Rng& rng);

    // Returns the attention output only (without the residual).
    Tensor<T> forward(const Tensor<T>& z, AttentionCache<T>* cache) const;
    Tensor<T> backward(const Tensor<T>& z, const AttentionCache<T>& cache, const Tensor<T>& dy);
    std::size_t param_count() const { return wq.size() + wk.size() + wv.size(); }
};

}  // namespace cftwin::nn
