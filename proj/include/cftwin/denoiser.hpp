#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cftwin/nn.hpp"
#include "cftwin/rng.hpp"
#include "cftwin/tensor.hpp"

namespace cftwin::denoiser {

struct DenoiserSpec {
    int base_channels = 64;
    std::vector<int> channel_multipliers{1, 2, 4, 8, 16};
    int blocks_per_stage = 2;
    int time_embed_dim = 0;  // 0 selects base_channels
    int input_channels = 1;
    double dropout_rate = 0.1;
    // Explicit attention levels; when empty, attention runs at every level
    // whose spatial side is at most attention_max_side.
    std::vector<int> attention_stages;
    int attention_max_side = 32;
    int attention_key_dim = 0;  // 0 selects the block channel count
    int groups_for_norm = 32;
    int resolution = 128;
    int max_channels = 4096;

    void validate() const;
    int time_dim() const { return time_embed_dim > 0 ? time_embed_dim : base_channels; }
    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int level_channels(int level) const { return base_channels * channel_multipliers.at(level); }
    int level_side(int level, int resolution_override = 0) const;
    bool attention_at(int level, int resolution_override = 0) const;
};

void to_json(nlohmann::json& j, const DenoiserSpec& s);
void from_json(const nlohmann::json& j, DenoiserSpec& s);

enum class LayerKind { res_plus, attention, downsample, upsample, head, tail };
std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

struct LayerRecord {
    int id = 0;
    std::string stage;  // head, dn, mid, up, tail
    int level = 0;
    LayerKind kind = LayerKind::res_plus;
    int c_in = 0;            // including concatenated skip channels
    int c_out = 0;
    int concat_channels = 0; // skip channels concatenated onto the input
    int side_in = 0;
    int side_out = 0;
    int push_index = -1;     // skip slot written by this layer's output
    int pop_index = -1;      // skip slot consumed by this layer's input
    int tap_index = -1;      // feature tap taken after this layer (0 Dn, 1 Mid, 2 Up)
    std::int64_t params = 0;
    std::int64_t flops = 0;
    bool prunable = false;
    bool removed = false;
};

using LayerCatalog = std::vector<LayerRecord>;

void to_json(nlohmann::json& j, const LayerRecord& r);

// Analytic layout of the network at the given resolution (0 = spec.resolution).
LayerCatalog build_layout(const DenoiserSpec& spec, int input_resolution = 0);

struct Complexity {
    std::int64_t params = 0;
    std::int64_t flops = 0;
};

// Multiply-accumulates in convolutions, linear maps and attention products
// count as 2 FLOPs; normalisation and activations are not counted.
Complexity count_params_flops(const DenoiserSpec& spec, int input_resolution = 0);

// Γ_t with interleaved (sin, cos) pairs at frequencies 10000^(-2j/c).
std::vector<double> time_embedding(double t, int c_time);
Eigen::MatrixXd time_shift_matrix(double dt, int c_time);

struct AttentionResult {
    Eigen::MatrixXd output;     // d_m x d_n
    Eigen::MatrixXd attention;  // d_m x d_m, row-stochastic
};

// z is d_m positions by d_n features; wq and wk share the key width d_k.
AttentionResult self_attention_forward(const Eigen::MatrixXd& z, const Eigen::MatrixXd& wq, const Eigen::MatrixXd& wk,
                                       const Eigen::MatrixXd& wv);

template <typename T>
struct LayerCache {
    Tensor<T> x;
    nn::GroupNormCache<T> gn1, gn2;
    Tensor<T> a1, mask1, d1, f1, g, h, a2, mask2, d2;
    nn::AttentionCache<T> attn;
};

template <typename T>
struct ResPlusBlock {
    int c_in = 0, c_out = 0;
    double dropout = 0.0;
    nn::GroupNorm<T> gn1;
    nn::Conv2d<T> conv1;
    nn::Linear<T> fc1, fc2;
    nn::GroupNorm<T> gn2;
    nn::Conv2d<T> conv2;
    bool has_shortcut = false;
    nn::Conv2d<T> shortcut;

    ResPlusBlock() = default;
    ResPlusBlock(const std::string& name, int c_in, int c_out, int c_time, int max_groups, double dropout, Rng& rng);

    // temb is [n, c_time, 1, 1]. Dropout is active only when train is set.
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& temb, bool train, Rng* rng, LayerCache<T>* cache) const;
    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& temb, const Tensor<T>& dy);
    std::vector<nn::Param<T>*> params();
};

// Applies the block to x with one shared time vector for every batch entry.
template <typename T>
Tensor<T> res_plus_forward(const ResPlusBlock<T>& block, const Tensor<T>& x, std::span<const double> gamma_t);

template <typename T>
struct AttentionBlock {
    nn::GroupNorm<T> gn;
    nn::SelfAttention<T> attn;

    AttentionBlock() = default;
    AttentionBlock(const std::string& name, int channels, int key_dim, int max_groups, Rng& rng);

    // x + attention(GroupNorm(x)).
    Tensor<T> forward(const Tensor<T>& x, LayerCache<T>* cache) const;
    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dy);
    std::vector<nn::Param<T>*> params();
};

template <typename T>
struct ConvLayer {
    nn::Conv2d<T> conv;
    bool upsample = false;  // nearest x2 before the convolution

    Tensor<T> forward(const Tensor<T>& x, LayerCache<T>* cache) const;
    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dy);
    std::vector<nn::Param<T>*> params();
};

template <typename T>
struct TailLayer {
    nn::GroupNorm<T> gn;
    nn::Conv2d<T> conv;

    Tensor<T> forward(const Tensor<T>& x, LayerCache<T>* cache) const;
    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dy);
    std::vector<nn::Param<T>*> params();
};

template <typename T>
using Layer = std::variant<ResPlusBlock<T>, AttentionBlock<T>, ConvLayer<T>, TailLayer<T>>;

template <typename T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
    Tensor<T> temb;
    std::vector<char> ran;  // layers that executed (not removed or bypassed)
};

template <typename T>
struct ForwardOptions {
    bool train = false;
    Rng* rng = nullptr;                        // required when train and dropout_rate > 0
    ForwardCache<T>* cache = nullptr;          // filled for a later backward pass
    std::vector<Tensor<T>>* taps = nullptr;    // receives the three stage-end features
    const std::vector<char>* bypass = nullptr; // per layer id; nonzero runs the layer as identity
};

inline constexpr int kFeatureTaps = 3;

template <typename T>
class Denoiser {
public:
    Denoiser() = default;
    Denoiser(const DenoiserSpec& spec, Rng& rng);

    const DenoiserSpec& spec() const { return spec_; }
    const LayerCatalog& catalog() const { return catalog_; }
    std::int64_t parameter_count() const;

    // Predicts the noise in g_t given the upsampled condition and one step per batch entry.
    Tensor<T> forward(const Tensor<T>& condition, const Tensor<T>& g_t, std::span<const int> t,
                      const ForwardOptions<T>& opts = {}) const;

    // Accumulates parameter gradients for d(loss)/d(eps_hat) and optional
    // gradients with respect to the feature taps.
    void backward(const ForwardCache<T>& cache, const Tensor<T>& d_eps, const std::vector<Tensor<T>>* d_taps = nullptr);

    void zero_grad();
    // Parameters of layers still present, in a fixed order.
    std::vector<nn::Param<T>*> parameters();
    std::vector<const nn::Param<T>*> parameters() const;

    // Replaces a prunable layer by the identity and frees its parameters.
    void remove_layer(int id);
    std::vector<int> removed_layers() const;

    // Direct access to one layer's weights (catalog id).
    Layer<T>& layer(int id) { return layers_.at(id); }
    const Layer<T>& layer(int id) const { return layers_.at(id); }

    template <typename U>
    Denoiser<U> cast() const;

private:
    DenoiserSpec spec_;
    LayerCatalog catalog_;
    std::vector<Layer<T>> layers_;
    int skip_slots_ = 0;

    template <typename U>
    friend class Denoiser;
};

template <typename T>
template <typename U>
Denoiser<U> Denoiser<T>::cast() const {
    Rng rng(0);
    Denoiser<U> out(spec_, rng);
    for (int id : removed_layers()) out.remove_layer(id);
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
        for (std::size_t k = 0; k < src[i]->value.size(); ++k) dst[i]->value[k] = static_cast<U>(src[i]->value[k]);
    return out;
}

}  // namespace cftwin::denoiser
