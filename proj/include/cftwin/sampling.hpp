#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cftwin/cfgen.hpp"
#include "cftwin/denoiser.hpp"
#include "cftwin/diffusion.hpp"
#include "cftwin/tensor.hpp"

namespace cftwin::sampling {

enum class UpsampleMethod { bicubic, nearest };
std::string to_string(UpsampleMethod m);
UpsampleMethod upsample_method_from_string(const std::string& s);

// Upsamples one square plane. Output index x reads the input at coordinate
// x / factor, so input sample i sits on output sample i·factor (the stride
// subsampling used to build coarse maps). Borders are clamped.
std::vector<double> upsample_plane(std::span<const double> plane, int resolution, int target, UpsampleMethod method);

// All channels of a grid; values are clamped to [0, 1] for normalised grids.
cfgen::CFGrid upsample_condition(const cfgen::CFGrid& lr, int target, UpsampleMethod method = UpsampleMethod::bicubic);

// Grid values as a [1, channels, res, res] tensor and back.
Tensor<float> grid_to_tensor(const cfgen::CFGrid& grid);
cfgen::CFGrid tensor_to_grid(const Tensor<float>& t, int index, const cfgen::CFGrid& like);

// The diffusion state is the normalised map shifted to [-1, 1] (2v - 1), so
// pure noise is centred on the data range instead of at its lower edge.
Tensor<float> to_model_space(const cfgen::CFGrid& grid);
cfgen::CFGrid from_model_space(const Tensor<float>& t, int index, const cfgen::CFGrid& like);

// Noise predictor ε̂(condition, g_t, t) for a batch sharing one step.
using NoisePredictor = std::function<Tensor<float>(const Tensor<float>& condition, const Tensor<float>& g_t, int t)>;

NoisePredictor model_predictor(const denoiser::Denoiser<float>& model);

struct ChainOptions {
    bool clamp = true;            // clamp Ĝ₀ to [-1, 1] (model space)
    bool keep_trajectory = false;
};

struct ChainResult {
    Tensor<float> g0;
    std::vector<Tensor<float>> trajectory;  // G_T, ..., G_1 when requested
};

// Runs the T-step refinement for every batch entry in model space. Entry i draws G_T and
// every ε* from its own stream seeded by seeds[i], so results do not depend on
// how maps are batched together.
ChainResult run_reverse_chain(const NoisePredictor& predictor, const Tensor<float>& condition,
                              const diffusion::NoiseSchedule& sched, std::span<const std::uint64_t> seeds,
                              const ChainOptions& opts = {});

enum class WeightSet { raw, ema };
std::string to_string(WeightSet w);
WeightSet weight_set_from_string(const std::string& s);

struct DiffusionModel {
    denoiser::Denoiser<float> net;
    diffusion::NoiseSchedule schedule;
};

struct SampleRequest {
    cfgen::CFGrid lr_map;  // normalised coarse map carrying the fine map's min/max
    int target_resolution = 0;
    diffusion::NoiseSchedule schedule;
    std::uint64_t seed = 0;
    WeightSet weights = WeightSet::ema;
    UpsampleMethod upsample = UpsampleMethod::bicubic;
};

struct SampleOutput {
    cfgen::CFGrid normalized;  // Ĝ₀ in [0, 1]
    cfgen::CFGrid db;          // de-normalised with the stored min/max
    std::vector<Tensor<float>> trajectory;
};

SampleOutput sample_hr(const DiffusionModel& model, const SampleRequest& request, bool keep_trajectory = false);

}  // namespace cftwin::sampling
