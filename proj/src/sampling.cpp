#include "cftwin/sampling.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "cftwin/error.hpp"
#include "cftwin/rng.hpp"

namespace cftwin::sampling {

std::string to_string(UpsampleMethod m) { return m == UpsampleMethod::bicubic ? "bicubic" : "nearest"; }

UpsampleMethod upsample_method_from_string(const std::string& s) {
    if (s == "bicubic") return UpsampleMethod::bicubic;
    if (s == "nearest") return UpsampleMethod::nearest;
    throw DomainError("unknown upsampling method '" + s + "'");
}

std::string to_string(WeightSet w) { return w == WeightSet::ema ? "ema" : "raw"; }

WeightSet weight_set_from_string(const std::string& s) {
    if (s == "ema") return WeightSet::ema;
    if (s == "raw") return WeightSet::raw;
    throw DomainError("unknown weight set '" + s + "'");
}

namespace {

// Keys cubic convolution kernel with a = -0.5.
double keys(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::array<int, 4> index;
    std::array<double, 4> weight;
};

std::vector<Taps> bicubic_taps(int resolution, int target) {
    const int f = target / resolution;
    std::vector<Taps> taps(target);
    for (int x = 0; x < target; ++x) {
        const int i0 = x / f;
        const double frac = static_cast<double>(x - i0 * f) / f;
        for (int k = 0; k < 4; ++k) {
            taps[x].index[k] = std::clamp(i0 - 1 + k, 0, resolution - 1);
            taps[x].weight[k] = keys(frac - (k - 1));
        }
    }
    return taps;
}

}  // namespace

std::vector<double> upsample_plane(std::span<const double> plane, int resolution, int target, UpsampleMethod method) {
    if (resolution < 1 || target < resolution || target % resolution != 0)
        throw DomainError("upsample: target " + std::to_string(target) + " is not a multiple of " + std::to_string(resolution));
    if (plane.size() != static_cast<std::size_t>(resolution) * resolution) throw DomainError("upsample: plane size mismatch");
    const int f = target / resolution;
    std::vector<double> out(static_cast<std::size_t>(target) * target);
    if (method == UpsampleMethod::nearest) {
        for (int y = 0; y < target; ++y) {
            const int i = std::min(static_cast<int>(std::lround(static_cast<double>(y) / f)), resolution - 1);
            for (int x = 0; x < target; ++x) {
                const int j = std::min(static_cast<int>(std::lround(static_cast<double>(x) / f)), resolution - 1);
                out[static_cast<std::size_t>(y) * target + x] = plane[static_cast<std::size_t>(i) * resolution + j];
            }
        }
        return out;
    }
    const auto taps = bicubic_taps(resolution, target);
    std::vector<double> rows(static_cast<std::size_t>(resolution) * target);
    for (int i = 0; i < resolution; ++i)
        for (int x = 0; x < target; ++x) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += taps[x].weight[k] * plane[static_cast<std::size_t>(i) * resolution + taps[x].index[k]];
            rows[static_cast<std::size_t>(i) * target + x] = s;
        }
    for (int y = 0; y < target; ++y)
        for (int x = 0; x < target; ++x) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += taps[y].weight[k] * rows[static_cast<std::size_t>(taps[y].index[k]) * target + x];
            out[static_cast<std::size_t>(y) * target + x] = s;
        }
    return out;
}

cfgen::CFGrid upsample_condition(const cfgen::CFGrid& lr, int target, UpsampleMethod method) {
    if (target < lr.resolution || target % lr.resolution != 0)
        throw DomainError("upsample_condition: target " + std::to_string(target) + " is not a multiple of " + std::to_string(lr.resolution));
    cfgen::CFGrid out(target, lr.cell_size_m * lr.resolution / target, lr.channels);
    out.normalization = lr.normalization;
    out.norm_min = lr.norm_min;
    out.norm_max = lr.norm_max;
    std::vector<double> plane(static_cast<std::size_t>(lr.resolution) * lr.resolution);
    for (int c = 0; c < lr.channels; ++c) {
        for (int i = 0; i < lr.resolution; ++i)
            for (int j = 0; j < lr.resolution; ++j) plane[static_cast<std::size_t>(i) * lr.resolution + j] = lr.at(i, j, c);
        const auto up = upsample_plane(plane, lr.resolution, target, method);
        for (int i = 0; i < target; ++i)
            for (int j = 0; j < target; ++j) {
                double v = up[static_cast<std::size_t>(i) * target + j];
                if (lr.normalization == cfgen::Normalization::minmax01) v = std::clamp(v, 0.0, 1.0);
                out.at(i, j, c) = v;
            }
    }
    return out;
}

Tensor<float> grid_to_tensor(const cfgen::CFGrid& grid) {
    Tensor<float> t(1, grid.channels, grid.resolution, grid.resolution);
    for (int c = 0; c < grid.channels; ++c)
        for (int i = 0; i < grid.resolution; ++i)
            for (int j = 0; j < grid.resolution; ++j) t.at(0, c, i, j) = static_cast<float>(grid.at(i, j, c));
    return t;
}

cfgen::CFGrid tensor_to_grid(const Tensor<float>& t, int index, const cfgen::CFGrid& like) {
    if (t.h() != t.w()) throw DomainError("tensor_to_grid: non-square map");
    cfgen::CFGrid g(t.h(), like.cell_size_m * like.resolution / t.h(), t.c());
    g.normalization = like.normalization;
    g.norm_min = like.norm_min;
    g.norm_max = like.norm_max;
    for (int c = 0; c < t.c(); ++c)
        for (int i = 0; i < t.h(); ++i)
            for (int j = 0; j < t.w(); ++j) g.at(i, j, c) = t.at(index, c, i, j);
    return g;
}

Tensor<float> to_model_space(const cfgen::CFGrid& grid) {
    auto t = grid_to_tensor(grid);
    for (auto& v : t.span()) v = 2.0f * v - 1.0f;
    return t;
}

cfgen::CFGrid from_model_space(const Tensor<float>& t, int index, const cfgen::CFGrid& like) {
    auto g = tensor_to_grid(t, index, like);
    for (auto& v : g.values) v = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
    return g;
}

NoisePredictor model_predictor(const denoiser::Denoiser<float>& model) {
    return [&model](const Tensor<float>& condition, const Tensor<float>& g_t, int t) {
        std::vector<int> ts(g_t.n(), t);
        return model.forward(condition, g_t, ts);
    };
}

ChainResult run_reverse_chain(const NoisePredictor& predictor, const Tensor<float>& condition,
                              const diffusion::NoiseSchedule& sched, std::span<const std::uint64_t> seeds,
                              const ChainOptions& opts) {
    const int batch = condition.n();
    if (seeds.size() != static_cast<std::size_t>(batch)) throw DomainError("sampling: one seed per map required");
    std::vector<Rng> rngs;
    rngs.reserve(batch);
    for (auto s : seeds) rngs.emplace_back(s);
    auto draw = [&](Tensor<float>& t) {
        for (int i = 0; i < batch; ++i) {
            float* p = t.sample(i);
            for (std::size_t k = 0; k < t.sample_size(); ++k) p[k] = static_cast<float>(rngs[i].normal());
        }
    };

    ChainResult result;
    Tensor<float> g(condition.n(), condition.c(), condition.h(), condition.w());
    draw(g);
    if (opts.keep_trajectory) result.trajectory.push_back(g);
    Tensor<float> noise(g.n(), g.c(), g.h(), g.w());
    for (int t = sched.steps; t >= 1; --t) {
        Tensor<float> eps_hat = predictor(condition, g, t);
        if (!eps_hat.same_shape(g)) throw DomainError("sampling: predictor returned " + eps_hat.shape_string());
        if (t > 1)
            draw(noise);
        else
            noise.fill(0.0f);
        g = diffusion::reverse_step(g, eps_hat, t, noise, sched);
        if (!g.all_finite()) throw NumericalError("sampling: non-finite state after step " + std::to_string(t));
        if (opts.keep_trajectory && t > 1) result.trajectory.push_back(g);
    }
    if (opts.clamp)
        for (auto& v : g.span()) v = std::clamp(v, -1.0f, 1.0f);
    result.g0 = std::move(g);
    return result;
}

SampleOutput sample_hr(const DiffusionModel& model, const SampleRequest& request, bool keep_trajectory) {
    if (request.schedule.steps != model.schedule.steps || request.schedule.betas != model.schedule.betas)
        throw DomainError("sample_hr: request schedule does not match the model schedule");
    if (request.lr_map.normalization != cfgen::Normalization::minmax01)
        throw DomainError("sample_hr: coarse map must be min-max normalised");
    const int target = request.target_resolution;
    if (target != model.net.spec().resolution)
        throw DomainError("sample_hr: model resolution is " + std::to_string(model.net.spec().resolution) + ", requested " + std::to_string(target));
    const auto cond_grid = upsample_condition(request.lr_map, target, request.upsample);
    const auto cond = to_model_space(cond_grid);
    const std::uint64_t seed = request.seed;
    ChainOptions opts;
    opts.keep_trajectory = keep_trajectory;
    auto chain = run_reverse_chain(model_predictor(model.net), cond, model.schedule, std::span<const std::uint64_t>(&seed, 1), opts);
    SampleOutput out;
    out.normalized = from_model_space(chain.g0, 0, cond_grid);
    out.db = cfgen::denormalize(out.normalized);
    out.trajectory = std::move(chain.trajectory);
    return out;
}

}  // namespace cftwin::sampling
