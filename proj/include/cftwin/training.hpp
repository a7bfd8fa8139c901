#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <span>
#include <vector>

#include "cftwin/cfgen.hpp"
#include "cftwin/checkpoint.hpp"
#include "cftwin/denoiser.hpp"
#include "cftwin/diffusion.hpp"
#include "cftwin/error.hpp"
#include "cftwin/sampling.hpp"

namespace cftwin::training {

struct ScheduleConfig {
    int steps = 1000;
    double beta_start = 1e-6;
    double beta_end = 1e-2;

    diffusion::NoiseSchedule build() const { return diffusion::linear_schedule(steps, beta_start, beta_end); }
};

void to_json(nlohmann::json& j, const ScheduleConfig& s);
void from_json(const nlohmann::json& j, ScheduleConfig& s);

struct TrainConfig {
    std::int64_t iterations = 0;
    int batch_size = 16;
    double learning_rate = 5e-5;
    double ema_rate = 0.9999;
    std::int64_t ema_start_iter = 5000;
    double dropout_rate = 0.1;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
    bool weighted_loss = false;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Pre-upsampled conditions and fine targets as [n, c, h, w] tensors in model
// space (see sampling::to_model_space).
struct TrainingSet {
    Tensor<float> conditions;
    Tensor<float> targets;
    int size() const { return targets.n(); }
};

TrainingSet make_training_set(std::span<const cfgen::CFPair> pairs,
                              sampling::UpsampleMethod method = sampling::UpsampleMethod::bicubic);

// Gathers batch entries by index.
Tensor<float> gather(const Tensor<float>& src, std::span<const int> indices);

template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(const std::vector<nn::Param<T>*>& params, double beta1, double beta2, double eps);

    void step(const std::vector<nn::Param<T>*>& params, double learning_rate);

    std::int64_t steps = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<std::vector<T>> m, v;
};

// ema' = rate·ema + (1 - rate)·params, elementwise over matching parameter lists.
void ema_update(const std::vector<nn::Param<float>*>& ema, const std::vector<nn::Param<float>*>& params, double rate);

// One optimisation step on a batch; draws t, ε and dropout masks from rng.
// Returns the batch loss before the update.
double train_step(denoiser::Denoiser<float>& model, Adam<float>& opt, const Tensor<float>& conditions,
                  const Tensor<float>& targets, const diffusion::NoiseSchedule& sched, Rng& rng, double learning_rate,
                  const std::vector<double>* step_weights = nullptr);

struct LossRecord {
    std::int64_t iteration = 0;
    double loss = 0.0;
    bool ema_active = false;
};

struct TrainState {
    denoiser::Denoiser<float> model;
    denoiser::Denoiser<float> ema;
    bool ema_active = false;
    Adam<float> adam;
    std::int64_t iteration = 0;
    std::vector<LossRecord> trace;
};

// Raised when a batch loss is not finite; carries a JSON state summary.
class TrainingDivergence : public NumericalError {
public:
    TrainingDivergence(const std::string& msg, nlohmann::json diagnostic)
        : NumericalError(msg), diagnostic_(std::move(diagnostic)) {}
    const nlohmann::json& diagnostic() const { return diagnostic_; }

private:
    nlohmann::json diagnostic_;
};

TrainState init_state(const denoiser::DenoiserSpec& spec, const TrainConfig& cfg);

// Runs iterations state.iteration .. cfg.iterations - 1. Iteration k draws all
// of its randomness from Rng::substream(cfg.seed, {k}), so a resumed run
// reproduces an uninterrupted one exactly.
void train(TrainState& state, const TrainConfig& cfg, const TrainingSet& data, const diffusion::NoiseSchedule& sched,
           const std::function<void(const TrainState&)>& on_checkpoint = {});

checkpoint::Checkpoint to_checkpoint(const TrainState& state, const TrainConfig& cfg, const ScheduleConfig& sched);
TrainState state_from_checkpoint(const checkpoint::Checkpoint& ckpt);

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace);

// Mean of the last `window` losses ending at position end (exclusive).
double moving_average(const std::vector<double>& values, std::size_t end, std::size_t window);

}  // namespace cftwin::training
