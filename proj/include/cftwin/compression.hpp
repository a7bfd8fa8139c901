#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <vector>

#include "cftwin/denoiser.hpp"
#include "cftwin/diffusion.hpp"
#include "cftwin/training.hpp"

namespace cftwin::compression {

// Layers whose removal keeps every tensor shape: Res+ blocks whose main input
// width equals c_out (a concatenated skip is dropped with the block) and all
// attention blocks.
std::vector<int> prunable_layers(const denoiser::LayerCatalog& catalog);

// Conditions and clean targets used to score layers; each sample is
// corrupted at `draws` random steps.
struct Calibration {
    Tensor<float> conditions;
    Tensor<float> targets;
    int draws = 4;
    std::uint64_t seed = 0;
    int batch_size = 64;  // forward-pass chunk size
};

// Mean over calibration draws of ‖ε_teacher − ε_without_layer‖² (squared L2
// norm of the per-map difference). Deterministic given the calibration seed.
double layer_importance(const denoiser::Denoiser<float>& teacher, int layer_id, const Calibration& calib,
                        const diffusion::NoiseSchedule& sched);

// Same estimate for several layers at once, sharing the teacher's outputs.
std::vector<double> layer_importances(const denoiser::Denoiser<float>& teacher, const std::vector<int>& layer_ids,
                                      const Calibration& calib, const diffusion::NoiseSchedule& sched);

struct KnapsackResult {
    std::vector<int> selection;  // item indices, ascending
    double objective = 0.0;      // sum of selected values
    std::int64_t selected_weight = 0;
};

// Minimises Σ values over subsets with Σ weights ≥ budget by solving the
// complementary keep-problem with capacity Σ weights − budget. Weights are
// counted in units of `unit` (rounded up; the capacity is rounded down, so the
// budget always holds in raw units). Ties: fewer selected items, then the
// lexicographically smallest index list.
KnapsackResult solve_knapsack(const std::vector<double>& values, const std::vector<std::int64_t>& weights,
                              std::int64_t budget, std::int64_t unit = 1);

struct Candidate {
    int layer_id = 0;
    double value = 0.0;
    std::int64_t weight = 0;
};

struct PruningPlan {
    std::vector<Candidate> candidates;
    std::int64_t total_params = 0;
    double ratio = 0.0;
    std::int64_t budget_params = 0;
    std::int64_t weight_unit = 1;
    std::vector<int> selection;  // layer ids
    double objective_value = 0.0;
    std::int64_t selected_params = 0;
};

void to_json(nlohmann::json& j, const PruningPlan& p);
void from_json(const nlohmann::json& j, PruningPlan& p);

struct PlanOptions {
    double ratio = 0.35;
    std::int64_t weight_unit = 1024;
};

PruningPlan plan_pruning(const denoiser::Denoiser<float>& teacher, const Calibration& calib,
                         const diffusion::NoiseSchedule& sched, const PlanOptions& opts);

// Copies the teacher and removes the selected layers.
denoiser::Denoiser<float> apply_pruning(const denoiser::Denoiser<float>& teacher, const PruningPlan& plan);

struct KdLosses {
    double task = 0.0;
    double okd = 0.0;
    double fkd = 0.0;
    double total(double lambda_o, double lambda_f) const { return task + lambda_o * okd + lambda_f * fkd; }
};

// Per-element mean squared errors on one shared (condition, g_t, t, ε) draw;
// fkd sums the three stage-end feature terms.
KdLosses kd_losses(const denoiser::Denoiser<float>& teacher, const denoiser::Denoiser<float>& student,
                   const Tensor<float>& conditions, const Tensor<float>& targets, const diffusion::NoiseSchedule& sched,
                   Rng& rng);

struct DistillConfig {
    double lambda_o = 1.0;
    double lambda_f = 1.0;
    std::int64_t iterations = 0;
    double learning_rate = 5e-5;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

void to_json(nlohmann::json& j, const DistillConfig& c);
void from_json(const nlohmann::json& j, DistillConfig& c);

struct DistillRecord {
    std::int64_t iteration = 0;
    KdLosses losses;
    double total = 0.0;
};

struct DistillResult {
    denoiser::Denoiser<float> student;
    std::vector<DistillRecord> trace;
};

// Optimises the student on L_task + λ_O·L_okd + λ_F·L_fkd; the teacher is read-only.
DistillResult distill_finetune(const denoiser::Denoiser<float>& teacher, denoiser::Denoiser<float> student,
                               const DistillConfig& cfg, const training::TrainingSet& data,
                               const diffusion::NoiseSchedule& sched);

struct AdditivityEntry {
    int layer_a = 0, layer_b = 0;
    double joint = 0.0;
    double sum_single = 0.0;
    double ratio = 0.0;  // joint / sum_single
};

// Joint versus summed single-layer distortion for every pair of candidates.
std::vector<AdditivityEntry> additivity_table(const denoiser::Denoiser<float>& teacher, const std::vector<int>& layer_ids,
                                              const Calibration& calib, const diffusion::NoiseSchedule& sched);

}  // namespace cftwin::compression
