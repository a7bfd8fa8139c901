#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "cftwin/cfgen.hpp"
#include "cftwin/sampling.hpp"

namespace cftwin::evalkit {

// Σ(pred − ref)² / Σ ref².
double nmse(std::span<const double> pred, std::span<const double> ref);
double mse(std::span<const double> pred, std::span<const double> ref);

// 20·log10(peak / √MSE), never above cap_db (zero MSE returns cap_db).
double psnr(std::span<const double> pred, std::span<const double> ref, double peak = 255.0, double cap_db = 100.0);

// Single-window SSIM from global means, variances and covariance (population
// moments), C1 = (0.01·peak)², C2 = (0.03·peak)².
double ssim_global(std::span<const double> pred, std::span<const double> ref, double peak = 255.0);

// Mean SSIM over all fully contained windows of a Gaussian-weighted window
// on square side × side maps.
double ssim_gaussian(std::span<const double> pred, std::span<const double> ref, int side, double peak = 255.0,
                     int window = 11, double sigma = 1.5);

enum class SsimVariant { global, gaussian };
std::string to_string(SsimVariant v);
SsimVariant ssim_variant_from_string(const std::string& s);

// Normalised [0, 1] values mapped to [0, 255] (no quantisation).
std::vector<double> to_8bit_scale(const cfgen::CFGrid& normalized);

struct SampleMetrics {
    int index = 0;
    double nmse = 0.0, mse = 0.0, psnr = 0.0, ssim = 0.0;  // on [0, 255] maps
    double nmse_db = 0.0, mse_db = 0.0;                    // on de-normalised dB maps
};

struct Aggregate {
    double mean = 0.0;
    double median = 0.0;
};

Aggregate aggregate(std::vector<double> values);

struct EvalReport {
    std::string task;
    std::string method;
    int factor = 0;
    int lr_resolution = 0;
    int hr_resolution = 0;
    double psnr_cap_db = 100.0;
    int psnr_capped = 0;
    SsimVariant ssim_variant = SsimVariant::global;
    std::vector<SampleMetrics> samples;

    std::size_t count() const { return samples.size(); }
    Aggregate summary(double SampleMetrics::*field) const;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// One table row per report (mean and median columns), in the order given.
std::string to_markdown(const std::vector<EvalReport>& reports);

struct ReconstructionInput {
    int index = 0;
    const cfgen::CFGrid* lr = nullptr;         // normalised coarse map at the evaluated factor
    const cfgen::CFGrid* condition = nullptr;  // upsampled to the model resolution
    const cfgen::CFGrid* truth = nullptr;      // only the oracle may read it
    std::uint64_t seed = 0;
};

// Returns the normalised fine map.
using Reconstructor = std::function<cfgen::CFGrid(const ReconstructionInput&)>;

Reconstructor oracle_reconstructor();
Reconstructor interpolation_reconstructor(sampling::UpsampleMethod method);
Reconstructor diffusion_reconstructor(const sampling::DiffusionModel& model);

struct EvalOptions {
    int factor = 4;
    std::uint64_t seed = 0;
    double psnr_cap_db = 100.0;
    SsimVariant ssim_variant = SsimVariant::global;
    sampling::UpsampleMethod upsample = sampling::UpsampleMethod::bicubic;
    std::string method = "model";
    std::size_t max_samples = 0;  // 0 = all
};

// Re-downsamples each normalised fine map at opts.factor, upsamples the coarse
// map back to the fine resolution as the condition, reconstructs and scores.
// Sample k uses seed Rng::derive(opts.seed, {k}).
EvalReport evaluate(std::span<const cfgen::CFPair> pairs, const Reconstructor& reconstruct, const EvalOptions& opts);

std::string task_label(int factor, int lr_resolution, int hr_resolution);

}  // namespace cftwin::evalkit
