#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cftwin/cfgen.hpp"
#include "cftwin/compression.hpp"
#include "cftwin/denoiser.hpp"
#include "cftwin/training.hpp"

namespace cftwin::config {

struct DatasetConfig {
    std::int64_t count = 6000;
    int hr_resolution = 128;
    int factor = 4;
    int channels = 1;
    int test_every = 6;  // one pair in test_every goes to the test split (5:1)
    bool random_bs_location = true;
    std::string condition_upsample = "bicubic";
};

// Relative paths resolve against the run directory given by --out.
struct IoConfig {
    std::string train_data = "train.cfds";
    std::string test_data = "test.cfds";
    std::string checkpoint = "model.ckpt";
    std::string resume_from;
    std::string plan = "plan.json";
    std::string student = "student.ckpt";
    std::string distilled = "distilled.ckpt";
    std::string samples = "samples";
};

struct SampleConfig {
    std::string checkpoint;  // empty selects io.checkpoint
    std::string weights = "ema";
    std::int64_t count = 4;
    bool png = true;
    int png_scale = 4;
};

struct PruneConfig {
    double ratio = 0.35;
    std::int64_t weight_unit = 1024;
    std::int64_t calibration_samples = 64;
    int calibration_draws = 4;
    int batch_size = 16;
    std::string weights = "ema";
};

struct EvalConfig {
    std::string checkpoint;  // empty selects io.checkpoint
    std::string weights = "ema";
    std::string method = "model";  // model, oracle, nearest, bicubic
    std::vector<int> factors{4};
    std::int64_t max_samples = 0;  // 0 = all test pairs
    bool baseline = true;          // also score nearest-neighbour upsampling
    std::string ssim = "global";
    double psnr_cap_db = 100.0;
};

struct PlotConfig {
    std::vector<int> indices{0};
    int scale = 4;
};

struct RunConfig {
    std::uint64_t seed = 0;
    cfgen::Scenario scenario;
    DatasetConfig dataset;
    denoiser::DenoiserSpec model;
    training::ScheduleConfig schedule;
    training::TrainConfig train;
    SampleConfig sample;
    PruneConfig prune;
    compression::DistillConfig distill;
    EvalConfig eval;
    PlotConfig plot;
    IoConfig io;
};

// Full tree of defaults; every accepted key appears here. Component seeds are
// not part of the tree: they derive from the top-level seed.
nlohmann::json default_tree();

// Overlays `overlay` onto `base`. Keys absent from `base` and leaves whose
// JSON type differs are ConfigErrors naming the dotted path.
nlohmann::json merge_strict(const nlohmann::json& base, const nlohmann::json& overlay, const std::string& path = "");

// Applies "dotted.key=value"; value is parsed as JSON, else taken as a string.
void apply_override(nlohmann::json& tree, const std::string& assignment);

// Converts and validates; violations become ConfigErrors.
RunConfig from_tree(const nlohmann::json& tree);
nlohmann::json to_tree(const RunConfig& cfg);

// FNV-1a over the canonical (sorted-key, compact) dump.
std::uint64_t config_hash(const nlohmann::json& tree);
std::string hex64(std::uint64_t v);

struct Sources {
    std::optional<std::filesystem::path> file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

struct Loaded {
    nlohmann::json tree;
    RunConfig run;
    std::uint64_t hash = 0;
};

// defaults <- file <- overrides <- seed.
Loaded load(const Sources& src);

}  // namespace cftwin::config
