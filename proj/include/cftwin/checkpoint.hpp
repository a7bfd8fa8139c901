#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cftwin/denoiser.hpp"

namespace cftwin::checkpoint {

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

// File layout: magic, u64 header length, JSON header (meta plus a tensor index
// and payload CRC-32), then every tensor's float32 data in index order.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const;
    const NamedTensor& get(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[9] = "CFCK0001";

// Writes through a temporary file and renames it, so an interrupted write
// never replaces a previous checkpoint.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Parameters of every present layer as "<prefix>/<param name>".
template <typename T>
std::vector<NamedTensor> export_params(const denoiser::Denoiser<T>& model, const std::string& prefix);

// Loads "<prefix>/..." tensors into the model; names and shapes must match exactly.
template <typename T>
void import_params(denoiser::Denoiser<T>& model, const Checkpoint& ckpt, const std::string& prefix);

// Spec and removed layers stored under meta["model"].
nlohmann::json model_meta(const denoiser::DenoiserSpec& spec, const std::vector<int>& removed);

// Rebuilds the architecture recorded in meta["model"] and loads one weight set.
denoiser::Denoiser<float> load_model(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace cftwin::checkpoint
