#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cftwin/rng.hpp"

namespace cftwin::cfgen {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Large-scale and cluster statistics of the stochastic channel model.
struct PathGainParams {
    double pathloss_exponent = 3.0;
    double shadowing_std_db = 6.0;
    double path_power_std_db = 3.0;  // log-normal spread of individual path powers
    double angle_spread_deg = 10.0;  // azimuth spread of non-dominant paths
};

struct Scenario {
    double area_side_m = 128.0;
    int n_ant_v = 8;
    int n_ant_h = 8;
    int n_subcarriers_total = 512;
    int n_subcarriers_active = 300;
    double subcarrier_spacing_hz = 15e3;
    double carrier_frequency_hz = 2.4e9;
    Vec2 bs_location{64.0, 64.0};
    double bs_height_m = 25.0;
    double ue_height_m = 1.5;
    double ue_velocity_mps = 0.3;  // carried for completeness; a static power map ignores it
    double n_paths_mean = 6.0;
    PathGainParams path_gain{};
    double delay_spread_s = 300e-9;
    double shadowing_corr_m = 20.0;
    double power_floor_db = -174.0;
    std::uint64_t seed = 1;

    int n_antennas() const { return n_ant_v * n_ant_h; }
    std::size_t channel_length() const {
        return static_cast<std::size_t>(n_subcarriers_active) * n_ant_h * n_ant_v;
    }
    // Throws DomainError when an invariant does not hold.
    void validate() const;
};

void to_json(nlohmann::json& j, const Scenario& s);
void from_json(const nlohmann::json& j, Scenario& s);

struct Path {
    std::complex<double> gain;
    double delay_s = 0.0;
    double psi = 0.0;  // normalized horizontal angle
    double phi = 0.0;  // normalized vertical angle
};
using PathSet = std::vector<Path>;
using ComplexVector = std::vector<std::complex<double>>;

// Spatially correlated log-normal shadowing, realised as a random Fourier
// feature expansion of a Gaussian field with squared-exponential covariance.
class ShadowingField {
public:
    explicit ShadowingField(const Scenario& scenario, int n_features = 128);
    double operator()(Vec2 p) const;

private:
    double scale_ = 0.0;
    std::vector<double> wx_, wy_, phase_;
};

// Free-space reference loss at 1 m plus log-distance slope.
double mean_path_gain_db(const Scenario& scenario, Vec2 location);

PathSet sample_paths(const Scenario& scenario, Vec2 location, Rng& rng);
PathSet sample_paths(const Scenario& scenario, const ShadowingField& field, Vec2 location, Rng& rng);

// Row vector h^H(x) of the spatial-frequency response, ordered subcarrier-major
// then horizontal then vertical antenna index (Kronecker order a_t, a_h, a_v).
ComplexVector channel_vector(const Scenario& scenario, const PathSet& paths);

ComplexVector steering_vertical(int n, double phi);
ComplexVector steering_horizontal(int n, double psi);
ComplexVector steering_delay(int n_active, double spacing_hz, double delay_s);

double channel_power_db(std::span<const std::complex<double>> h, double floor_db = -174.0);

// ||h||^2 evaluated through the closed-form Gram matrix of the path steering
// vectors; equals the squared norm of channel_vector() without materialising it.
double channel_power_linear(const Scenario& scenario, const PathSet& paths);

enum class Normalization { raw_db, minmax01 };
std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

struct CFGrid {
    int resolution = 0;
    int channels = 1;
    double cell_size_m = 0.0;
    Normalization normalization = Normalization::raw_db;
    double norm_min = 0.0;
    double norm_max = 0.0;
    std::vector<double> values;  // resolution x resolution x channels, row-major, channel fastest

    CFGrid() = default;
    CFGrid(int res, double cell, int ch = 1)
        : resolution(res), channels(ch), cell_size_m(cell),
          values(static_cast<std::size_t>(res) * res * ch, 0.0) {}

    double& at(int i, int j, int ch = 0) { return values[(static_cast<std::size_t>(i) * resolution + j) * channels + ch]; }
    double at(int i, int j, int ch = 0) const { return values[(static_cast<std::size_t>(i) * resolution + j) * channels + ch]; }
    std::size_t size() const { return values.size(); }
};

// Location of grid point (i, j) in meters.
Vec2 grid_location(const Scenario& scenario, int resolution, int i, int j);

// Channel power map in dB on a resolution x resolution grid. Each cell draws its
// own substream from (seed, location) so the value at a physical location does
// not depend on the grid it is sampled on.
CFGrid rasterize_cf(const Scenario& scenario, int resolution);

// Power at a single location using the same substream rasterize_cf uses.
double power_at(const Scenario& scenario, const ShadowingField& field, Vec2 location);

CFGrid downsample_cf(const CFGrid& hr, int factor);

// Replicates channel 0 into `channels` channels.
CFGrid replicate_channels(const CFGrid& g, int channels);

CFGrid minmax_normalize(const CFGrid& grid);
CFGrid normalize_with(const CFGrid& grid, double lo, double hi);
CFGrid denormalize(const CFGrid& grid);

struct CFPair {
    CFGrid hr;
    CFGrid lr;
};

struct Dataset {
    nlohmann::json header;
    std::vector<CFPair> pairs;
};

inline constexpr char kDatasetMagic[9] = "CFDS0001";

// Per-pair metadata lands in header["samples"][k] next to the stored min/max.
void write_dataset(const std::filesystem::path& path, std::span<const CFPair> pairs,
                   const nlohmann::json& scenario_echo = nlohmann::json::object(),
                   const std::vector<nlohmann::json>& sample_meta = {});
Dataset read_dataset(const std::filesystem::path& path);

// CRC-32 of the float32 payload that write_dataset would emit for `pairs`.
std::uint32_t payload_checksum(std::span<const CFPair> pairs);

}  // namespace cftwin::cfgen
