#include "cftwin/cfgen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <boost/crc.hpp>

#include "cftwin/error.hpp"

namespace cftwin::cfgen {

static_assert(std::endian::native == std::endian::little, "container formats assume a little-endian host");

namespace {

constexpr double kSpeedOfLight = 299792458.0;
constexpr double kPi = std::numbers::pi;

void require(bool ok, const std::string& what) {
    if (!ok) throw DomainError(what);
}

// sum_{n=start}^{start+count-1} exp(j n theta); n is integral so theta can be reduced mod 2*pi first
std::complex<double> geometric_sum(int count, int start, double theta) {
    const double r = std::remainder(theta, 2.0 * kPi);
    const double s = std::sin(0.5 * r);
    if (std::abs(s) < 1e-12) return std::polar(static_cast<double>(count), start * r);
    const double ratio = std::sin(0.5 * count * r) / s;
    return std::polar(1.0, (start + 0.5 * (count - 1)) * r) * ratio;
}

}  // namespace

void Scenario::validate() const {
    require(area_side_m > 0.0, "scenario.area_side_m must be positive");
    require(n_ant_v >= 1 && n_ant_h >= 1, "scenario antenna counts must be >= 1");
    require(n_subcarriers_total >= 1 && n_subcarriers_active >= 1, "scenario subcarrier counts must be >= 1");
    require(n_subcarriers_active <= n_subcarriers_total, "scenario.n_subcarriers_active exceeds n_subcarriers_total");
    require(subcarrier_spacing_hz > 0.0, "scenario.subcarrier_spacing_hz must be positive");
    require(carrier_frequency_hz > 0.0, "scenario.carrier_frequency_hz must be positive");
    require(bs_location.x >= 0.0 && bs_location.x <= area_side_m && bs_location.y >= 0.0 && bs_location.y <= area_side_m,
            "scenario.bs_location lies outside the area");
    require(n_paths_mean >= 1.0, "scenario.n_paths_mean must be >= 1");
    require(delay_spread_s > 0.0, "scenario.delay_spread_s must be positive");
    require(shadowing_corr_m > 0.0, "scenario.shadowing_corr_m must be positive");
    require(path_gain.shadowing_std_db >= 0.0 && path_gain.path_power_std_db >= 0.0 && path_gain.angle_spread_deg >= 0.0,
            "scenario.path_gain spreads must be non-negative");
}

void to_json(nlohmann::json& j, const Scenario& s) {
    j = nlohmann::json{
        {"area_side_m", s.area_side_m},
        {"n_ant_v", s.n_ant_v},
        {"n_ant_h", s.n_ant_h},
        {"n_subcarriers_total", s.n_subcarriers_total},
        {"n_subcarriers_active", s.n_subcarriers_active},
        {"subcarrier_spacing_hz", s.subcarrier_spacing_hz},
        {"carrier_frequency_hz", s.carrier_frequency_hz},
        {"bs_location", {s.bs_location.x, s.bs_location.y}},
        {"bs_height_m", s.bs_height_m},
        {"ue_height_m", s.ue_height_m},
        {"ue_velocity_mps", s.ue_velocity_mps},
        {"n_paths_mean", s.n_paths_mean},
        {"path_gain",
         {{"pathloss_exponent", s.path_gain.pathloss_exponent},
          {"shadowing_std_db", s.path_gain.shadowing_std_db},
          {"path_power_std_db", s.path_gain.path_power_std_db},
          {"angle_spread_deg", s.path_gain.angle_spread_deg}}},
        {"delay_spread_s", s.delay_spread_s},
        {"shadowing_corr_m", s.shadowing_corr_m},
        {"power_floor_db", s.power_floor_db},
        {"seed", s.seed},
    };
}

void from_json(const nlohmann::json& j, Scenario& s) {
    s = Scenario{};
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("area_side_m", s.area_side_m);
    get("n_ant_v", s.n_ant_v);
    get("n_ant_h", s.n_ant_h);
    get("n_subcarriers_total", s.n_subcarriers_total);
    get("n_subcarriers_active", s.n_subcarriers_active);
    get("subcarrier_spacing_hz", s.subcarrier_spacing_hz);
    get("carrier_frequency_hz", s.carrier_frequency_hz);
    if (j.contains("bs_location")) {
        const auto& loc = j.at("bs_location");
        s.bs_location = {loc.at(0).get<double>(), loc.at(1).get<double>()};
    }
    get("bs_height_m", s.bs_height_m);
    get("ue_height_m", s.ue_height_m);
    get("ue_velocity_mps", s.ue_velocity_mps);
    get("n_paths_mean", s.n_paths_mean);
    if (j.contains("path_gain")) {
        const auto& pg = j.at("path_gain");
        if (pg.contains("pathloss_exponent")) pg.at("pathloss_exponent").get_to(s.path_gain.pathloss_exponent);
        if (pg.contains("shadowing_std_db")) pg.at("shadowing_std_db").get_to(s.path_gain.shadowing_std_db);
        if (pg.contains("path_power_std_db")) pg.at("path_power_std_db").get_to(s.path_gain.path_power_std_db);
        if (pg.contains("angle_spread_deg")) pg.at("angle_spread_deg").get_to(s.path_gain.angle_spread_deg);
    }
    get("delay_spread_s", s.delay_spread_s);
    get("shadowing_corr_m", s.shadowing_corr_m);
    get("power_floor_db", s.power_floor_db);
    get("seed", s.seed);
}

ShadowingField::ShadowingField(const Scenario& scenario, int n_features) {
    Rng rng = Rng::substream(scenario.seed, {0x5ad0u});
    scale_ = scenario.path_gain.shadowing_std_db * std::sqrt(2.0 / n_features);
    wx_.resize(n_features);
    wy_.resize(n_features);
    phase_.resize(n_features);
    for (int k = 0; k < n_features; ++k) {
        wx_[k] = rng.normal() / scenario.shadowing_corr_m;
        wy_[k] = rng.normal() / scenario.shadowing_corr_m;
        phase_[k] = rng.uniform(0.0, 2.0 * kPi);
    }
}

double ShadowingField::operator()(Vec2 p) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < wx_.size(); ++k) acc += std::cos(wx_[k] * p.x + wy_[k] * p.y + phase_[k]);
    return scale_ * acc;
}

double mean_path_gain_db(const Scenario& scenario, Vec2 location) {
    double dx = location.x - scenario.bs_location.x;
    double dy = location.y - scenario.bs_location.y;
    double dz = scenario.bs_height_m - scenario.ue_height_m;
    double d3 = std::max(1.0, std::sqrt(dx * dx + dy * dy + dz * dz));
    double ref_loss = 20.0 * std::log10(4.0 * kPi * scenario.carrier_frequency_hz / kSpeedOfLight);
    return -(ref_loss + 10.0 * scenario.path_gain.pathloss_exponent * std::log10(d3));
}

PathSet sample_paths(const Scenario& scenario, Vec2 location, Rng& rng) {
    return sample_paths(scenario, ShadowingField(scenario), location, rng);
}

PathSet sample_paths(const Scenario& scenario, const ShadowingField& field, Vec2 location, Rng& rng) {
    if (!(location.x >= 0.0 && location.x <= scenario.area_side_m && location.y >= 0.0 && location.y <= scenario.area_side_m))
        throw DomainError("sample_paths: location outside the scenario area");

    const double dx = location.x - scenario.bs_location.x;
    const double dy = location.y - scenario.bs_location.y;
    const double d2 = std::sqrt(dx * dx + dy * dy);
    const double dz = scenario.bs_height_m - scenario.ue_height_m;
    const double d3 = std::sqrt(d2 * d2 + dz * dz);

    const double large_scale_db = mean_path_gain_db(scenario, location) + field(location);
    const double total_power = std::pow(10.0, large_scale_db / 10.0);

    const int n_paths = scenario.n_paths_mean <= 1.0 ? 1 : 1 + rng.poisson(scenario.n_paths_mean - 1.0);

    const double azimuth0 = std::atan2(dy, dx);
    const double elevation0 = -std::atan2(dz, d2);
    const double spread = scenario.path_gain.angle_spread_deg * kPi / 180.0;

    PathSet paths(n_paths);
    std::vector<double> rel_power(n_paths);
    double power_sum = 0.0;
    for (int l = 0; l < n_paths; ++l) {
        double excess = l == 0 ? 0.0 : rng.exponential(scenario.delay_spread_s);
        double azimuth = l == 0 ? azimuth0 : azimuth0 + spread * rng.normal();
        double elevation = l == 0 ? elevation0 : elevation0 + 0.5 * spread * rng.normal();
        elevation = std::clamp(elevation, -0.5 * kPi, 0.5 * kPi);
        double jitter_db = l == 0 ? 0.0 : scenario.path_gain.path_power_std_db * rng.normal();
        rel_power[l] = std::exp(-excess / scenario.delay_spread_s) * std::pow(10.0, jitter_db / 10.0);
        power_sum += rel_power[l];

        paths[l].delay_s = d3 / kSpeedOfLight + excess;
        paths[l].psi = std::cos(elevation) * std::sin(azimuth);
        paths[l].phi = std::sin(elevation);
        paths[l].gain = std::polar(1.0, rng.uniform(0.0, 2.0 * kPi));
    }
    for (int l = 0; l < n_paths; ++l) paths[l].gain *= std::sqrt(total_power * rel_power[l] / power_sum);
    return paths;
}

ComplexVector steering_vertical(int n, double phi) {
    ComplexVector a(n);
    for (int i = 0; i < n; ++i) a[i] = std::polar(1.0, -kPi * i * phi);
    return a;
}

ComplexVector steering_horizontal(int n, double psi) {
    ComplexVector a(n);
    for (int i = 0; i < n; ++i) a[i] = std::polar(1.0, -kPi * i * psi);
    return a;
}

ComplexVector steering_delay(int n_active, double spacing_hz, double delay_s) {
    ComplexVector a(n_active);
    for (int k = 0; k < n_active; ++k) {
        int index = k - n_active / 2;
        a[k] = std::polar(1.0, -2.0 * kPi * index * spacing_hz * delay_s);
    }
    return a;
}

ComplexVector channel_vector(const Scenario& scenario, const PathSet& paths) {
    if (paths.empty()) throw DomainError("channel_vector: empty path set");
    const int nk = scenario.n_subcarriers_active;
    const int nh = scenario.n_ant_h;
    const int nv = scenario.n_ant_v;
    ComplexVector h(scenario.channel_length(), {0.0, 0.0});
    for (const Path& p : paths) {
        if (p.delay_s < 0.0 || std::abs(p.psi) > 1.0 || std::abs(p.phi) > 1.0)
            throw DomainError("channel_vector: path angle or delay out of range");
        auto at = steering_delay(nk, scenario.subcarrier_spacing_hz, p.delay_s);
        auto ah = steering_horizontal(nh, p.psi);
        auto av = steering_vertical(nv, p.phi);
        std::size_t idx = 0;
        for (int k = 0; k < nk; ++k) {
            for (int m = 0; m < nh; ++m) {
                std::complex<double> th = p.gain * std::conj(at[k]) * std::conj(ah[m]);
                for (int n = 0; n < nv; ++n) h[idx++] += th * std::conj(av[n]);
            }
        }
    }
    return h;
}

double channel_power_db(std::span<const std::complex<double>> h, double floor_db) {
    if (h.empty()) throw DomainError("channel_power_db: empty channel vector");
    double power = 0.0;
    for (const auto& v : h) power += std::norm(v);
    if (!(power > 0.0)) return floor_db;
    return std::max(10.0 * std::log10(power), floor_db);
}

double channel_power_linear(const Scenario& scenario, const PathSet& paths) {
    if (paths.empty()) throw DomainError("channel_power_linear: empty path set");
    const int nk = scenario.n_subcarriers_active;
    const int nh = scenario.n_ant_h;
    const int nv = scenario.n_ant_v;
    const double diag = static_cast<double>(nk) * nh * nv;
    double total = 0.0;
    for (std::size_t l = 0; l < paths.size(); ++l) {
        total += diag * std::norm(paths[l].gain);
        for (std::size_t m = l + 1; m < paths.size(); ++m) {
            const Path& a = paths[l];
            const Path& b = paths[m];
            // <e_l, e_m> with e_l = gain_l * conj(a_t) (x) conj(a_h) (x) conj(a_v)
            std::complex<double> st = geometric_sum(nk, -nk / 2, 2.0 * kPi * scenario.subcarrier_spacing_hz * (a.delay_s - b.delay_s));
            std::complex<double> sh = geometric_sum(nh, 0, kPi * (a.psi - b.psi));
            std::complex<double> sv = geometric_sum(nv, 0, kPi * (a.phi - b.phi));
            std::complex<double> cross = a.gain * std::conj(b.gain) * st * sh * sv;
            total += 2.0 * cross.real();
        }
    }
    return std::max(total, 0.0);
}

std::string to_string(Normalization n) { return n == Normalization::raw_db ? "raw_db" : "minmax01"; }

Normalization normalization_from_string(const std::string& s) {
    if (s == "raw_db") return Normalization::raw_db;
    if (s == "minmax01") return Normalization::minmax01;
    throw DomainError("unknown normalization '" + s + "'");
}

Vec2 grid_location(const Scenario& scenario, int resolution, int i, int j) {
    double cell = scenario.area_side_m / resolution;
    return {i * cell, j * cell};
}

double power_at(const Scenario& scenario, const ShadowingField& field, Vec2 location) {
    auto qx = static_cast<std::uint64_t>(std::llround(location.x * 1000.0));
    auto qy = static_cast<std::uint64_t>(std::llround(location.y * 1000.0));
    Rng rng = Rng::substream(scenario.seed, {qx, qy});
    PathSet paths = sample_paths(scenario, field, location, rng);
    double p = channel_power_linear(scenario, paths);
    if (!(p > 0.0)) return scenario.power_floor_db;
    return std::max(10.0 * std::log10(p), scenario.power_floor_db);
}

CFGrid rasterize_cf(const Scenario& scenario, int resolution) {
    scenario.validate();
    if (resolution < 2) throw DomainError("rasterize_cf: resolution must be >= 2");
    ShadowingField field(scenario);
    CFGrid grid(resolution, scenario.area_side_m / resolution);
    for (int i = 0; i < resolution; ++i)
        for (int j = 0; j < resolution; ++j)
            grid.at(i, j) = power_at(scenario, field, grid_location(scenario, resolution, i, j));
    return grid;
}

CFGrid downsample_cf(const CFGrid& hr, int factor) {
    if (factor < 1 || hr.resolution % factor != 0)
        throw DomainError("downsample_cf: factor " + std::to_string(factor) + " does not divide resolution " +
                          std::to_string(hr.resolution));
    CFGrid lr = hr;
    lr.resolution = hr.resolution / factor;
    lr.cell_size_m = hr.cell_size_m * factor;
    lr.values.assign(static_cast<std::size_t>(lr.resolution) * lr.resolution * hr.channels, 0.0);
    for (int i = 0; i < lr.resolution; ++i)
        for (int j = 0; j < lr.resolution; ++j)
            for (int c = 0; c < hr.channels; ++c) lr.at(i, j, c) = hr.at(i * factor, j * factor, c);
    return lr;
}

CFGrid replicate_channels(const CFGrid& g, int channels) {
    if (channels < 1) throw DomainError("replicate_channels: channels must be >= 1");
    CFGrid out(g.resolution, g.cell_size_m, channels);
    out.normalization = g.normalization;
    out.norm_min = g.norm_min;
    out.norm_max = g.norm_max;
    for (int i = 0; i < g.resolution; ++i)
        for (int j = 0; j < g.resolution; ++j)
            for (int c = 0; c < channels; ++c) out.at(i, j, c) = g.at(i, j, 0);
    return out;
}

CFGrid normalize_with(const CFGrid& grid, double lo, double hi) {
    if (grid.normalization != Normalization::raw_db) throw DomainError("normalize: grid is already normalized");
    if (!(hi > lo)) throw DegenerateInputError("normalize: max must exceed min");
    CFGrid out = grid;
    out.normalization = Normalization::minmax01;
    out.norm_min = lo;
    out.norm_max = hi;
    const double range = hi - lo;
    for (double& v : out.values) v = (v - lo) / range;
    return out;
}

CFGrid minmax_normalize(const CFGrid& grid) {
    if (grid.values.empty()) throw DomainError("minmax_normalize: empty grid");
    auto [lo, hi] = std::minmax_element(grid.values.begin(), grid.values.end());
    if (!(*hi > *lo)) throw DegenerateInputError("minmax_normalize: constant grid");
    return normalize_with(grid, *lo, *hi);
}

CFGrid denormalize(const CFGrid& grid) {
    if (grid.normalization == Normalization::raw_db) return grid;
    CFGrid out = grid;
    out.normalization = Normalization::raw_db;
    const double range = grid.norm_max - grid.norm_min;
    for (double& v : out.values) v = grid.norm_min + v * range;
    out.norm_min = out.norm_max = 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Dataset container

namespace {

void append_grid(std::vector<float>& buf, const CFGrid& g) {
    for (double v : g.values) buf.push_back(static_cast<float>(v));
}

std::vector<float> payload_of(std::span<const CFPair> pairs) {
    std::vector<float> buf;
    if (!pairs.empty()) buf.reserve(pairs.size() * (pairs[0].hr.size() + pairs[0].lr.size()));
    for (const auto& p : pairs) {
        append_grid(buf, p.hr);
        append_grid(buf, p.lr);
    }
    return buf;
}

std::uint32_t crc_of(const std::vector<float>& buf) {
    boost::crc_32_type crc;
    crc.process_bytes(buf.data(), buf.size() * sizeof(float));
    return crc.checksum();
}

}  // namespace

std::uint32_t payload_checksum(std::span<const CFPair> pairs) { return crc_of(payload_of(pairs)); }

void write_dataset(const std::filesystem::path& path, std::span<const CFPair> pairs, const nlohmann::json& scenario_echo,
                   const std::vector<nlohmann::json>& sample_meta) {
    nlohmann::json header;
    header["scenario"] = scenario_echo;
    header["count"] = pairs.size();
    int hr_res = 0, lr_res = 0, channels = 1;
    Normalization norm = Normalization::minmax01;
    if (!pairs.empty()) {
        hr_res = pairs[0].hr.resolution;
        lr_res = pairs[0].lr.resolution;
        channels = pairs[0].hr.channels;
        norm = pairs[0].hr.normalization;
        if (lr_res < 1 || hr_res % lr_res != 0) throw DomainError("write_dataset: LR resolution must divide HR resolution");
    }
    nlohmann::json samples = nlohmann::json::array();
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto& p = pairs[k];
        if (p.hr.resolution != hr_res || p.lr.resolution != lr_res || p.hr.channels != channels || p.lr.channels != channels ||
            p.hr.normalization != norm || p.lr.normalization != norm)
            throw DomainError("write_dataset: pair " + std::to_string(k) + " does not share resolutions/normalization");
        if (p.hr.size() != static_cast<std::size_t>(hr_res) * hr_res * channels ||
            p.lr.size() != static_cast<std::size_t>(lr_res) * lr_res * channels)
            throw DomainError("write_dataset: pair " + std::to_string(k) + " has inconsistent value count");
        nlohmann::json s = k < sample_meta.size() ? sample_meta[k] : nlohmann::json::object();
        s["min"] = p.hr.norm_min;
        s["max"] = p.hr.norm_max;
        s["lr_min"] = p.lr.norm_min;
        s["lr_max"] = p.lr.norm_max;
        samples.push_back(std::move(s));
    }
    header["hr_resolution"] = hr_res;
    header["lr_resolution"] = lr_res;
    header["factor"] = lr_res > 0 ? hr_res / lr_res : 0;
    header["channels"] = channels;
    header["normalization"] = to_string(norm);
    header["hr_cell_size_m"] = pairs.empty() ? 0.0 : pairs[0].hr.cell_size_m;
    header["lr_cell_size_m"] = pairs.empty() ? 0.0 : pairs[0].lr.cell_size_m;
    header["samples"] = std::move(samples);
    const auto payload = payload_of(pairs);
    header["payload_crc32"] = crc_of(payload);

    const std::string text = header.dump();
    const std::uint64_t len = text.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::io, "write_dataset: cannot open " + path.string());
    out.write(kDatasetMagic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) throw FormatError(FormatError::Kind::io, "write_dataset: write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::io, "read_dataset: cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8)) throw FormatError(FormatError::Kind::truncated, "read_dataset: file shorter than magic");
    if (std::memcmp(magic, kDatasetMagic, 8) != 0) throw FormatError(FormatError::Kind::bad_magic, "read_dataset: bad magic");
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)))
        throw FormatError(FormatError::Kind::truncated, "read_dataset: missing header length");
    if (len > (std::uint64_t{1} << 32)) throw FormatError(FormatError::Kind::bad_header, "read_dataset: implausible header length");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len)))
        throw FormatError(FormatError::Kind::truncated, "read_dataset: header truncated");

    Dataset ds;
    std::size_t count = 0;
    int hr_res = 0, lr_res = 0, factor = 0, channels = 1;
    Normalization norm = Normalization::minmax01;
    double hr_cell = 0.0, lr_cell = 0.0;
    try {
        ds.header = nlohmann::json::parse(text);
        count = ds.header.at("count").get<std::size_t>();
        hr_res = ds.header.at("hr_resolution").get<int>();
        lr_res = ds.header.at("lr_resolution").get<int>();
        factor = ds.header.at("factor").get<int>();
        channels = ds.header.at("channels").get<int>();
        norm = normalization_from_string(ds.header.at("normalization").get<std::string>());
        hr_cell = ds.header.value("hr_cell_size_m", 0.0);
        lr_cell = ds.header.value("lr_cell_size_m", 0.0);
        if (ds.header.at("samples").size() != count) throw FormatError(FormatError::Kind::bad_header, "sample table length differs from count");
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, std::string("read_dataset: corrupt header: ") + e.what());
    }
    if (count > 0 && (hr_res < 1 || lr_res < 1 || channels < 1 || hr_res != lr_res * factor))
        throw FormatError(FormatError::Kind::shape_mismatch, "read_dataset: header resolutions inconsistent with factor");

    const std::size_t hr_n = static_cast<std::size_t>(hr_res) * hr_res * channels;
    const std::size_t lr_n = static_cast<std::size_t>(lr_res) * lr_res * channels;
    std::vector<float> payload(count * (hr_n + lr_n));
    if (!in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float))))
        throw FormatError(FormatError::Kind::truncated, "read_dataset: payload truncated");
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError(FormatError::Kind::shape_mismatch, "read_dataset: trailing bytes after payload");
    if (ds.header.contains("payload_crc32") && ds.header["payload_crc32"].get<std::uint32_t>() != crc_of(payload))
        throw FormatError(FormatError::Kind::bad_header, "read_dataset: payload checksum mismatch");

    ds.pairs.resize(count);
    const float* src = payload.data();
    for (std::size_t k = 0; k < count; ++k) {
        const auto& meta = ds.header["samples"][k];
        auto fill = [&](CFGrid& g, int res, double cell, std::size_t n, double lo, double hi) {
            g = CFGrid(res, cell, channels);
            g.normalization = norm;
            g.norm_min = lo;
            g.norm_max = hi;
            for (std::size_t i = 0; i < n; ++i) g.values[i] = src[i];
            src += n;
        };
        fill(ds.pairs[k].hr, hr_res, hr_cell, hr_n, meta.value("min", 0.0), meta.value("max", 0.0));
        fill(ds.pairs[k].lr, lr_res, lr_cell, lr_n, meta.value("lr_min", meta.value("min", 0.0)),
             meta.value("lr_max", meta.value("max", 0.0)));
    }
    return ds;
}

}  // namespace cftwin::cfgen
