#include "cftwin/config.hpp"

#include <cstdio>
#include <fstream>

#include "cftwin/error.hpp"
#include "cftwin/evalkit.hpp"
#include "cftwin/sampling.hpp"

namespace cftwin::config {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DatasetConfig, count, hr_resolution, factor, channels, test_every,
                                   random_bs_location, condition_upsample)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(IoConfig, train_data, test_data, checkpoint, resume_from, plan, student, distilled,
                                   samples)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SampleConfig, checkpoint, weights, count, png, png_scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PruneConfig, ratio, weight_unit, calibration_samples, calibration_draws,
                                   batch_size, weights)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalConfig, checkpoint, weights, method, factors, max_samples, baseline, ssim,
                                   psnr_cap_db)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PlotConfig, indices, scale)

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const char* type_label(const json& j) {
    if (j.is_boolean()) return "boolean";
    if (j.is_number()) return "number";
    if (j.is_string()) return "string";
    if (j.is_array()) return "array";
    if (j.is_object()) return "object";
    return "null";
}

void check_leaf(const json& base, const json& value, const std::string& path) {
    bool ok = false;
    if (base.is_number_float()) ok = value.is_number();
    else if (base.is_number_unsigned()) ok = value.is_number_unsigned();
    else if (base.is_number_integer()) ok = value.is_number_integer();
    else ok = std::string(type_label(base)) == type_label(value);
    if (!ok) {
        std::string expected = type_label(base);
        if (base.is_number_unsigned()) expected = "non-negative integer";
        else if (base.is_number_integer()) expected = "integer";
        throw ConfigError("config key '" + path + "': expected " + expected + ", got " + value.dump());
    }
}

template <typename F>
void section(const std::string& name, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const DomainError& e) {
        throw ConfigError("config section '" + name + "': " + e.what());
    } catch (const json::exception& e) {
        throw ConfigError("config section '" + name + "': " + e.what());
    }
}

void require(bool ok, const std::string& what) {
    if (!ok) throw DomainError(what);
}

}  // namespace

json to_tree(const RunConfig& c) {
    json t;
    t["seed"] = c.seed;
    t["scenario"] = c.scenario;
    t["scenario"].erase("seed");
    t["dataset"] = c.dataset;
    t["model"] = c.model;
    t["model"].erase("dropout_rate");
    t["schedule"] = c.schedule;
    t["train"] = c.train;
    t["train"].erase("seed");
    t["sample"] = c.sample;
    t["prune"] = c.prune;
    t["distill"] = c.distill;
    t["distill"].erase("seed");
    t["eval"] = c.eval;
    t["plot"] = c.plot;
    t["io"] = c.io;
    return t;
}

json default_tree() { return to_tree(RunConfig{}); }

json merge_strict(const json& base, const json& overlay, const std::string& path) {
    if (!base.is_object()) {
        check_leaf(base, overlay, path);
        return overlay;
    }
    if (!overlay.is_object())
        throw ConfigError("config key '" + (path.empty() ? std::string("<root>") : path) + "': expected object, got " +
                          overlay.dump());
    json out = base;
    for (const auto& [key, value] : overlay.items()) {
        const std::string p = join(path, key);
        if (!base.contains(key)) throw ConfigError("unknown config key '" + p + "'");
        out[key] = merge_strict(base.at(key), value, p);
    }
    return out;
}

void apply_override(json& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected dotted.key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json patch = value;
    std::vector<std::string> parts;
    for (std::size_t start = 0;;) {
        const auto dot = key.find('.', start);
        parts.push_back(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (it->empty()) throw ConfigError("override '" + assignment + "': empty key segment");
        patch = json{{*it, patch}};
    }
    tree = merge_strict(tree, patch);
}

RunConfig from_tree(const json& tree) {
    const json full = merge_strict(default_tree(), tree);
    RunConfig c;
    section("seed", [&] { full.at("seed").get_to(c.seed); });
    section("scenario", [&] {
        c.scenario = full.at("scenario").get<cfgen::Scenario>();
        c.scenario.validate();
    });
    section("dataset", [&] {
        full.at("dataset").get_to(c.dataset);
        const auto& d = c.dataset;
        require(d.count >= 1, "count must be >= 1");
        require(d.hr_resolution >= 2, "hr_resolution must be >= 2");
        require(d.factor >= 1 && d.hr_resolution % d.factor == 0, "factor must divide hr_resolution");
        require(d.channels >= 1, "channels must be >= 1");
        require(d.test_every >= 2, "test_every must be >= 2");
        sampling::upsample_method_from_string(d.condition_upsample);
    });
    section("model", [&] {
        c.model = full.at("model").get<denoiser::DenoiserSpec>();
        c.model.validate();
    });
    section("schedule", [&] {
        c.schedule = full.at("schedule").get<training::ScheduleConfig>();
        c.schedule.build();
    });
    section("train", [&] {
        c.train = full.at("train").get<training::TrainConfig>();
        c.train.validate();
        c.model.dropout_rate = c.train.dropout_rate;
    });
    section("sample", [&] {
        full.at("sample").get_to(c.sample);
        sampling::weight_set_from_string(c.sample.weights);
        require(c.sample.count >= 0, "count must be >= 0");
        require(c.sample.png_scale >= 1, "png_scale must be >= 1");
    });
    section("prune", [&] {
        full.at("prune").get_to(c.prune);
        const auto& p = c.prune;
        require(p.ratio > 0.0 && p.ratio < 1.0, "ratio must lie in (0, 1)");
        require(p.weight_unit >= 1, "weight_unit must be >= 1");
        require(p.calibration_samples >= 1, "calibration_samples must be >= 1");
        require(p.calibration_draws >= 1, "calibration_draws must be >= 1");
        require(p.batch_size >= 1, "batch_size must be >= 1");
        sampling::weight_set_from_string(p.weights);
    });
    section("distill", [&] {
        c.distill = full.at("distill").get<compression::DistillConfig>();
        c.distill.validate();
    });
    section("eval", [&] {
        full.at("eval").get_to(c.eval);
        const auto& e = c.eval;
        sampling::weight_set_from_string(e.weights);
        require(e.method == "model" || e.method == "oracle" || e.method == "nearest" || e.method == "bicubic",
                "method must be one of model, oracle, nearest, bicubic");
        require(!e.factors.empty(), "factors must not be empty");
        for (int f : e.factors) require(f >= 1, "factors must be >= 1");
        require(e.max_samples >= 0, "max_samples must be >= 0");
        require(e.psnr_cap_db > 0.0, "psnr_cap_db must be positive");
        evalkit::ssim_variant_from_string(e.ssim);
    });
    section("plot", [&] {
        full.at("plot").get_to(c.plot);
        require(c.plot.scale >= 1, "scale must be >= 1");
        for (int i : c.plot.indices) require(i >= 0, "indices must be >= 0");
    });
    section("io", [&] { full.at("io").get_to(c.io); });
    return c;
}

std::uint64_t config_hash(const json& tree) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : tree.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

Loaded load(const Sources& src) {
    json tree = default_tree();
    if (src.file) {
        std::ifstream in(*src.file);
        if (!in) throw ConfigError("cannot open config file " + src.file->string());
        json file;
        try {
            file = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config file " + src.file->string() + ": " + e.what());
        }
        tree = merge_strict(tree, file);
    }
    for (const auto& s : src.overrides) apply_override(tree, s);
    if (src.seed) tree["seed"] = *src.seed;
    Loaded out;
    out.run = from_tree(tree);
    out.tree = tree;
    out.hash = config_hash(tree);
    return out;
}

}  // namespace cftwin::config
