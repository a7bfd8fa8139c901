#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cftwin/cfgen.hpp"
#include "cftwin/checkpoint.hpp"
#include "cftwin/commands.hpp"
#include "cftwin/error.hpp"
#include "cftwin/evalkit.hpp"
#include "cftwin/heatmap.hpp"

using namespace cftwin;
using namespace cftwin::commands;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kMicro = {
    "dataset.count=12",          "dataset.hr_resolution=16",      "dataset.factor=4",
    "scenario.area_side_m=64",   "model.base_channels=8",         "model.channel_multipliers=[1,2]",
    "model.blocks_per_stage=1",  "model.resolution=16",           "model.attention_max_side=8",
    "model.groups_for_norm=4",   "schedule.steps=10",             "schedule.beta_start=1e-3",
    "schedule.beta_end=0.2",     "train.iterations=4",            "train.batch_size=4",
    "train.ema_start_iter=2",    "train.learning_rate=1e-3",      "prune.calibration_samples=4",
    "prune.calibration_draws=2", "prune.ratio=0.3",               "prune.weight_unit=16",
    "distill.iterations=3",      "distill.batch_size=4",          "eval.max_samples=2",
    "sample.count=2",            "plot.indices=[0,1]"};

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("cftwin_cmd_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

Invocation micro(const std::string& command, const fs::path& out, std::vector<std::string> extra = {}) {
    Invocation inv;
    inv.command = command;
    inv.out = out;
    inv.sources.overrides = kMicro;
    inv.sources.overrides.insert(inv.sources.overrides.end(), extra.begin(), extra.end());
    inv.sources.seed = 17;
    return inv;
}

int guarded(const Invocation& inv) {
    std::ostringstream err;
    const int code = run_guarded(inv, err);
    if (code != kOk) UNSCOPED_INFO(err.str());
    return code;
}

}  // namespace

TEST_CASE("gen writes a 5:1 split reproducibly", "[cli]") {
    const auto a = fresh_dir("gen_a");
    const auto b = fresh_dir("gen_b");
    auto inv = micro("gen", a, {"dataset.count=6"});
    const json m = run(inv);
    CHECK(cfgen::read_dataset(a / "train.cfds").pairs.size() == 5);
    CHECK(cfgen::read_dataset(a / "test.cfds").pairs.size() == 1);
    inv.out = b;
    run(inv);
    CHECK(file_crc32(a / "train.cfds") == file_crc32(b / "train.cfds"));
    CHECK(file_crc32(a / "test.cfds") == file_crc32(b / "test.cfds"));

    CHECK(m.at("config_hash").get<std::string>().size() == 16);
    CHECK(m.at("seed") == 17);
    REQUIRE(m.at("outputs").size() == 2);
    CHECK(m.at("outputs")[0].at("crc32") == file_crc32(a / "train.cfds"));
    CHECK(fs::exists(a / "manifest_gen.json"));

    // BS locations are integers inside the area.
    const auto ds = cfgen::read_dataset(a / "train.cfds");
    for (const auto& s : ds.header.at("samples")) {
        const auto loc = s.at("bs_location");
        for (int k = 0; k < 2; ++k) {
            const double v = loc[k].get<double>();
            CHECK(v == std::floor(v));
            CHECK(v >= 0.0);
            CHECK(v <= 64.0);
        }
    }

    inv.sources.seed = 18;
    inv.out = fresh_dir("gen_c");
    run(inv);
    CHECK(file_crc32(a / "train.cfds") != file_crc32(inv.out / "train.cfds"));
}

TEST_CASE("dataset cache directory", "[cli]") {
    const auto cache = fresh_dir("cache");
    ::setenv(kCacheEnv, cache.c_str(), 1);
    const auto a = fresh_dir("cache_a");
    const auto b = fresh_dir("cache_b");
    const json first = run(micro("gen", a));
    const json second = run(micro("gen", b));
    ::unsetenv(kCacheEnv);
    CHECK(first.at("summary").at("cache").at("status") == "stored");
    CHECK(second.at("summary").at("cache").at("status") == "hit");
    CHECK(file_crc32(a / "train.cfds") == file_crc32(b / "train.cfds"));
    CHECK(file_crc32(a / "test.cfds") == file_crc32(b / "test.cfds"));
}

TEST_CASE("exit codes separate config, data-format and runtime failures", "[cli]") {
    const auto d = fresh_dir("codes");
    CHECK(guarded(micro("gen", d, {"train.bogus=1"})) == kConfigError);
    CHECK(guarded(micro("gen", d, {"scenario.area_side_m=-5"})) == kConfigError);
    CHECK(guarded(micro("nonsense", d)) == kConfigError);
    CHECK(guarded(micro("train", d)) == kFormatError);  // no dataset yet
    std::ofstream(d / "train.cfds") << "CFDS0001 garbage";
    CHECK(guarded(micro("train", d)) == kFormatError);
    REQUIRE(guarded(micro("gen", d)) == kOk);
    CHECK(guarded(micro("train", d, {"model.resolution=32"})) == kConfigError);
    REQUIRE(guarded(micro("train", d)) == kOk);
    CHECK(guarded(micro("prune", d, {"prune.ratio=0.99"})) == kRuntimeError);
    CHECK(guarded(micro("train", d, {"io.checkpoint=train.cfds"})) == kConfigError);
    CHECK(guarded(micro("train", d, {"io.resume_from=model.ckpt", "io.checkpoint=more.ckpt", "schedule.beta_end=0.3"})) ==
          kConfigError);
    CHECK(guarded(micro("train", d, {"io.resume_from=model.ckpt", "io.checkpoint=more.ckpt", "train.iterations=6"})) ==
          kOk);
    CHECK(guarded(micro("eval", d, {"eval.factors=[3]"})) == kConfigError);
    CHECK(exit_code_for(NumericalError("x")) == kRuntimeError);
    CHECK(exit_code_for(FormatError(FormatError::Kind::truncated, "x")) == kFormatError);
}

TEST_CASE("micro pipeline produces every artifact", "[cli]") {
    const auto d = fresh_dir("pipeline");
    REQUIRE(guarded(micro("gen", d)) == kOk);
    const auto train_crc = file_crc32(d / "train.cfds");
    REQUIRE(guarded(micro("train", d)) == kOk);
    CHECK(file_crc32(d / "train.cfds") == train_crc);

    std::ifstream csv(d / "loss.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "iteration,loss,ema_active");

    const auto ck = checkpoint::read_checkpoint(d / "model.ckpt");
    CHECK(ck.find("raw/" + ck.tensors.front().name.substr(4)) != nullptr);
    bool has_ema = false;
    for (const auto& t : ck.tensors) has_ema = has_ema || t.name.rfind("ema/", 0) == 0;
    CHECK(has_ema);

    // Rerun reproduces the checkpoint bit for bit.
    const auto ckpt_crc = file_crc32(d / "model.ckpt");
    REQUIRE(guarded(micro("train", d)) == kOk);
    CHECK(file_crc32(d / "model.ckpt") == ckpt_crc);

    REQUIRE(guarded(micro("sample", d)) == kOk);
    CHECK(fs::exists(d / "samples" / "sample_0000.cfds"));
    CHECK(fs::exists(d / "samples" / "sample_0001.png"));
    const auto s0 = cfgen::read_dataset(d / "samples" / "sample_0000.cfds");
    CHECK(s0.pairs.size() == 1);
    CHECK(s0.pairs[0].hr.resolution == 16);

    REQUIRE(guarded(micro("plot", d)) == kOk);
    const auto img = heatmap::read_png(d / "plot_0000.png");
    const heatmap::Layout layout{4};
    CHECK(img.height == 16 * 4);
    CHECK(img.width == 3 * 64 + 3 * layout.gap + layout.bar_width);
    CHECK(guarded(micro("plot", d, {"plot.indices=[99]"})) == kConfigError);

    REQUIRE(guarded(micro("prune", d)) == kOk);
    json plan = json::parse(std::ifstream(d / "plan.json"));
    CHECK(plan.contains("selection"));
    const auto student = checkpoint::read_checkpoint(d / "student.ckpt");
    CHECK(student.meta.at("kind") == "student");

    REQUIRE(guarded(micro("distill", d)) == kOk);
    CHECK(fs::exists(d / "distilled.ckpt"));
    CHECK(fs::exists(d / "distill_loss.csv"));

    REQUIRE(guarded(micro("eval", d, {"eval.checkpoint=distilled.ckpt", "eval.factors=[2,4]"})) == kOk);
    const json rep = json::parse(std::ifstream(d / "eval.json"));
    CHECK(rep.at("reports").size() == 4);
    std::ifstream md(d / "eval.md");
    std::string first;
    std::getline(md, first);
    CHECK(first.rfind("| Task |", 0) == 0);

    for (const auto& name : names()) CHECK(fs::exists(d / ("manifest_" + name + ".json")));
}

TEST_CASE("eval with the oracle flag reports zero error", "[cli]") {
    const auto d = fresh_dir("oracle");
    REQUIRE(guarded(micro("gen", d)) == kOk);
    REQUIRE(guarded(micro("eval", d, {"eval.method=oracle", "eval.baseline=false", "eval.max_samples=0"})) == kOk);
    const json doc = json::parse(std::ifstream(d / "eval.json"));
    REQUIRE(doc.at("reports").size() == 1);
    const auto rep = evalkit::report_from_json(doc.at("reports")[0]);
    CHECK(rep.count() == 2);
    for (const auto& s : rep.samples) {
        CHECK(s.nmse == 0.0);
        CHECK(s.ssim == 1.0);
    }
}
