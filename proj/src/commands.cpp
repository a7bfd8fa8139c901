#include "cftwin/commands.hpp"

#include <algorithm>
#include <boost/crc.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>

#include "cftwin/cfgen.hpp"
#include "cftwin/checkpoint.hpp"
#include "cftwin/compression.hpp"
#include "cftwin/error.hpp"
#include "cftwin/evalkit.hpp"
#include "cftwin/heatmap.hpp"
#include "cftwin/sampling.hpp"
#include "cftwin/training.hpp"

namespace cftwin::commands {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Substream keys under the top-level seed.
enum StreamKey : std::uint64_t { kGenPair = 1, kGenBs, kGenSplit, kTrain, kSample, kPrune, kDistill, kEval };

constexpr int kMovingWindow = 100;

struct Context {
    const config::Loaded& cfg;
    fs::path out;
    json inputs = json::array();
    json outputs = json::array();
    json summary = json::object();

    const config::RunConfig& run() const { return cfg.run; }

    fs::path resolve(const std::string& p) const {
        const fs::path path(p);
        return path.is_absolute() ? path : out / path;
    }

    static json describe(const fs::path& p) {
        return {{"path", p.string()}, {"bytes", fs::file_size(p)}, {"crc32", file_crc32(p)}};
    }

    void input(const fs::path& p) {
        if (!fs::exists(p)) throw FormatError(FormatError::Kind::io, "missing input file " + p.string());
        inputs.push_back(describe(p));
    }

    // Checks that a path about to be written is not one of the inputs.
    fs::path claim(const fs::path& p) const {
        std::error_code ec;
        for (const auto& in : inputs) {
            const fs::path q(in.at("path").get<std::string>());
            if (q == p || fs::equivalent(q, p, ec))
                throw ConfigError("output " + p.string() + " would overwrite an input");
        }
        return p;
    }

    void output(const fs::path& p) { outputs.push_back(describe(p)); }
};

std::string numbered(const std::string& stem, std::int64_t k, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%04lld", static_cast<long long>(k));
    return stem + buf + ext;
}

void write_text(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw FormatError(FormatError::Kind::io, "cannot open " + tmp.string());
        f << text;
        if (!f) throw FormatError(FormatError::Kind::io, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

cfgen::Dataset load_dataset(Context& c, const fs::path& p) {
    c.input(p);
    auto ds = cfgen::read_dataset(p);
    if (ds.pairs.empty()) throw FormatError(FormatError::Kind::bad_header, p.string() + ": dataset has no pairs");
    return ds;
}

struct LoadedModel {
    checkpoint::Checkpoint ck;
    sampling::DiffusionModel dm;
    training::ScheduleConfig schedule;
    sampling::UpsampleMethod upsample = sampling::UpsampleMethod::bicubic;
};

LoadedModel load_diffusion(Context& c, const fs::path& p, const std::string& weights) {
    c.input(p);
    LoadedModel m;
    m.ck = checkpoint::read_checkpoint(p);
    m.dm.net = checkpoint::load_model(m.ck, sampling::to_string(sampling::weight_set_from_string(weights)));
    try {
        m.schedule = m.ck.meta.at("schedule").get<training::ScheduleConfig>();
        m.upsample = sampling::upsample_method_from_string(m.ck.meta.value("condition_upsample", std::string("bicubic")));
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, p.string() + ": " + e.what());
    } catch (const DomainError& e) {
        throw FormatError(FormatError::Kind::bad_header, p.string() + ": " + e.what());
    }
    m.dm.schedule = m.schedule.build();
    return m;
}

void check_model_fits(const denoiser::DenoiserSpec& spec, const cfgen::Dataset& ds, const std::string& what) {
    const auto& hr = ds.pairs.front().hr;
    if (hr.resolution != spec.resolution)
        throw ConfigError(what + ": model.resolution " + std::to_string(spec.resolution) +
                          " does not match the dataset resolution " + std::to_string(hr.resolution));
    if (hr.channels != spec.input_channels)
        throw ConfigError(what + ": model.input_channels " + std::to_string(spec.input_channels) +
                          " does not match the dataset channel count " + std::to_string(hr.channels));
}

// Student checkpoints carry the same weights under both raw and ema so that
// every consumer can select either set.
checkpoint::Checkpoint student_checkpoint(const denoiser::Denoiser<float>& student, const LoadedModel& teacher,
                                          json extra) {
    checkpoint::Checkpoint ck;
    ck.meta = {{"kind", "student"},
               {"model", checkpoint::model_meta(student.spec(), student.removed_layers())},
               {"schedule", teacher.schedule},
               {"condition_upsample", sampling::to_string(teacher.upsample)},
               {"ema_active", false}};
    ck.meta.update(extra);
    for (auto& t : checkpoint::export_params(student, "raw")) ck.tensors.push_back(std::move(t));
    for (auto& t : checkpoint::export_params(student, "ema")) ck.tensors.push_back(std::move(t));
    return ck;
}

double window_mean(const std::vector<double>& v, bool tail) {
    if (v.empty()) return 0.0;
    const std::size_t w = std::min<std::size_t>(kMovingWindow, v.size());
    return training::moving_average(v, tail ? v.size() : w, w);
}

// ---- gen ------------------------------------------------------------------

std::vector<cfgen::CFPair> generate_pairs(const config::RunConfig& r, std::vector<json>& meta) {
    const auto& d = r.dataset;
    std::vector<cfgen::CFPair> pairs;
    pairs.reserve(static_cast<std::size_t>(d.count));
    const int area = static_cast<int>(std::floor(r.scenario.area_side_m));
    for (std::int64_t k = 0; k < d.count; ++k) {
        const auto key = static_cast<std::uint64_t>(k);
        cfgen::Scenario s = r.scenario;
        s.seed = Rng::derive(r.seed, {kGenPair, key});
        if (d.random_bs_location) {
            Rng rng = Rng::substream(r.seed, {kGenBs, key});
            const int x = rng.uniform_int(0, area);
            const int y = rng.uniform_int(0, area);
            s.bs_location = {static_cast<double>(x), static_cast<double>(y)};
        }
        auto hr = cfgen::rasterize_cf(s, d.hr_resolution);
        if (d.channels > 1) hr = cfgen::replicate_channels(hr, d.channels);
        auto hrn = cfgen::minmax_normalize(hr);
        auto lrn = cfgen::downsample_cf(hrn, d.factor);
        pairs.push_back({std::move(hrn), std::move(lrn)});
        meta.push_back({{"pair", k}, {"bs_location", {s.bs_location.x, s.bs_location.y}}, {"scenario_seed", s.seed}});
    }
    return pairs;
}

void write_split(const fs::path& path, const std::vector<cfgen::CFPair>& all, const std::vector<json>& meta,
                 const std::vector<std::size_t>& idx, const json& echo) {
    std::vector<cfgen::CFPair> pairs;
    std::vector<json> m;
    for (auto i : idx) {
        pairs.push_back(all[i]);
        m.push_back(meta[i]);
    }
    cfgen::write_dataset(path, pairs, echo, m);
}

void cmd_gen(Context& c) {
    const auto& r = c.run();
    const fs::path train_path = c.resolve(r.io.train_data);
    const fs::path test_path = c.resolve(r.io.test_data);
    if (train_path == test_path) throw ConfigError("gen: io.train_data and io.test_data name the same file");
    const json key = {{"seed", r.seed}, {"scenario", c.cfg.tree.at("scenario")}, {"dataset", c.cfg.tree.at("dataset")}};
    const std::string tag = "gen-" + config::hex64(config::config_hash(key));

    fs::path cache_dir;
    if (const char* env = std::getenv(kCacheEnv); env && *env) cache_dir = fs::path(env) / tag;
    if (!cache_dir.empty() && fs::exists(cache_dir / "train.cfds") && fs::exists(cache_dir / "test.cfds")) {
        // A cached file is only used when it parses.
        cfgen::read_dataset(cache_dir / "train.cfds");
        cfgen::read_dataset(cache_dir / "test.cfds");
        fs::copy_file(cache_dir / "train.cfds", train_path, fs::copy_options::overwrite_existing);
        fs::copy_file(cache_dir / "test.cfds", test_path, fs::copy_options::overwrite_existing);
        c.summary["cache"] = {{"status", "hit"}, {"dir", cache_dir.string()}};
    } else {
        std::vector<json> meta;
        const auto pairs = generate_pairs(r, meta);
        std::vector<std::size_t> order(pairs.size());
        std::iota(order.begin(), order.end(), 0);
        Rng split = Rng::substream(r.seed, {kGenSplit});
        std::shuffle(order.begin(), order.end(), split.engine());
        const auto n_test = pairs.size() / static_cast<std::size_t>(r.dataset.test_every);
        std::vector<std::size_t> test(order.begin(), order.begin() + n_test);
        std::vector<std::size_t> train(order.begin() + n_test, order.end());
        std::sort(test.begin(), test.end());
        std::sort(train.begin(), train.end());
        json echo = {{"scenario", c.cfg.tree.at("scenario")}, {"dataset", c.cfg.tree.at("dataset")}, {"seed", r.seed}};
        echo["split"] = "train";
        write_split(train_path, pairs, meta, train, echo);
        echo["split"] = "test";
        write_split(test_path, pairs, meta, test, echo);
        if (!cache_dir.empty()) {
            fs::create_directories(cache_dir);
            for (const auto& [src, name] : {std::pair{train_path, "train.cfds"}, std::pair{test_path, "test.cfds"}}) {
                const fs::path tmp = cache_dir / (std::string(name) + ".tmp");
                fs::copy_file(src, tmp, fs::copy_options::overwrite_existing);
                fs::rename(tmp, cache_dir / name);
            }
            c.summary["cache"] = {{"status", "stored"}, {"dir", cache_dir.string()}};
        }
        c.summary["train_pairs"] = train.size();
        c.summary["test_pairs"] = test.size();
    }
    c.output(train_path);
    c.output(test_path);
}

// ---- train ----------------------------------------------------------------

void cmd_train(Context& c) {
    const auto& r = c.run();
    const auto ds = load_dataset(c, c.resolve(r.io.train_data));
    check_model_fits(r.model, ds, "train");
    const fs::path ckpt_path = c.claim(c.resolve(r.io.checkpoint));

    auto tc = r.train;
    tc.seed = Rng::derive(r.seed, {kTrain});
    const auto upsample = sampling::upsample_method_from_string(r.dataset.condition_upsample);
    const auto data = training::make_training_set(ds.pairs, upsample);
    const auto sched = r.schedule.build();

    training::TrainState st;
    if (!r.io.resume_from.empty()) {
        const fs::path resume = c.resolve(r.io.resume_from);
        if (resume == ckpt_path) throw ConfigError("train: io.resume_from must differ from io.checkpoint");
        c.input(resume);
        const auto ck = checkpoint::read_checkpoint(resume);
        if (ck.meta.contains("schedule") && ck.meta.at("schedule") != nlohmann::json(r.schedule))
            throw ConfigError("train: " + resume.string() + " was trained with a different noise schedule");
        st = training::state_from_checkpoint(ck);
    } else {
        st = training::init_state(r.model, tc);
    }

    auto finish = [&](const training::TrainState& s, const fs::path& path) {
        auto ck = training::to_checkpoint(s, tc, r.schedule);
        ck.meta["condition_upsample"] = r.dataset.condition_upsample;
        ck.meta["config_hash"] = config::hex64(c.cfg.hash);
        checkpoint::write_checkpoint(path, ck);
    };
    try {
        training::train(st, tc, data, sched, [&](const training::TrainState& s) {
            const fs::path p = c.claim(c.resolve(numbered("checkpoint", s.iteration, ".ckpt")));
            finish(s, p);
            c.output(p);
        });
    } catch (const training::TrainingDivergence& e) {
        const fs::path p = c.claim(c.resolve("divergence.json"));
        write_text(p, e.diagnostic().dump(2) + "\n");
        throw;
    }
    finish(st, ckpt_path);
    c.output(ckpt_path);
    const fs::path csv = c.claim(c.resolve("loss.csv"));
    training::write_loss_csv(csv, st.trace);
    c.output(csv);

    std::vector<double> losses;
    for (const auto& rec : st.trace) losses.push_back(rec.loss);
    c.summary["iterations"] = st.iteration;
    c.summary["parameters"] = st.model.parameter_count();
    c.summary["initial_moving_average"] = window_mean(losses, false);
    c.summary["final_moving_average"] = window_mean(losses, true);
    c.summary["ema_active"] = st.ema_active;
}

// ---- sample ---------------------------------------------------------------

std::vector<const cfgen::CFGrid*> triple(const cfgen::CFGrid& truth, const cfgen::CFGrid& cond,
                                         const cfgen::CFGrid& recon) {
    return {&truth, &cond, &recon};
}

json render_triple(const fs::path& path, const cfgen::CFPair& truth_pair, const cfgen::CFGrid& recon_norm, int scale) {
    const auto truth = cfgen::denormalize(truth_pair.hr);
    const auto cond = cfgen::denormalize(truth_pair.lr);
    const auto recon = cfgen::denormalize(recon_norm);
    heatmap::RenderInfo info;
    heatmap::Layout layout;
    layout.scale = scale;
    heatmap::write_png(path, heatmap::render_panels(triple(truth, cond, recon), layout, &info));
    return {{"png", path.filename().string()}, {"scale_db", {info.lo, info.hi}}};
}

void cmd_sample(Context& c) {
    const auto& r = c.run();
    const auto& s = r.sample;
    const auto model = load_diffusion(c, c.resolve(s.checkpoint.empty() ? r.io.checkpoint : s.checkpoint), s.weights);
    const auto test = load_dataset(c, c.resolve(r.io.test_data));
    const int target = test.pairs.front().hr.resolution;
    if (target != model.dm.net.spec().resolution)
        throw ConfigError("sample: checkpoint resolution " + std::to_string(model.dm.net.spec().resolution) +
                          " does not match the test set resolution " + std::to_string(target));
    const fs::path dir = c.resolve(r.io.samples);
    fs::create_directories(dir);

    const auto n = s.count == 0 ? test.pairs.size() : std::min<std::size_t>(s.count, test.pairs.size());
    json rows = json::array();
    for (std::size_t k = 0; k < n; ++k) {
        sampling::SampleRequest req;
        req.lr_map = test.pairs[k].lr;
        req.target_resolution = target;
        req.schedule = model.dm.schedule;
        req.seed = Rng::derive(r.seed, {kSample, k});
        req.weights = sampling::weight_set_from_string(s.weights);
        req.upsample = model.upsample;
        const auto out = sampling::sample_hr(model.dm, req);
        const cfgen::CFPair pair{out.normalized, test.pairs[k].lr};
        const fs::path file = c.claim(dir / numbered("sample", static_cast<std::int64_t>(k), ".cfds"));
        cfgen::write_dataset(file, std::span<const cfgen::CFPair>(&pair, 1), json{{"test_index", k}, {"seed", req.seed}});
        c.output(file);
        json row = {{"test_index", k}, {"file", file.filename().string()}};
        if (s.png) {
            const fs::path png = c.claim(dir / numbered("sample", static_cast<std::int64_t>(k), ".png"));
            row.update(render_triple(png, test.pairs[k], out.normalized, s.png_scale));
            c.output(png);
        }
        rows.push_back(row);
    }
    c.summary["samples"] = rows;
}

// ---- plot -----------------------------------------------------------------

void cmd_plot(Context& c) {
    const auto& r = c.run();
    const auto test = load_dataset(c, c.resolve(r.io.test_data));
    const fs::path dir = c.resolve(r.io.samples);
    json rows = json::array();
    for (int k : r.plot.indices) {
        if (k >= static_cast<int>(test.pairs.size()))
            throw ConfigError("plot: index " + std::to_string(k) + " exceeds the test set size " +
                              std::to_string(test.pairs.size()));
        const fs::path file = dir / numbered("sample", k, ".cfds");
        const auto sample = load_dataset(c, file);
        const auto& recon = sample.pairs.front().hr;
        if (recon.resolution != test.pairs[k].hr.resolution)
            throw FormatError(FormatError::Kind::shape_mismatch, file.string() + ": resolution differs from the test map");
        const fs::path png = c.claim(c.resolve(numbered("plot", k, ".png")));
        json row = render_triple(png, test.pairs[k], recon, r.plot.scale);
        row["test_index"] = k;
        rows.push_back(row);
        c.output(png);
    }
    c.summary["panels"] = {"ground truth", "condition", "reconstruction"};
    c.summary["plots"] = rows;
}

// ---- prune ----------------------------------------------------------------

void cmd_prune(Context& c) {
    const auto& r = c.run();
    const auto& p = r.prune;
    const auto teacher = load_diffusion(c, c.resolve(r.io.checkpoint), p.weights);
    const auto ds = load_dataset(c, c.resolve(r.io.train_data));
    check_model_fits(teacher.dm.net.spec(), ds, "prune");

    const auto n = std::min<std::size_t>(p.calibration_samples, ds.pairs.size());
    const auto calib_set = training::make_training_set(std::span(ds.pairs).first(n), teacher.upsample);
    compression::Calibration calib{calib_set.conditions, calib_set.targets, p.calibration_draws,
                                   Rng::derive(r.seed, {kPrune}), p.batch_size};
    const auto plan = compression::plan_pruning(teacher.dm.net, calib, teacher.dm.schedule, {p.ratio, p.weight_unit});
    const auto student = compression::apply_pruning(teacher.dm.net, plan);

    const fs::path plan_path = c.claim(c.resolve(r.io.plan));
    write_text(plan_path, json(plan).dump(2) + "\n");
    c.output(plan_path);
    const fs::path student_path = c.claim(c.resolve(r.io.student));
    checkpoint::write_checkpoint(student_path, student_checkpoint(student, teacher,
                                                                  {{"plan", plan},
                                                                   {"teacher_params", teacher.dm.net.parameter_count()},
                                                                   {"config_hash", config::hex64(c.cfg.hash)}}));
    c.output(student_path);

    c.summary["teacher_params"] = teacher.dm.net.parameter_count();
    c.summary["student_params"] = student.parameter_count();
    c.summary["removed_layers"] = plan.selection;
    c.summary["removed_fraction"] =
        1.0 - static_cast<double>(student.parameter_count()) / static_cast<double>(teacher.dm.net.parameter_count());
}

// ---- distill --------------------------------------------------------------

void cmd_distill(Context& c) {
    const auto& r = c.run();
    const auto teacher = load_diffusion(c, c.resolve(r.io.checkpoint), r.prune.weights);
    const fs::path student_in = c.resolve(r.io.student);
    c.input(student_in);
    auto student = checkpoint::load_model(checkpoint::read_checkpoint(student_in), "raw");
    const auto ds = load_dataset(c, c.resolve(r.io.train_data));
    check_model_fits(teacher.dm.net.spec(), ds, "distill");

    auto dc = r.distill;
    dc.seed = Rng::derive(r.seed, {kDistill});
    const auto data = training::make_training_set(ds.pairs, teacher.upsample);
    const auto res = compression::distill_finetune(teacher.dm.net, std::move(student), dc, data, teacher.dm.schedule);

    const fs::path out_path = c.claim(c.resolve(r.io.distilled));
    checkpoint::write_checkpoint(out_path, student_checkpoint(res.student, teacher,
                                                              {{"distill", dc},
                                                               {"teacher_params", teacher.dm.net.parameter_count()},
                                                               {"config_hash", config::hex64(c.cfg.hash)}}));
    c.output(out_path);

    const fs::path csv = c.claim(c.resolve("distill_loss.csv"));
    std::string text = "iteration,task,okd,fkd,total\n";
    std::vector<double> totals;
    for (const auto& rec : res.trace) {
        char line[160];
        std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(rec.iteration),
                      rec.losses.task, rec.losses.okd, rec.losses.fkd, rec.total);
        text += line;
        totals.push_back(rec.total);
    }
    write_text(csv, text);
    c.output(csv);

    c.summary["iterations"] = dc.iterations;
    c.summary["student_params"] = res.student.parameter_count();
    c.summary["initial_moving_average"] = window_mean(totals, false);
    c.summary["final_moving_average"] = window_mean(totals, true);
}

// ---- eval -----------------------------------------------------------------

json headline(const evalkit::EvalReport& rep) {
    return {{"task", rep.task},
            {"method", rep.method},
            {"factor", rep.factor},
            {"samples", rep.count()},
            {"median_nmse", rep.summary(&evalkit::SampleMetrics::nmse).median},
            {"median_psnr", rep.summary(&evalkit::SampleMetrics::psnr).median},
            {"median_ssim", rep.summary(&evalkit::SampleMetrics::ssim).median}};
}

void cmd_eval(Context& c) {
    const auto& r = c.run();
    const auto& e = r.eval;
    const auto test = load_dataset(c, c.resolve(r.io.test_data));
    const int hr = test.pairs.front().hr.resolution;
    for (int f : e.factors)
        if (hr % f != 0)
            throw ConfigError("eval: factor " + std::to_string(f) + " does not divide the test resolution " +
                              std::to_string(hr));

    std::optional<LoadedModel> model;
    evalkit::Reconstructor rec;
    std::string label = e.method;
    auto upsample = sampling::upsample_method_from_string(r.dataset.condition_upsample);
    if (e.method == "model") {
        const fs::path ck = c.resolve(e.checkpoint.empty() ? r.io.checkpoint : e.checkpoint);
        model = load_diffusion(c, ck, e.weights);
        if (model->dm.net.spec().resolution != hr)
            throw ConfigError("eval: checkpoint resolution " + std::to_string(model->dm.net.spec().resolution) +
                              " does not match the test set resolution " + std::to_string(hr));
        rec = evalkit::diffusion_reconstructor(model->dm);
        upsample = model->upsample;
        label = "model:" + ck.filename().string();
    } else if (e.method == "oracle") {
        rec = evalkit::oracle_reconstructor();
    } else {
        rec = evalkit::interpolation_reconstructor(sampling::upsample_method_from_string(e.method));
    }

    std::vector<evalkit::EvalReport> reports;
    json heads = json::array();
    for (int f : e.factors) {
        evalkit::EvalOptions opts;
        opts.factor = f;
        opts.seed = Rng::derive(r.seed, {kEval});
        opts.psnr_cap_db = e.psnr_cap_db;
        opts.ssim_variant = evalkit::ssim_variant_from_string(e.ssim);
        opts.upsample = upsample;
        opts.max_samples = static_cast<std::size_t>(e.max_samples);
        opts.method = label;
        reports.push_back(evalkit::evaluate(test.pairs, rec, opts));
        heads.push_back(headline(reports.back()));
        if (e.baseline && e.method != "nearest") {
            opts.method = "nearest";
            reports.push_back(
                evalkit::evaluate(test.pairs, evalkit::interpolation_reconstructor(sampling::UpsampleMethod::nearest), opts));
            heads.push_back(headline(reports.back()));
        }
    }

    json doc = {{"reports", json::array()}};
    for (const auto& rep : reports) doc["reports"].push_back(evalkit::to_json(rep));
    const fs::path json_path = c.claim(c.resolve("eval.json"));
    write_text(json_path, doc.dump(2) + "\n");
    c.output(json_path);
    const fs::path md_path = c.claim(c.resolve("eval.md"));
    write_text(md_path, evalkit::to_markdown(reports));
    c.output(md_path);
    c.summary["reports"] = heads;
}

}  // namespace

std::uint32_t file_crc32(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
    boost::crc_32_type crc;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) crc.process_bytes(buf, static_cast<std::size_t>(in.gcount()));
    return crc.checksum();
}

json run(const Invocation& inv) {
    using Handler = void (*)(Context&);
    static const std::pair<const char*, Handler> table[] = {{"gen", cmd_gen},         {"train", cmd_train},
                                                            {"sample", cmd_sample},   {"prune", cmd_prune},
                                                            {"distill", cmd_distill}, {"eval", cmd_eval},
                                                            {"plot", cmd_plot}};
    const auto* entry = std::find_if(std::begin(table), std::end(table),
                                     [&](const auto& e) { return inv.command == e.first; });
    if (entry == std::end(table)) throw ConfigError("unknown command '" + inv.command + "'");

    const auto loaded = config::load(inv.sources);
    fs::create_directories(inv.out);
    Context ctx{loaded, inv.out};
    entry->second(ctx);

    const json manifest = {{"command", inv.command},
                           {"config_hash", config::hex64(loaded.hash)},
                           {"seed", loaded.run.seed},
                           {"config", loaded.tree},
                           {"inputs", ctx.inputs},
                           {"outputs", ctx.outputs},
                           {"summary", ctx.summary}};
    write_text(inv.out / ("manifest_" + inv.command + ".json"), manifest.dump(2) + "\n");
    return manifest;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
    if (dynamic_cast<const FormatError*>(&e)) return kFormatError;
    return kRuntimeError;
}

int run_guarded(const Invocation& inv, std::ostream& err) {
    try {
        run(inv);
        return kOk;
    } catch (const std::exception& e) {
        const int code = exit_code_for(e);
        const char* cls = code == kConfigError ? "config error" : code == kFormatError ? "data-format error" : "runtime error";
        err << "cftwin " << inv.command << ": " << cls << ": " << e.what() << "\n";
        return code;
    }
}

}  // namespace cftwin::commands
