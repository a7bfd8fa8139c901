#include "cftwin/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cftwin/error.hpp"

namespace cftwin::evalkit {

namespace {

void require_pair(std::span<const double> pred, std::span<const double> ref, const char* where) {
    if (pred.size() != ref.size()) throw DomainError(std::string(where) + ": inputs differ in size");
    if (pred.empty()) throw DomainError(std::string(where) + ": empty input");
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

double nmse(std::span<const double> pred, std::span<const double> ref) {
    require_pair(pred, ref, "nmse");
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
        const double d = pred[k] - ref[k];
        num += d * d;
        den += ref[k] * ref[k];
    }
    if (den == 0.0) throw DomainError("nmse: reference is all zero");
    return num / den;
}

double mse(std::span<const double> pred, std::span<const double> ref) {
    require_pair(pred, ref, "mse");
    double s = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
        const double d = pred[k] - ref[k];
        s += d * d;
    }
    return s / static_cast<double>(ref.size());
}

double psnr(std::span<const double> pred, std::span<const double> ref, double peak, double cap_db) {
    const double m = mse(pred, ref);
    if (m == 0.0) return cap_db;
    return std::min(20.0 * std::log10(peak / std::sqrt(m)), cap_db);
}

double ssim_global(std::span<const double> pred, std::span<const double> ref, double peak) {
    require_pair(pred, ref, "ssim");
    const double n = static_cast<double>(ref.size());
    double ua = 0.0, ub = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
        ua += pred[k];
        ub += ref[k];
    }
    ua /= n;
    ub /= n;
    double va = 0.0, vb = 0.0, cov = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
        const double da = pred[k] - ua, db = ref[k] - ub;
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    va /= n;
    vb /= n;
    cov /= n;
    const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
    return ((2.0 * ua * ub + c1) * (2.0 * cov + c2)) / ((ua * ua + ub * ub + c1) * (va + vb + c2));
}

double ssim_gaussian(std::span<const double> pred, std::span<const double> ref, int side, double peak, int window,
                     double sigma) {
    require_pair(pred, ref, "ssim");
    if (static_cast<std::size_t>(side) * side != ref.size()) throw DomainError("ssim: maps are not side x side");
    if (window < 1 || window > side) throw DomainError("ssim: window larger than the map");
    std::vector<double> w(static_cast<std::size_t>(window) * window);
    const double c = (window - 1) / 2.0;
    for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j)
            w[i * window + j] = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2.0 * sigma * sigma));
    const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& v : w) v /= wsum;
    const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
    double total = 0.0;
    int windows = 0;
    for (int y = 0; y + window <= side; ++y)
        for (int x = 0; x + window <= side; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < window; ++i)
                for (int j = 0; j < window; ++j) {
                    const double wk = w[i * window + j];
                    const double a = pred[(y + i) * side + x + j], b = ref[(y + i) * side + x + j];
                    ma += wk * a;
                    mb += wk * b;
                    saa += wk * a * a;
                    sbb += wk * b * b;
                    sab += wk * a * b;
                }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    return total / windows;
}

std::string to_string(SsimVariant v) { return v == SsimVariant::global ? "global" : "gaussian"; }

SsimVariant ssim_variant_from_string(const std::string& s) {
    if (s == "global") return SsimVariant::global;
    if (s == "gaussian") return SsimVariant::gaussian;
    throw DomainError("unknown ssim variant '" + s + "'");
}

std::vector<double> to_8bit_scale(const cfgen::CFGrid& g) {
    if (g.normalization != cfgen::Normalization::minmax01) throw DomainError("to_8bit_scale: grid is not min-max normalised");
    std::vector<double> out(g.values.size());
    std::transform(g.values.begin(), g.values.end(), out.begin(), [](double v) { return 255.0 * v; });
    return out;
}

Aggregate aggregate(std::vector<double> values) {
    Aggregate a;
    if (values.empty()) return a;
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    a.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    return a;
}

Aggregate EvalReport::summary(double SampleMetrics::*field) const {
    std::vector<double> v;
    for (const auto& s : samples) v.push_back(s.*field);
    return aggregate(std::move(v));
}

namespace {

const std::vector<std::pair<const char*, double SampleMetrics::*>>& metric_fields() {
    static const std::vector<std::pair<const char*, double SampleMetrics::*>> f{
        {"nmse", &SampleMetrics::nmse}, {"mse", &SampleMetrics::mse},         {"psnr", &SampleMetrics::psnr},
        {"ssim", &SampleMetrics::ssim}, {"nmse_db", &SampleMetrics::nmse_db}, {"mse_db", &SampleMetrics::mse_db}};
    return f;
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : r.samples) {
        nlohmann::json row{{"index", s.index}};
        for (const auto& [name, field] : metric_fields()) row[name] = s.*field;
        samples.push_back(row);
    }
    nlohmann::json agg;
    for (const auto& [name, field] : metric_fields()) {
        const auto a = r.summary(field);
        agg[name] = {{"mean", a.mean}, {"median", a.median}};
    }
    return {{"task", r.task},
            {"method", r.method},
            {"factor", r.factor},
            {"lr_resolution", r.lr_resolution},
            {"hr_resolution", r.hr_resolution},
            {"count", r.count()},
            {"scaling", {{"nmse", "[0,255]"}, {"mse", "[0,255]"}, {"psnr", "[0,255], peak 255"}, {"ssim", "[0,255]"},
                         {"nmse_db", "dB"}, {"mse_db", "dB"}}},
            {"psnr_cap_db", r.psnr_cap_db},
            {"psnr_capped", r.psnr_capped},
            {"ssim_variant", to_string(r.ssim_variant)},
            {"samples", samples},
            {"aggregates", agg}};
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.task = j.at("task").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.factor = j.at("factor").get<int>();
        r.lr_resolution = j.at("lr_resolution").get<int>();
        r.hr_resolution = j.at("hr_resolution").get<int>();
        r.psnr_cap_db = j.at("psnr_cap_db").get<double>();
        r.psnr_capped = j.at("psnr_capped").get<int>();
        r.ssim_variant = ssim_variant_from_string(j.at("ssim_variant").get<std::string>());
        for (const auto& row : j.at("samples")) {
            SampleMetrics s;
            s.index = row.at("index").get<int>();
            for (const auto& [name, field] : metric_fields()) s.*field = row.at(name).get<double>();
            r.samples.push_back(s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, std::string("eval report: ") + e.what());
    }
    return r;
}

std::string to_markdown(const std::vector<EvalReport>& reports) {
    std::string md =
        "| Task | Method | Samples | NMSE | MSE | PSNR (dB) | SSIM | NMSE (dB maps) | MSE (dB maps) |\n"
        "|---|---|---:|---:|---:|---:|---:|---:|---:|\n";
    for (const auto& r : reports) {
        md += "| " + r.task + " | " + r.method + " | " + std::to_string(r.count()) + " |";
        for (const auto& [name, field] : metric_fields()) {
            const auto a = r.summary(field);
            md += " " + fmt(a.mean) + " (" + fmt(a.median) + ") |";
        }
        md += "\n";
    }
    md += "\nCells show mean (median). NMSE, MSE, PSNR and SSIM use maps rescaled to [0, 255]";
    md += "; the dB columns use de-normalised power maps.\n";
    return md;
}

std::string task_label(int factor, int lr_resolution, int hr_resolution) {
    return "x" + std::to_string(factor) + " " + std::to_string(lr_resolution) + "^2 -> " + std::to_string(hr_resolution) + "^2";
}

Reconstructor oracle_reconstructor() {
    return [](const ReconstructionInput& in) {
        if (!in.truth) throw DomainError("oracle reconstructor: no ground truth supplied");
        return *in.truth;
    };
}

Reconstructor interpolation_reconstructor(sampling::UpsampleMethod method) {
    return [method](const ReconstructionInput& in) { return sampling::upsample_condition(*in.lr, in.condition->resolution, method); };
}

Reconstructor diffusion_reconstructor(const sampling::DiffusionModel& model) {
    return [&model](const ReconstructionInput& in) {
        const auto cond = sampling::to_model_space(*in.condition);
        const std::uint64_t seed = in.seed;
        const auto chain =
            sampling::run_reverse_chain(sampling::model_predictor(model.net), cond, model.schedule, std::span<const std::uint64_t>(&seed, 1));
        return sampling::from_model_space(chain.g0, 0, *in.condition);
    };
}

EvalReport evaluate(std::span<const cfgen::CFPair> pairs, const Reconstructor& reconstruct, const EvalOptions& opts) {
    if (pairs.empty()) throw DomainError("evaluate: no test pairs");
    const int hr_res = pairs[0].hr.resolution;
    if (opts.factor < 1 || hr_res % opts.factor != 0)
        throw DomainError("evaluate: factor " + std::to_string(opts.factor) + " does not divide resolution " + std::to_string(hr_res));
    EvalReport report;
    report.factor = opts.factor;
    report.hr_resolution = hr_res;
    report.lr_resolution = hr_res / opts.factor;
    report.task = task_label(opts.factor, report.lr_resolution, hr_res);
    report.method = opts.method;
    report.psnr_cap_db = opts.psnr_cap_db;
    report.ssim_variant = opts.ssim_variant;
    const std::size_t n = opts.max_samples ? std::min(opts.max_samples, pairs.size()) : pairs.size();
    for (std::size_t k = 0; k < n; ++k) {
        const auto& truth = pairs[k].hr;
        if (truth.resolution != hr_res) throw DomainError("evaluate: test pairs differ in resolution");
        if (truth.normalization != cfgen::Normalization::minmax01) throw DomainError("evaluate: ground truth must be min-max normalised");
        const auto lr = cfgen::downsample_cf(truth, opts.factor);
        const auto cond = sampling::upsample_condition(lr, hr_res, opts.upsample);
        ReconstructionInput in{static_cast<int>(k), &lr, &cond, &truth, Rng::derive(opts.seed, {k})};
        auto pred = reconstruct(in);
        if (pred.size() != truth.size()) throw DomainError("evaluate: reconstruction has the wrong shape");
        pred.normalization = cfgen::Normalization::minmax01;
        pred.norm_min = truth.norm_min;
        pred.norm_max = truth.norm_max;
        for (double& v : pred.values) {
            if (!std::isfinite(v)) throw NumericalError("evaluate: non-finite reconstruction for sample " + std::to_string(k));
            v = std::clamp(v, 0.0, 1.0);
        }

        const auto p8 = to_8bit_scale(pred), t8 = to_8bit_scale(truth);
        SampleMetrics m;
        m.index = static_cast<int>(k);
        m.nmse = nmse(p8, t8);
        m.mse = mse(p8, t8);
        m.psnr = psnr(p8, t8, 255.0, opts.psnr_cap_db);
        if (m.psnr >= opts.psnr_cap_db) ++report.psnr_capped;
        m.ssim = opts.ssim_variant == SsimVariant::global ? ssim_global(p8, t8) : ssim_gaussian(p8, t8, hr_res);
        const auto pdb = cfgen::denormalize(pred), tdb = cfgen::denormalize(truth);
        m.nmse_db = nmse(pdb.values, tdb.values);
        m.mse_db = mse(pdb.values, tdb.values);
        report.samples.push_back(m);
    }
    return report;
}

}  // namespace cftwin::evalkit
