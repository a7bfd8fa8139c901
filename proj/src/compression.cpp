#include "cftwin/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cftwin/error.hpp"
#include "json_keys.hpp"

namespace cftwin::compression {

using denoiser::Denoiser;
using denoiser::LayerKind;

std::vector<int> prunable_layers(const denoiser::LayerCatalog& catalog) {
    std::vector<int> out;
    for (const auto& r : catalog) {
        if (!r.removed && r.prunable) out.push_back(r.id);
    }
    return out;
}

namespace {

struct CalibInputs {
    Tensor<float> conditions, g_t;
    std::vector<int> t;
};

CalibInputs prepare(const Calibration& calib, const diffusion::NoiseSchedule& sched) {
    calib.conditions.require_same_shape(calib.targets, "calibration");
    const int n = calib.targets.n();
    if (n == 0 || calib.draws < 1) throw DomainError("calibration: empty set");
    const int total = n * calib.draws;
    CalibInputs in{Tensor<float>(total, calib.targets.c(), calib.targets.h(), calib.targets.w()),
                   Tensor<float>(total, calib.targets.c(), calib.targets.h(), calib.targets.w()), std::vector<int>(total)};
    const std::size_t per = calib.targets.sample_size();
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < calib.draws; ++d) {
            const int k = i * calib.draws + d;
            Rng rng = Rng::substream(calib.seed, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(d)});
            in.t[k] = rng.uniform_int(1, sched.steps);
            const double a = std::sqrt(sched.alpha_bar(in.t[k])), b = std::sqrt(1.0 - sched.alpha_bar(in.t[k]));
            const float* x0 = calib.targets.sample(i);
            float* g = in.g_t.sample(k);
            for (std::size_t e = 0; e < per; ++e) g[e] = static_cast<float>(a * x0[e] + b * rng.normal());
            std::copy_n(calib.conditions.sample(i), per, in.conditions.sample(k));
        }
    return in;
}

Tensor<float> run_chunked(const Denoiser<float>& model, const CalibInputs& in, int chunk, const std::vector<char>* bypass) {
    Tensor<float> out(in.g_t.n(), in.g_t.c(), in.g_t.h(), in.g_t.w());
    denoiser::ForwardOptions<float> opts;
    opts.bypass = bypass;
    for (int s = 0; s < in.g_t.n(); s += chunk) {
        const int m = std::min(chunk, in.g_t.n() - s);
        auto y = model.forward(slice_batch(in.conditions, s, m), slice_batch(in.g_t, s, m),
                               std::span<const int>(in.t.data() + s, m), opts);
        std::copy_n(y.data(), y.size(), out.sample(s));
    }
    return out;
}

double mean_sq_norm(const Tensor<float>& a, const Tensor<float>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        s += d * d;
    }
    return s / a.n();
}

void require_prunable(const Denoiser<float>& teacher, int id) {
    const auto ids = prunable_layers(teacher.catalog());
    if (std::find(ids.begin(), ids.end(), id) == ids.end())
        throw DomainError("layer " + std::to_string(id) + " is not a prunable layer of this model");
}

}  // namespace

std::vector<double> layer_importances(const Denoiser<float>& teacher, const std::vector<int>& layer_ids,
                                      const Calibration& calib, const diffusion::NoiseSchedule& sched) {
    for (int id : layer_ids) require_prunable(teacher, id);
    const auto in = prepare(calib, sched);
    const auto full = run_chunked(teacher, in, calib.batch_size, nullptr);
    std::vector<double> values;
    std::vector<char> mask(teacher.catalog().size(), 0);
    for (int id : layer_ids) {
        mask[id] = 1;
        values.push_back(mean_sq_norm(full, run_chunked(teacher, in, calib.batch_size, &mask)));
        mask[id] = 0;
    }
    return values;
}

double layer_importance(const Denoiser<float>& teacher, int layer_id, const Calibration& calib,
                        const diffusion::NoiseSchedule& sched) {
    return layer_importances(teacher, {layer_id}, calib, sched).at(0);
}

KnapsackResult solve_knapsack(const std::vector<double>& values, const std::vector<std::int64_t>& weights,
                              std::int64_t budget, std::int64_t unit) {
    if (values.size() != weights.size()) throw DomainError("knapsack: values and weights differ in length");
    if (unit < 1) throw DomainError("knapsack: weight unit must be >= 1");
    for (double v : values)
        if (!(v >= 0) || !std::isfinite(v)) throw DomainError("knapsack: values must be finite and >= 0");
    for (auto w : weights)
        if (w < 0) throw DomainError("knapsack: weights must be >= 0");
    if (budget < 0) throw DomainError("knapsack: budget must be >= 0");
    const std::int64_t total = std::accumulate(weights.begin(), weights.end(), std::int64_t{0});
    if (budget > total)
        throw InfeasibleError("knapsack: budget " + std::to_string(budget) + " exceeds total weight " + std::to_string(total));

    KnapsackResult res;
    if (budget == 0) return res;
    const int n = static_cast<int>(values.size());
    const std::int64_t cap64 = (total - budget) / unit;
    if (cap64 > 50'000'000) throw DomainError("knapsack: capacity too large for the table; use a coarser weight unit");
    const int cap = static_cast<int>(cap64);
    std::vector<int> wu(n);
    for (int i = 0; i < n; ++i) wu[i] = static_cast<int>((weights[i] + unit - 1) / unit);

    // best(i, c): most value kept (then most items kept) from items i..n-1 within capacity c.
    struct Cell {
        double value;
        int count;
        bool operator==(const Cell& o) const { return value == o.value && count == o.count; }
        bool better_than(const Cell& o) const { return value > o.value || (value == o.value && count > o.count); }
    };
    const std::size_t stride = static_cast<std::size_t>(cap) + 1;
    std::vector<Cell> best((static_cast<std::size_t>(n) + 1) * stride, Cell{0.0, 0});
    for (int i = n - 1; i >= 0; --i) {
        const Cell* next = &best[(i + 1) * stride];
        Cell* cur = &best[i * stride];
        for (int c = 0; c <= cap; ++c) {
            cur[c] = next[c];
            if (wu[i] <= c) {
                const Cell keep{values[i] + next[c - wu[i]].value, next[c - wu[i]].count + 1};
                if (keep.better_than(cur[c])) cur[c] = keep;
            }
        }
    }
    int c = cap;
    for (int i = 0; i < n; ++i) {
        if (best[i * stride + c] == best[(i + 1) * stride + c]) {
            res.selection.push_back(i);
        } else {
            c -= wu[i];
        }
    }
    for (int i : res.selection) {
        res.objective += values[i];
        res.selected_weight += weights[i];
    }
    return res;
}

void to_json(nlohmann::json& j, const PruningPlan& p) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : p.candidates) cands.push_back({{"layer_id", c.layer_id}, {"value", c.value}, {"weight", c.weight}});
    j = {{"candidates", cands},
         {"total_params", p.total_params},
         {"ratio", p.ratio},
         {"budget_params", p.budget_params},
         {"weight_unit", p.weight_unit},
         {"selection", p.selection},
         {"objective_value", p.objective_value},
         {"selected_params", p.selected_params}};
}

void from_json(const nlohmann::json& j, PruningPlan& p) {
    p.candidates.clear();
    for (const auto& c : j.at("candidates"))
        p.candidates.push_back({c.at("layer_id").get<int>(), c.at("value").get<double>(), c.at("weight").get<std::int64_t>()});
    p.total_params = j.at("total_params").get<std::int64_t>();
    p.ratio = j.at("ratio").get<double>();
    p.budget_params = j.at("budget_params").get<std::int64_t>();
    p.weight_unit = j.at("weight_unit").get<std::int64_t>();
    p.selection = j.at("selection").get<std::vector<int>>();
    p.objective_value = j.at("objective_value").get<double>();
    p.selected_params = j.at("selected_params").get<std::int64_t>();
}

PruningPlan plan_pruning(const Denoiser<float>& teacher, const Calibration& calib, const diffusion::NoiseSchedule& sched,
                         const PlanOptions& opts) {
    if (!(opts.ratio > 0.0 && opts.ratio < 1.0)) throw DomainError("plan_pruning: ratio must lie in (0, 1)");
    PruningPlan plan;
    plan.total_params = teacher.parameter_count();
    plan.ratio = opts.ratio;
    plan.weight_unit = opts.weight_unit;
    plan.budget_params = std::llround(opts.ratio * static_cast<double>(plan.total_params));
    const auto ids = prunable_layers(teacher.catalog());
    std::int64_t mass = 0;
    for (int id : ids) mass += teacher.catalog()[id].params;
    if (mass < plan.budget_params) {
        throw InfeasibleError("plan_pruning: prunable layers hold " + std::to_string(mass) + " of " +
                              std::to_string(plan.total_params) + " parameters; max achievable ratio is " +
                              std::to_string(static_cast<double>(mass) / plan.total_params));
    }
    const auto values = layer_importances(teacher, ids, calib, sched);
    std::vector<std::int64_t> weights;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        plan.candidates.push_back({ids[i], values[i], teacher.catalog()[ids[i]].params});
        weights.push_back(teacher.catalog()[ids[i]].params);
    }
    const auto sol = solve_knapsack(values, weights, plan.budget_params, opts.weight_unit);
    for (int i : sol.selection) plan.selection.push_back(ids[i]);
    plan.objective_value = sol.objective;
    plan.selected_params = sol.selected_weight;
    return plan;
}

Denoiser<float> apply_pruning(const Denoiser<float>& teacher, const PruningPlan& plan) {
    if (plan.total_params != teacher.parameter_count())
        throw DomainError("apply_pruning: plan was made for a model with " + std::to_string(plan.total_params) + " parameters");
    const auto& cat = teacher.catalog();
    for (const auto& c : plan.candidates) {
        if (c.layer_id < 0 || c.layer_id >= static_cast<int>(cat.size()) || cat[c.layer_id].params != c.weight)
            throw DomainError("apply_pruning: plan candidates do not match the model catalog");
    }
    Denoiser<float> student = teacher;
    for (int id : plan.selection) {
        const bool listed = std::any_of(plan.candidates.begin(), plan.candidates.end(), [&](const Candidate& c) { return c.layer_id == id; });
        if (!listed) throw DomainError("apply_pruning: selected layer " + std::to_string(id) + " is not a candidate");
        student.remove_layer(id);
    }
    return student;
}

namespace {

double mse(const Tensor<float>& a, const Tensor<float>& b) {
    if (!a.same_shape(b)) throw DomainError("kd: feature shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

struct Draw {
    std::vector<int> t;
    Tensor<float> eps, g_t;
};

Draw draw_corruption(const Tensor<float>& targets, const diffusion::NoiseSchedule& sched, Rng& rng) {
    Draw d;
    d.t.resize(targets.n());
    for (auto& t : d.t) t = rng.uniform_int(1, sched.steps);
    d.eps = rng.normal_like(targets);
    d.g_t = diffusion::q_sample(targets, std::span<const int>(d.t), d.eps, sched);
    return d;
}

}  // namespace

KdLosses kd_losses(const Denoiser<float>& teacher, const Denoiser<float>& student, const Tensor<float>& conditions,
                   const Tensor<float>& targets, const diffusion::NoiseSchedule& sched, Rng& rng) {
    const auto d = draw_corruption(targets, sched, rng);
    std::vector<Tensor<float>> ft, fs;
    denoiser::ForwardOptions<float> ot, os;
    ot.taps = &ft;
    os.taps = &fs;
    const auto eps_t = teacher.forward(conditions, d.g_t, d.t, ot);
    const auto eps_s = student.forward(conditions, d.g_t, d.t, os);
    KdLosses l;
    l.task = mse(d.eps, eps_s);
    l.okd = mse(eps_t, eps_s);
    for (int i = 0; i < denoiser::kFeatureTaps; ++i) l.fkd += mse(ft[i], fs[i]);
    return l;
}

void DistillConfig::validate() const {
    if (lambda_o < 0 || lambda_f < 0) throw DomainError("distill: loss weights must be >= 0");
    if (iterations < 0) throw DomainError("distill: iterations must be >= 0");
    if (!(learning_rate > 0)) throw DomainError("distill: learning_rate must be > 0");
    if (batch_size < 1) throw DomainError("distill: batch_size must be >= 1");
}

void to_json(nlohmann::json& j, const DistillConfig& c) {
    j = {{"lambda_o", c.lambda_o},     {"lambda_f", c.lambda_f},     {"iterations", c.iterations},
         {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"seed", c.seed},
         {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps}};
}

void from_json(const nlohmann::json& j, DistillConfig& c) {
    detail::require_known_keys(j,
                               {"lambda_o", "lambda_f", "iterations", "learning_rate", "batch_size", "seed", "adam_beta1",
                                "adam_beta2", "adam_eps"},
                               "distill");
    DistillConfig d;
    c.lambda_o = j.value("lambda_o", d.lambda_o);
    c.lambda_f = j.value("lambda_f", d.lambda_f);
    c.iterations = j.value("iterations", d.iterations);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
}

DistillResult distill_finetune(const Denoiser<float>& teacher, Denoiser<float> student, const DistillConfig& cfg,
                               const training::TrainingSet& data, const diffusion::NoiseSchedule& sched) {
    cfg.validate();
    if (data.size() == 0) throw DomainError("distill: empty dataset");
    DistillResult res;
    training::Adam<float> adam(student.parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    std::vector<int> idx(cfg.batch_size);
    for (std::int64_t k = 0; k < cfg.iterations; ++k) {
        Rng rng = Rng::substream(cfg.seed, {static_cast<std::uint64_t>(k)});
        for (auto& i : idx) i = rng.uniform_int(0, data.size() - 1);
        const auto cond = training::gather(data.conditions, idx);
        const auto tgt = training::gather(data.targets, idx);
        const auto d = draw_corruption(tgt, sched, rng);

        std::vector<Tensor<float>> ft, fs;
        denoiser::ForwardOptions<float> ot;
        ot.taps = &ft;
        const auto eps_t = teacher.forward(cond, d.g_t, d.t, ot);
        denoiser::ForwardCache<float> cache;
        denoiser::ForwardOptions<float> os;
        os.train = true;
        os.rng = &rng;
        os.cache = &cache;
        os.taps = &fs;
        const auto eps_s = student.forward(cond, d.g_t, d.t, os);

        KdLosses l;
        l.task = mse(d.eps, eps_s);
        l.okd = mse(eps_t, eps_s);
        const double n = static_cast<double>(eps_s.size());
        Tensor<float> d_eps(eps_s.n(), eps_s.c(), eps_s.h(), eps_s.w());
        for (std::size_t e = 0; e < d_eps.size(); ++e)
            d_eps[e] = static_cast<float>(2.0 / n * ((static_cast<double>(eps_s[e]) - d.eps[e]) + cfg.lambda_o * (static_cast<double>(eps_s[e]) - eps_t[e])));
        std::vector<Tensor<float>> d_taps(denoiser::kFeatureTaps);
        for (int i = 0; i < denoiser::kFeatureTaps; ++i) {
            l.fkd += mse(ft[i], fs[i]);
            const double m = static_cast<double>(fs[i].size());
            d_taps[i] = Tensor<float>(fs[i].n(), fs[i].c(), fs[i].h(), fs[i].w());
            for (std::size_t e = 0; e < fs[i].size(); ++e)
                d_taps[i][e] = static_cast<float>(2.0 * cfg.lambda_f / m * (static_cast<double>(fs[i][e]) - ft[i][e]));
        }
        const double total = l.total(cfg.lambda_o, cfg.lambda_f);
        if (!std::isfinite(total)) throw NumericalError("distill: non-finite loss at iteration " + std::to_string(k));
        student.zero_grad();
        student.backward(cache, d_eps, &d_taps);
        adam.step(student.parameters(), cfg.learning_rate);
        res.trace.push_back({k, l, total});
    }
    res.student = std::move(student);
    return res;
}

std::vector<AdditivityEntry> additivity_table(const Denoiser<float>& teacher, const std::vector<int>& layer_ids,
                                              const Calibration& calib, const diffusion::NoiseSchedule& sched) {
    for (int id : layer_ids) require_prunable(teacher, id);
    const auto in = prepare(calib, sched);
    const auto full = run_chunked(teacher, in, calib.batch_size, nullptr);
    std::vector<char> mask(teacher.catalog().size(), 0);
    std::vector<double> single;
    for (int id : layer_ids) {
        mask[id] = 1;
        single.push_back(mean_sq_norm(full, run_chunked(teacher, in, calib.batch_size, &mask)));
        mask[id] = 0;
    }
    std::vector<AdditivityEntry> out;
    for (std::size_t a = 0; a < layer_ids.size(); ++a)
        for (std::size_t b = a + 1; b < layer_ids.size(); ++b) {
            mask[layer_ids[a]] = mask[layer_ids[b]] = 1;
            AdditivityEntry e;
            e.layer_a = layer_ids[a];
            e.layer_b = layer_ids[b];
            e.joint = mean_sq_norm(full, run_chunked(teacher, in, calib.batch_size, &mask));
            e.sum_single = single[a] + single[b];
            e.ratio = e.sum_single > 0 ? e.joint / e.sum_single : 0.0;
            out.push_back(e);
            mask[layer_ids[a]] = mask[layer_ids[b]] = 0;
        }
    return out;
}

}  // namespace cftwin::compression
