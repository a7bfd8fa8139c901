#include "cftwin/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "json_keys.hpp"

namespace cftwin::training {

void to_json(nlohmann::json& j, const ScheduleConfig& s) {
    j = {{"steps", s.steps}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& s) {
    detail::require_known_keys(j, {"steps", "beta_start", "beta_end"}, "schedule");
    ScheduleConfig d;
    s.steps = j.value("steps", d.steps);
    s.beta_start = j.value("beta_start", d.beta_start);
    s.beta_end = j.value("beta_end", d.beta_end);
}

void TrainConfig::validate() const {
    if (iterations < 0) throw DomainError("train: iterations must be >= 0");
    if (batch_size < 1) throw DomainError("train: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw DomainError("train: learning_rate must be > 0");
    if (!(ema_rate >= 0 && ema_rate < 1)) throw DomainError("train: ema_rate must lie in [0, 1)");
    if (ema_start_iter < 0) throw DomainError("train: ema_start_iter must be >= 0");
    if (dropout_rate < 0 || dropout_rate >= 1) throw DomainError("train: dropout_rate must lie in [0, 1)");
    if (checkpoint_every < 0) throw DomainError("train: checkpoint_every must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"iterations", c.iterations},     {"batch_size", c.batch_size},         {"learning_rate", c.learning_rate},
         {"ema_rate", c.ema_rate},         {"ema_start_iter", c.ema_start_iter}, {"dropout_rate", c.dropout_rate},
         {"seed", c.seed},                 {"checkpoint_every", c.checkpoint_every}, {"weighted_loss", c.weighted_loss},
         {"adam_beta1", c.adam_beta1},     {"adam_beta2", c.adam_beta2},         {"adam_eps", c.adam_eps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    detail::require_known_keys(j,
                               {"iterations", "batch_size", "learning_rate", "ema_rate", "ema_start_iter", "dropout_rate",
                                "seed", "checkpoint_every", "weighted_loss", "adam_beta1", "adam_beta2", "adam_eps"},
                               "train");
    TrainConfig d;
    c.iterations = j.value("iterations", d.iterations);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.ema_rate = j.value("ema_rate", d.ema_rate);
    c.ema_start_iter = j.value("ema_start_iter", d.ema_start_iter);
    c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
    c.seed = j.value("seed", d.seed);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.weighted_loss = j.value("weighted_loss", d.weighted_loss);
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
}

TrainingSet make_training_set(std::span<const cfgen::CFPair> pairs, sampling::UpsampleMethod method) {
    if (pairs.empty()) throw DomainError("training set: no pairs");
    const int res = pairs[0].hr.resolution, ch = pairs[0].hr.channels;
    const int n = static_cast<int>(pairs.size());
    TrainingSet set{Tensor<float>(n, ch, res, res), Tensor<float>(n, ch, res, res)};
    for (int i = 0; i < n; ++i) {
        const auto& p = pairs[i];
        if (p.hr.resolution != res || p.hr.channels != ch) throw DomainError("training set: pairs differ in shape");
        if (p.hr.normalization != cfgen::Normalization::minmax01) throw DomainError("training set: maps must be min-max normalised");
        const auto cond = sampling::to_model_space(sampling::upsample_condition(p.lr, res, method));
        const auto tgt = sampling::to_model_space(p.hr);
        std::copy_n(cond.data(), cond.size(), set.conditions.sample(i));
        std::copy_n(tgt.data(), tgt.size(), set.targets.sample(i));
    }
    return set;
}

Tensor<float> gather(const Tensor<float>& src, std::span<const int> indices) {
    Tensor<float> out(static_cast<int>(indices.size()), src.c(), src.h(), src.w());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= src.n()) throw DomainError("gather: index out of range");
        std::copy_n(src.sample(indices[i]), src.sample_size(), out.sample(static_cast<int>(i)));
    }
    return out;
}

template <typename T>
Adam<T>::Adam(const std::vector<nn::Param<T>*>& params, double b1, double b2, double e) : beta1(b1), beta2(b2), eps(e) {
    for (const auto* p : params) {
        m.emplace_back(p->size(), T(0));
        v.emplace_back(p->size(), T(0));
    }
}

template <typename T>
void Adam<T>::step(const std::vector<nn::Param<T>*>& params, double learning_rate) {
    if (params.size() != m.size()) throw DomainError("adam: parameter list does not match optimiser state");
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T step_size = static_cast<T>(learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T e = static_cast<T>(eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (p.size() != m[i].size()) throw DomainError("adam: parameter '" + p.name + "' changed size");
        T* mv = m[i].data();
        T* vv = v[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            const T g = p.grad[k];
            mv[k] = b1 * mv[k] + (T(1) - b1) * g;
            vv[k] = b2 * vv[k] + (T(1) - b2) * g * g;
            p.value[k] -= step_size * mv[k] / (std::sqrt(vv[k] * inv_c2) + e);
        }
    }
}

template class Adam<float>;
template class Adam<double>;

void ema_update(const std::vector<nn::Param<float>*>& ema, const std::vector<nn::Param<float>*>& params, double rate) {
    if (ema.size() != params.size()) throw DomainError("ema_update: parameter sets differ in length");
    const float r = static_cast<float>(rate), q = static_cast<float>(1.0 - rate);
    for (std::size_t i = 0; i < ema.size(); ++i) {
        if (ema[i]->size() != params[i]->size() || ema[i]->name != params[i]->name)
            throw DomainError("ema_update: parameter '" + params[i]->name + "' does not match");
        auto& e = ema[i]->value;
        const auto& p = params[i]->value;
        for (std::size_t k = 0; k < e.size(); ++k) e[k] = r * e[k] + q * p[k];
    }
}

double train_step(denoiser::Denoiser<float>& model, Adam<float>& opt, const Tensor<float>& conditions,
                  const Tensor<float>& targets, const diffusion::NoiseSchedule& sched, Rng& rng, double learning_rate,
                  const std::vector<double>* step_weights) {
    conditions.require_same_shape(targets, "train_step");
    const int b = targets.n();
    std::vector<int> ts(b);
    for (auto& t : ts) t = rng.uniform_int(1, sched.steps);
    Tensor<float> eps = rng.normal_like(targets);
    const Tensor<float> g_t = diffusion::q_sample(targets, std::span<const int>(ts), eps, sched);

    denoiser::ForwardCache<float> cache;
    denoiser::ForwardOptions<float> opts;
    opts.train = true;
    opts.rng = &rng;
    opts.cache = &cache;
    const Tensor<float> eps_hat = model.forward(conditions, g_t, ts, opts);

    const double n = static_cast<double>(eps.size());
    const std::size_t per = eps.sample_size();
    Tensor<float> d(eps.n(), eps.c(), eps.h(), eps.w());
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        const double w = step_weights ? (*step_weights)[ts[i] - 1] : 1.0;
        const float* e = eps.sample(i);
        const float* p = eps_hat.sample(i);
        float* g = d.sample(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < per; ++k) {
            const double diff = static_cast<double>(p[k]) - e[k];
            acc += diff * diff;
            g[k] = static_cast<float>(2.0 * w * diff / n);
        }
        loss += w * acc;
    }
    loss /= n;
    if (!std::isfinite(loss)) return loss;
    model.zero_grad();
    model.backward(cache, d);
    opt.step(model.parameters(), learning_rate);
    return loss;
}

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ULL;  // parameter initialisation substream key

std::vector<nn::Param<float>*> params_of(denoiser::Denoiser<float>& m) { return m.parameters(); }

void copy_values(denoiser::Denoiser<float>& dst, const denoiser::Denoiser<float>& src) {
    auto d = dst.parameters();
    auto s = src.parameters();
    for (std::size_t i = 0; i < d.size(); ++i) d[i]->value = s[i]->value;
}

nlohmann::json divergence_report(const TrainState& st, std::int64_t k, double loss) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto* p : st.model.parameters()) {
        double sq = 0.0;
        bool finite = true;
        for (float v : p->value) {
            sq += static_cast<double>(v) * v;
            finite = finite && std::isfinite(v);
        }
        params.push_back({{"name", p->name}, {"l2", std::sqrt(sq)}, {"finite", finite}});
    }
    nlohmann::json recent = nlohmann::json::array();
    for (std::size_t i = st.trace.size() > 20 ? st.trace.size() - 20 : 0; i < st.trace.size(); ++i)
        recent.push_back({st.trace[i].iteration, st.trace[i].loss});
    return {{"iteration", k}, {"loss", std::isnan(loss) ? "nan" : "inf"}, {"recent_losses", recent}, {"parameters", params}};
}

}  // namespace

TrainState init_state(const denoiser::DenoiserSpec& spec, const TrainConfig& cfg) {
    cfg.validate();
    auto s = spec;
    s.dropout_rate = cfg.dropout_rate;
    Rng rng = Rng::substream(cfg.seed, {kInitStream});
    TrainState st;
    st.model = denoiser::Denoiser<float>(s, rng);
    st.ema = st.model;
    st.adam = Adam<float>(st.model.parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    return st;
}

void train(TrainState& st, const TrainConfig& cfg, const TrainingSet& data, const diffusion::NoiseSchedule& sched,
           const std::function<void(const TrainState&)>& on_checkpoint) {
    cfg.validate();
    if (data.size() == 0) throw DomainError("train: empty dataset");
    const std::vector<double> weights = cfg.weighted_loss ? diffusion::elbo_loss_weights(sched) : std::vector<double>{};
    std::vector<int> idx(cfg.batch_size);
    for (std::int64_t k = st.iteration; k < cfg.iterations; ++k) {
        Rng rng = Rng::substream(cfg.seed, {static_cast<std::uint64_t>(k)});
        for (auto& i : idx) i = rng.uniform_int(0, data.size() - 1);
        const auto cond = gather(data.conditions, idx);
        const auto tgt = gather(data.targets, idx);
        const double loss = train_step(st.model, st.adam, cond, tgt, sched, rng, cfg.learning_rate,
                                       cfg.weighted_loss ? &weights : nullptr);
        if (!std::isfinite(loss))
            throw TrainingDivergence("training: non-finite loss at iteration " + std::to_string(k), divergence_report(st, k, loss));
        st.iteration = k + 1;
        if (st.iteration <= cfg.ema_start_iter) {
            copy_values(st.ema, st.model);
            st.ema_active = false;
        } else {
            ema_update(params_of(st.ema), params_of(st.model), cfg.ema_rate);
            st.ema_active = true;
        }
        st.trace.push_back({k, loss, st.ema_active});
        if (on_checkpoint && cfg.checkpoint_every > 0 && st.iteration % cfg.checkpoint_every == 0) on_checkpoint(st);
    }
}

checkpoint::Checkpoint to_checkpoint(const TrainState& st, const TrainConfig& cfg, const ScheduleConfig& sched) {
    checkpoint::Checkpoint ck;
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& r : st.trace) trace.push_back({r.iteration, r.loss, r.ema_active});
    ck.meta = {{"kind", "denoiser"},
               {"model", checkpoint::model_meta(st.model.spec(), st.model.removed_layers())},
               {"schedule", sched},
               {"train", cfg},
               {"iteration", st.iteration},
               {"ema_active", st.ema_active},
               {"adam_steps", st.adam.steps},
               {"loss_trace", trace}};
    for (auto& t : checkpoint::export_params(st.model, "raw")) ck.tensors.push_back(std::move(t));
    for (auto& t : checkpoint::export_params(st.ema, "ema")) ck.tensors.push_back(std::move(t));
    const auto params = st.model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        ck.tensors.push_back({"adam_m/" + params[i]->name, params[i]->shape, st.adam.m[i]});
    for (std::size_t i = 0; i < params.size(); ++i)
        ck.tensors.push_back({"adam_v/" + params[i]->name, params[i]->shape, st.adam.v[i]});
    return ck;
}

TrainState state_from_checkpoint(const checkpoint::Checkpoint& ck) {
    TrainState st;
    st.model = checkpoint::load_model(ck, "raw");
    st.ema = checkpoint::load_model(ck, "ema");
    TrainConfig cfg;
    try {
        cfg = ck.meta.at("train").get<TrainConfig>();
        st.iteration = ck.meta.at("iteration").get<std::int64_t>();
        st.ema_active = ck.meta.at("ema_active").get<bool>();
        st.adam = Adam<float>(st.model.parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        st.adam.steps = ck.meta.at("adam_steps").get<std::int64_t>();
        for (const auto& r : ck.meta.at("loss_trace"))
            st.trace.push_back({r.at(0).get<std::int64_t>(), r.at(1).get<double>(), r.at(2).get<bool>()});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, std::string("checkpoint: training state: ") + e.what());
    }
    const auto params = st.model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.adam.m[i] = ck.get("adam_m/" + params[i]->name).data;
        st.adam.v[i] = ck.get("adam_v/" + params[i]->name).data;
        if (st.adam.m[i].size() != params[i]->size() || st.adam.v[i].size() != params[i]->size())
            throw FormatError(FormatError::Kind::shape_mismatch, "checkpoint: optimiser state shape for '" + params[i]->name + "'");
    }
    return st;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace) {
    std::ofstream out(path);
    if (!out) throw FormatError(FormatError::Kind::io, "cannot write " + path.string());
    out << "iteration,loss,ema_active\n";
    char buf[64];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof buf, "%.17g", r.loss);
        out << r.iteration << ',' << buf << ',' << (r.ema_active ? 1 : 0) << '\n';
    }
    if (!out) throw FormatError(FormatError::Kind::io, "write failed for " + path.string());
}

double moving_average(const std::vector<double>& values, std::size_t end, std::size_t window) {
    if (end > values.size() || window == 0 || end < window) throw DomainError("moving_average: window out of range");
    double s = 0.0;
    for (std::size_t i = end - window; i < end; ++i) s += values[i];
    return s / static_cast<double>(window);
}

}  // namespace cftwin::training
