#include "cftwin/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <type_traits>

#include "cftwin/error.hpp"

namespace cftwin::denoiser {

// ---- spec

int DenoiserSpec::level_side(int level, int resolution_override) const {
    const int res = resolution_override > 0 ? resolution_override : resolution;
    return res >> level;
}

bool DenoiserSpec::attention_at(int level, int resolution_override) const {
    if (!attention_stages.empty())
        return std::find(attention_stages.begin(), attention_stages.end(), level) != attention_stages.end();
    return level_side(level, resolution_override) <= attention_max_side;
}

void DenoiserSpec::validate() const {
    if (base_channels < 1) throw DomainError("denoiser spec: base_channels must be >= 1");
    if (channel_multipliers.empty()) throw DomainError("denoiser spec: channel_multipliers must be nonempty");
    for (int m : channel_multipliers)
        if (m < 1) throw DomainError("denoiser spec: channel multipliers must be >= 1");
    if (blocks_per_stage < 1) throw DomainError("denoiser spec: blocks_per_stage must be >= 1");
    if (time_embed_dim < 0 || time_dim() % 2 != 0) throw DomainError("denoiser spec: time embedding width must be even");
    if (input_channels < 1) throw DomainError("denoiser spec: input_channels must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw DomainError("denoiser spec: dropout_rate must lie in [0, 1)");
    if (groups_for_norm < 1) throw DomainError("denoiser spec: groups_for_norm must be >= 1");
    if (attention_key_dim < 0) throw DomainError("denoiser spec: attention_key_dim must be >= 0");
    for (int s : attention_stages)
        if (s < 0 || s >= levels()) throw DomainError("denoiser spec: attention stage out of range");
    const int widest = base_channels * *std::max_element(channel_multipliers.begin(), channel_multipliers.end());
    if (widest > max_channels)
        throw DomainError("denoiser spec: widest stage has " + std::to_string(widest) + " channels, cap is " + std::to_string(max_channels));
    const int div = 1 << (levels() - 1);
    if (resolution < div || resolution % div != 0)
        throw DomainError("denoiser spec: resolution " + std::to_string(resolution) + " not divisible by " + std::to_string(div));
}

void to_json(nlohmann::json& j, const DenoiserSpec& s) {
    j = nlohmann::json{{"base_channels", s.base_channels},
                       {"channel_multipliers", s.channel_multipliers},
                       {"blocks_per_stage", s.blocks_per_stage},
                       {"time_embed_dim", s.time_embed_dim},
                       {"input_channels", s.input_channels},
                       {"dropout_rate", s.dropout_rate},
                       {"attention_stages", s.attention_stages},
                       {"attention_max_side", s.attention_max_side},
                       {"attention_key_dim", s.attention_key_dim},
                       {"groups_for_norm", s.groups_for_norm},
                       {"resolution", s.resolution},
                       {"max_channels", s.max_channels}};
}

void from_json(const nlohmann::json& j, DenoiserSpec& s) {
    static const char* known[] = {"base_channels",     "channel_multipliers", "blocks_per_stage", "time_embed_dim",
                                  "input_channels",    "dropout_rate",        "attention_stages", "attention_max_side",
                                  "attention_key_dim", "groups_for_norm",     "resolution",       "max_channels"};
    for (const auto& [key, _] : j.items())
        if (std::find(std::begin(known), std::end(known), key) == std::end(known))
            throw DomainError("denoiser spec: unknown key '" + key + "'");
    DenoiserSpec d;
    s.base_channels = j.value("base_channels", d.base_channels);
    s.channel_multipliers = j.value("channel_multipliers", d.channel_multipliers);
    s.blocks_per_stage = j.value("blocks_per_stage", d.blocks_per_stage);
    s.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
    s.input_channels = j.value("input_channels", d.input_channels);
    s.dropout_rate = j.value("dropout_rate", d.dropout_rate);
    s.attention_stages = j.value("attention_stages", d.attention_stages);
    s.attention_max_side = j.value("attention_max_side", d.attention_max_side);
    s.attention_key_dim = j.value("attention_key_dim", d.attention_key_dim);
    s.groups_for_norm = j.value("groups_for_norm", d.groups_for_norm);
    s.resolution = j.value("resolution", d.resolution);
    s.max_channels = j.value("max_channels", d.max_channels);
}

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::res_plus: return "res_plus";
        case LayerKind::attention: return "attention";
        case LayerKind::downsample: return "downsample";
        case LayerKind::upsample: return "upsample";
        case LayerKind::head: return "head";
        case LayerKind::tail: return "tail";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& s) {
    for (LayerKind k : {LayerKind::res_plus, LayerKind::attention, LayerKind::downsample, LayerKind::upsample,
                        LayerKind::head, LayerKind::tail})
        if (to_string(k) == s) return k;
    throw DomainError("unknown layer kind '" + s + "'");
}

void to_json(nlohmann::json& j, const LayerRecord& r) {
    j = nlohmann::json{{"id", r.id},           {"stage", r.stage},     {"level", r.level},
                       {"kind", to_string(r.kind)}, {"c_in", r.c_in},   {"c_out", r.c_out},
                       {"concat_channels", r.concat_channels}, {"side_in", r.side_in}, {"side_out", r.side_out},
                       {"params", r.params},   {"flops", r.flops},     {"prunable", r.prunable},
                       {"removed", r.removed}};
}

// ---- layout

namespace {

using i64 = std::int64_t;

i64 conv_params(i64 ci, i64 co, i64 k) { return co * ci * k * k + co; }
i64 conv_flops(i64 ci, i64 co, i64 k, i64 side_out) { return 2 * co * ci * k * k * side_out * side_out; }

i64 res_params(i64 ci, i64 co, i64 ct) {
    i64 p = 2 * ci + conv_params(ci, co, 3) + (ct * co + co) + (co * co + co) + 2 * co + conv_params(co, co, 3);
    if (ci != co) p += conv_params(ci, co, 1);
    return p;
}

i64 res_flops(i64 ci, i64 co, i64 ct, i64 side) {
    i64 f = conv_flops(ci, co, 3, side) + 2 * ct * co + 2 * co * co + conv_flops(co, co, 3, side);
    if (ci != co) f += conv_flops(ci, co, 1, side);
    return f;
}

i64 attn_params(i64 c, i64 dk) { return 2 * c + 2 * c * dk + c * c; }

i64 attn_flops(i64 c, i64 dk, i64 side) {
    const i64 p = side * side;
    return 2 * p * c * dk * 2 + 2 * p * c * c + 2 * p * p * dk + 2 * p * p * c;
}

}  // namespace

LayerCatalog build_layout(const DenoiserSpec& spec, int input_resolution) {
    spec.validate();
    const int res = input_resolution > 0 ? input_resolution : spec.resolution;
    const int div = 1 << (spec.levels() - 1);
    if (res < div || res % div != 0)
        throw DomainError("denoiser: spatial size " + std::to_string(res) + " not divisible by " + std::to_string(div));
    const i64 ct = spec.time_dim();
    auto key_dim = [&](int c) { return spec.attention_key_dim > 0 ? spec.attention_key_dim : c; };

    LayerCatalog cat;
    std::vector<std::pair<int, int>> skips;  // (slot, channels)
    int next_slot = 0;
    auto add = [&](LayerRecord r) -> LayerRecord& {
        r.id = static_cast<int>(cat.size());
        cat.push_back(r);
        return cat.back();
    };
    auto push = [&](LayerRecord& r) {
        r.push_index = next_slot++;
        skips.emplace_back(r.push_index, r.c_out);
    };
    auto res_block = [&](const std::string& stage, int level, int ci, int co, int concat, int side) -> LayerRecord& {
        LayerRecord r;
        r.stage = stage;
        r.level = level;
        r.kind = LayerKind::res_plus;
        r.c_in = ci;
        r.c_out = co;
        r.concat_channels = concat;
        r.side_in = r.side_out = side;
        r.params = res_params(ci, co, ct);
        r.flops = res_flops(ci, co, ct, side);
        // A concatenating block is removable when its main input already has c_out channels; the skip is then dropped.
        r.prunable = ci - concat == co;
        return add(r);
    };
    auto attn_block = [&](const std::string& stage, int level, int c, int side) -> LayerRecord& {
        LayerRecord r;
        r.stage = stage;
        r.level = level;
        r.kind = LayerKind::attention;
        r.c_in = r.c_out = c;
        r.side_in = r.side_out = side;
        r.params = attn_params(c, key_dim(c));
        r.flops = attn_flops(c, key_dim(c), side);
        r.prunable = true;
        return add(r);
    };

    int side = res;
    int ch = spec.base_channels;
    {
        LayerRecord r;
        r.stage = "head";
        r.kind = LayerKind::head;
        r.c_in = 2 * spec.input_channels;
        r.c_out = ch;
        r.side_in = r.side_out = side;
        r.params = conv_params(r.c_in, r.c_out, 3);
        r.flops = conv_flops(r.c_in, r.c_out, 3, side);
        add(r);
    }
    for (int l = 0; l < spec.levels(); ++l) {
        const int c = spec.level_channels(l);
        const bool attn = spec.attention_at(l, res);
        for (int b = 0; b < spec.blocks_per_stage; ++b) {
            res_block("dn", l, ch, c, 0, side);
            ch = c;
            if (attn) attn_block("dn", l, c, side);
            push(cat.back());
        }
        if (l + 1 < spec.levels()) {
            LayerRecord r;
            r.stage = "dn";
            r.level = l;
            r.kind = LayerKind::downsample;
            r.c_in = r.c_out = c;
            r.side_in = side;
            r.side_out = side / 2;
            r.params = conv_params(c, c, 3);
            r.flops = conv_flops(c, c, 3, side / 2);
            add(r);
            side /= 2;
        }
    }
    cat.back().tap_index = 0;

    const int deepest = spec.levels() - 1;
    res_block("mid", deepest, ch, ch, 0, side);
    attn_block("mid", deepest, ch, side);
    res_block("mid", deepest, ch, ch, 0, side).tap_index = 1;

    for (int l = deepest; l >= 0; --l) {
        const int c = spec.level_channels(l);
        const bool attn = spec.attention_at(l, res);
        for (int b = 0; b < spec.blocks_per_stage; ++b) {
            const auto [slot, sc] = skips.back();
            skips.pop_back();
            res_block("up", l, ch + sc, c, sc, side).pop_index = slot;
            ch = c;
            if (attn) attn_block("up", l, c, side);
        }
        if (l > 0) {
            LayerRecord r;
            r.stage = "up";
            r.level = l;
            r.kind = LayerKind::upsample;
            r.c_in = r.c_out = c;
            r.side_in = side;
            r.side_out = side * 2;
            r.params = conv_params(c, c, 3);
            r.flops = conv_flops(c, c, 3, side * 2);
            add(r);
            side *= 2;
        }
    }
    cat.back().tap_index = 2;
    {
        LayerRecord r;
        r.stage = "tail";
        r.kind = LayerKind::tail;
        r.c_in = ch;
        r.c_out = spec.input_channels;
        r.side_in = r.side_out = side;
        r.params = 2 * ch + conv_params(ch, spec.input_channels, 3);
        r.flops = conv_flops(ch, spec.input_channels, 3, side);
        add(r);
    }
    return cat;
}

Complexity count_params_flops(const DenoiserSpec& spec, int input_resolution) {
    Complexity c;
    for (const auto& r : build_layout(spec, input_resolution)) {
        c.params += r.params;
        c.flops += r.flops;
    }
    return c;
}

// ---- time embedding and attention reference

std::vector<double> time_embedding(double t, int c_time) {
    if (c_time < 2 || c_time % 2 != 0) throw DomainError("time_embedding: width must be even and >= 2");
    if (t < 0) throw DomainError("time_embedding: t must be >= 0");
    std::vector<double> out(c_time);
    for (int j = 0; j < c_time / 2; ++j) {
        const double w = std::pow(10000.0, -2.0 * j / c_time);
        out[2 * j] = std::sin(w * t);
        out[2 * j + 1] = std::cos(w * t);
    }
    return out;
}

Eigen::MatrixXd time_shift_matrix(double dt, int c_time) {
    if (c_time < 2 || c_time % 2 != 0) throw DomainError("time_shift_matrix: width must be even and >= 2");
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(c_time, c_time);
    for (int j = 0; j < c_time / 2; ++j) {
        const double a = std::pow(10000.0, -2.0 * j / c_time) * dt;
        m(2 * j, 2 * j) = std::cos(a);
        m(2 * j, 2 * j + 1) = std::sin(a);
        m(2 * j + 1, 2 * j) = -std::sin(a);
        m(2 * j + 1, 2 * j + 1) = std::cos(a);
    }
    return m;
}

AttentionResult self_attention_forward(const Eigen::MatrixXd& z, const Eigen::MatrixXd& wq, const Eigen::MatrixXd& wk,
                                       const Eigen::MatrixXd& wv) {
    if (wq.rows() != z.cols() || wk.rows() != z.cols() || wv.rows() != z.cols())
        throw DomainError("self_attention_forward: projection rows must equal the feature width");
    if (wq.cols() != wk.cols()) throw DomainError("self_attention_forward: query and key widths differ");
    // Tokens are processed in lexicographic order of their features and
    // scattered back, so every sum runs in the same order for any permutation
    // of the input rows and equivariance holds bit for bit.
    const Eigen::Index n = z.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index c = 0; c < z.cols(); ++c)
            if (z(a, c) != z(b, c)) return z(a, c) < z(b, c);
        return false;
    });
    Eigen::MatrixXd zs(n, z.cols());
    for (Eigen::Index k = 0; k < n; ++k) zs.row(k) = z.row(order[k]);

    Eigen::MatrixXd a = (zs * wq) * (zs * wk).transpose() / std::sqrt(static_cast<double>(wq.cols()));
    for (Eigen::Index i = 0; i < n; ++i) {
        auto row = a.row(i);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
    }
    const Eigen::MatrixXd out = a * (zs * wv);

    AttentionResult r;
    r.attention.resize(n, n);
    r.output.resize(n, wv.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        r.output.row(order[i]) = out.row(i);
        for (Eigen::Index j = 0; j < n; ++j) r.attention(order[i], order[j]) = a(i, j);
    }
    return r;
}

// ---- blocks

namespace {

template <typename T>
void add_channel_bias(Tensor<T>& h, const Tensor<T>& m) {
    const std::size_t plane = h.plane_size();
    for (int n = 0; n < h.n(); ++n)
        for (int c = 0; c < h.c(); ++c) {
            T* p = h.sample(n) + c * plane;
            const T b = m[static_cast<std::size_t>(n) * h.c() + c];
            for (std::size_t k = 0; k < plane; ++k) p[k] += b;
        }
}

template <typename T>
Tensor<T> channel_sums(const Tensor<T>& dh) {
    Tensor<T> out(dh.n(), dh.c(), 1, 1);
    const std::size_t plane = dh.plane_size();
    for (int n = 0; n < dh.n(); ++n)
        for (int c = 0; c < dh.c(); ++c) {
            const T* p = dh.sample(n) + c * plane;
            T s = 0;
            for (std::size_t k = 0; k < plane; ++k) s += p[k];
            out[static_cast<std::size_t>(n) * dh.c() + c] = s;
        }
    return out;
}

template <typename T>
Tensor<T> masked(const Tensor<T>& g, const Tensor<T>& mask) {
    return mask.empty() ? g : nn::apply_mask(g, mask);
}

}  // namespace

template <typename T>
ResPlusBlock<T>::ResPlusBlock(const std::string& name, int ci, int co, int c_time, int max_groups, double p, Rng& rng)
    : c_in(ci), c_out(co), dropout(p),
      gn1(name + ".gn1", ci, max_groups),
      conv1(name + ".conv1", ci, co, 3, 1, rng),
      fc1(name + ".time_fc1", c_time, co, rng),
      fc2(name + ".time_fc2", co, co, rng),
      gn2(name + ".gn2", co, max_groups),
      conv2(name + ".conv2", co, co, 3, 1, rng),
      has_shortcut(ci != co) {
    if (has_shortcut) shortcut = nn::Conv2d<T>(name + ".shortcut", ci, co, 1, 1, rng);
}

template <typename T>
Tensor<T> ResPlusBlock<T>::forward(const Tensor<T>& x, const Tensor<T>& temb, bool train, Rng* rng,
                                   LayerCache<T>* cache) const {
    if (x.c() != c_in)
        throw DomainError("res_plus " + conv1.weight.name + ": expected " + std::to_string(c_in) + " channels, got " + x.shape_string());
    if (temb.n() != x.n() || static_cast<int>(temb.sample_size()) != fc1.in)
        throw DomainError("res_plus: time embedding shape " + temb.shape_string());
    const bool drop = train && dropout > 0.0;
    if (drop && rng == nullptr) throw DomainError("res_plus: training mode with dropout needs a random stream");

    Tensor<T> a1 = gn1.forward(x, cache ? &cache->gn1 : nullptr);
    Tensor<T> s1 = nn::swish(a1);
    Tensor<T> mask1 = drop ? nn::dropout_mask(s1, dropout, *rng) : Tensor<T>();
    Tensor<T> d1 = nn::apply_mask(s1, mask1);
    Tensor<T> h = conv1.forward(d1);
    Tensor<T> f1 = fc1.forward(temb);
    Tensor<T> g = nn::swish(f1);
    add_channel_bias(h, fc2.forward(g));
    Tensor<T> a2 = gn2.forward(h, cache ? &cache->gn2 : nullptr);
    Tensor<T> s2 = nn::swish(a2);
    Tensor<T> mask2 = drop ? nn::dropout_mask(s2, dropout, *rng) : Tensor<T>();
    Tensor<T> d2 = nn::apply_mask(s2, mask2);
    Tensor<T> out = conv2.forward(d2);
    if (has_shortcut)
        out += shortcut.forward(x);
    else
        out += x;
    if (cache) {
        cache->x = x;
        cache->a1 = std::move(a1);
        cache->mask1 = std::move(mask1);
        cache->d1 = std::move(d1);
        cache->f1 = std::move(f1);
        cache->g = std::move(g);
        cache->h = std::move(h);
        cache->a2 = std::move(a2);
        cache->mask2 = std::move(mask2);
        cache->d2 = std::move(d2);
    }
    return out;
}

template <typename T>
Tensor<T> ResPlusBlock<T>::backward(const LayerCache<T>& c, const Tensor<T>& temb, const Tensor<T>& dy) {
    Tensor<T> dx = has_shortcut ? shortcut.backward(c.x, dy) : dy;
    Tensor<T> dd2 = conv2.backward(c.d2, dy);
    Tensor<T> da2 = nn::swish_backward(c.a2, masked(dd2, c.mask2));
    Tensor<T> dh = gn2.backward(c.h, c.gn2, da2);
    Tensor<T> dm = channel_sums(dh);
    Tensor<T> dg = fc2.backward(c.g, dm);
    fc1.backward(temb, nn::swish_backward(c.f1, dg));
    Tensor<T> dd1 = conv1.backward(c.d1, dh);
    Tensor<T> da1 = nn::swish_backward(c.a1, masked(dd1, c.mask1));
    dx += gn1.backward(c.x, c.gn1, da1);
    return dx;
}

template <typename T>
std::vector<nn::Param<T>*> ResPlusBlock<T>::params() {
    std::vector<nn::Param<T>*> p{&gn1.gamma, &gn1.beta, &conv1.weight, &conv1.bias, &fc1.weight, &fc1.bias,
                                 &fc2.weight, &fc2.bias, &gn2.gamma, &gn2.beta, &conv2.weight, &conv2.bias};
    if (has_shortcut) {
        p.push_back(&shortcut.weight);
        p.push_back(&shortcut.bias);
    }
    return p;
}

template <typename T>
Tensor<T> res_plus_forward(const ResPlusBlock<T>& block, const Tensor<T>& x, std::span<const double> gamma_t) {
    Tensor<T> temb(x.n(), static_cast<int>(gamma_t.size()), 1, 1);
    for (int n = 0; n < x.n(); ++n)
        for (std::size_t k = 0; k < gamma_t.size(); ++k) temb[n * gamma_t.size() + k] = static_cast<T>(gamma_t[k]);
    return block.forward(x, temb, false, nullptr, nullptr);
}

template <typename T>
AttentionBlock<T>::AttentionBlock(const std::string& name, int channels, int key_dim, int max_groups, Rng& rng)
    : gn(name + ".gn", channels, max_groups), attn(name + ".attn", channels, key_dim, rng) {}

template <typename T>
Tensor<T> AttentionBlock<T>::forward(const Tensor<T>& x, LayerCache<T>* cache) const {
    Tensor<T> z = gn.forward(x, cache ? &cache->gn1 : nullptr);
    Tensor<T> out = attn.forward(z, cache ? &cache->attn : nullptr);
    out += x;
    if (cache) {
        cache->x = x;
        cache->a1 = std::move(z);
    }
    return out;
}

template <typename T>
Tensor<T> AttentionBlock<T>::backward(const LayerCache<T>& c, const Tensor<T>& dy) {
    Tensor<T> dz = attn.backward(c.a1, c.attn, dy);
    Tensor<T> dx = gn.backward(c.x, c.gn1, dz);
    dx += dy;
    return dx;
}

template <typename T>
std::vector<nn::Param<T>*> AttentionBlock<T>::params() {
    return {&gn.gamma, &gn.beta, &attn.wq, &attn.wk, &attn.wv};
}

template <typename T>
Tensor<T> ConvLayer<T>::forward(const Tensor<T>& x, LayerCache<T>* cache) const {
    Tensor<T> in = upsample ? nn::upsample_nearest2(x) : x;
    Tensor<T> out = conv.forward(in);
    if (cache) cache->x = std::move(in);
    return out;
}

template <typename T>
Tensor<T> ConvLayer<T>::backward(const LayerCache<T>& c, const Tensor<T>& dy) {
    Tensor<T> dx = conv.backward(c.x, dy);
    return upsample ? nn::upsample_nearest2_backward(dx) : dx;
}

template <typename T>
std::vector<nn::Param<T>*> ConvLayer<T>::params() {
    return {&conv.weight, &conv.bias};
}

template <typename T>
Tensor<T> TailLayer<T>::forward(const Tensor<T>& x, LayerCache<T>* cache) const {
    Tensor<T> a = gn.forward(x, cache ? &cache->gn1 : nullptr);
    Tensor<T> s = nn::swish(a);
    Tensor<T> out = conv.forward(s);
    if (cache) {
        cache->x = x;
        cache->a1 = std::move(a);
        cache->d1 = std::move(s);
    }
    return out;
}

template <typename T>
Tensor<T> TailLayer<T>::backward(const LayerCache<T>& c, const Tensor<T>& dy) {
    Tensor<T> ds = conv.backward(c.d1, dy);
    return gn.backward(c.x, c.gn1, nn::swish_backward(c.a1, ds));
}

template <typename T>
std::vector<nn::Param<T>*> TailLayer<T>::params() {
    return {&gn.gamma, &gn.beta, &conv.weight, &conv.bias};
}

// ---- model

template <typename T>
Denoiser<T>::Denoiser(const DenoiserSpec& spec, Rng& rng) : spec_(spec), catalog_(build_layout(spec)) {
    const int ct = spec_.time_dim();
    const int groups = spec_.groups_for_norm;
    for (const auto& r : catalog_) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "l%03d.%s", r.id, to_string(r.kind).c_str());
        const std::string name(buf);
        switch (r.kind) {
            case LayerKind::res_plus:
                layers_.emplace_back(ResPlusBlock<T>(name, r.c_in, r.c_out, ct, groups, spec_.dropout_rate, rng));
                break;
            case LayerKind::attention: {
                const int kd = spec_.attention_key_dim > 0 ? spec_.attention_key_dim : r.c_in;
                layers_.emplace_back(AttentionBlock<T>(name, r.c_in, kd, groups, rng));
                break;
            }
            case LayerKind::downsample:
                layers_.emplace_back(ConvLayer<T>{nn::Conv2d<T>(name + ".conv", r.c_in, r.c_out, 3, 2, rng), false});
                break;
            case LayerKind::upsample:
                layers_.emplace_back(ConvLayer<T>{nn::Conv2d<T>(name + ".conv", r.c_in, r.c_out, 3, 1, rng), true});
                break;
            case LayerKind::head:
                layers_.emplace_back(ConvLayer<T>{nn::Conv2d<T>(name + ".conv", r.c_in, r.c_out, 3, 1, rng), false});
                break;
            case LayerKind::tail:
                layers_.emplace_back(TailLayer<T>{nn::GroupNorm<T>(name + ".gn", r.c_in, groups),
                                                  nn::Conv2d<T>(name + ".conv", r.c_in, r.c_out, 3, 1, rng, true)});
                break;
        }
        std::int64_t count = 0;
        for (auto* p : std::visit([](auto& l) { return l.params(); }, layers_.back())) count += p->size();
        if (count != r.params) throw std::logic_error("denoiser: layout parameter count disagrees with built layer " + name);
        skip_slots_ = std::max(skip_slots_, r.push_index + 1);
    }
}

template <typename T>
std::int64_t Denoiser<T>::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& r : catalog_) n += r.params;
    return n;
}

template <typename T>
Tensor<T> Denoiser<T>::forward(const Tensor<T>& condition, const Tensor<T>& g_t, std::span<const int> t,
                               const ForwardOptions<T>& opts) const {
    condition.require_same_shape(g_t, "denoiser forward (condition vs g_t)");
    if (g_t.c() != spec_.input_channels)
        throw DomainError("denoiser forward: expected " + std::to_string(spec_.input_channels) + " channels, got " + g_t.shape_string());
    if (g_t.h() != spec_.resolution || g_t.w() != spec_.resolution)
        throw DomainError("denoiser forward: model resolution is " + std::to_string(spec_.resolution) + ", input " + g_t.shape_string());
    if (t.size() != static_cast<std::size_t>(g_t.n())) throw DomainError("denoiser forward: one step per batch entry required");
    if (opts.bypass && opts.bypass->size() != catalog_.size()) throw DomainError("denoiser forward: bypass mask size");

    const int ct = spec_.time_dim();
    Tensor<T> temb(g_t.n(), ct, 1, 1);
    for (int n = 0; n < g_t.n(); ++n) {
        const auto e = time_embedding(static_cast<double>(t[n]), ct);
        for (int k = 0; k < ct; ++k) temb[static_cast<std::size_t>(n) * ct + k] = static_cast<T>(e[k]);
    }
    if (opts.cache) {
        opts.cache->layers.assign(catalog_.size(), LayerCache<T>{});
        opts.cache->ran.assign(catalog_.size(), 0);
        opts.cache->temb = temb;
    }
    if (opts.taps) opts.taps->assign(kFeatureTaps, Tensor<T>{});

    std::vector<Tensor<T>> skips(skip_slots_);
    Tensor<T> h = concat_channels(condition, g_t);
    for (const auto& r : catalog_) {
        const bool skip = r.removed || (opts.bypass && (*opts.bypass)[r.id]);
        if (r.pop_index >= 0) {
            if (!skip) h = concat_channels(h, skips[r.pop_index]);
            skips[r.pop_index] = Tensor<T>{};
        }
        if (!skip) {
            LayerCache<T>* lc = opts.cache ? &opts.cache->layers[r.id] : nullptr;
            h = std::visit(
                [&](const auto& layer) -> Tensor<T> {
                    using L = std::decay_t<decltype(layer)>;
                    if constexpr (std::is_same_v<L, ResPlusBlock<T>>)
                        return layer.forward(h, temb, opts.train, opts.rng, lc);
                    else
                        return layer.forward(h, lc);
                },
                layers_[r.id]);
            if (opts.cache) opts.cache->ran[r.id] = 1;
        }
        if (r.push_index >= 0) skips[r.push_index] = h;
        if (r.tap_index >= 0 && opts.taps) (*opts.taps)[r.tap_index] = h;
    }
    return h;
}

template <typename T>
void Denoiser<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& d_eps, const std::vector<Tensor<T>>* d_taps) {
    if (cache.layers.size() != catalog_.size()) throw DomainError("denoiser backward: cache does not match the model");
    std::vector<Tensor<T>> skip_grads(skip_slots_);
    Tensor<T> g = d_eps;
    for (int i = static_cast<int>(catalog_.size()) - 1; i >= 0; --i) {
        const auto& r = catalog_[i];
        if (r.tap_index >= 0 && d_taps && r.tap_index < static_cast<int>(d_taps->size()) && !(*d_taps)[r.tap_index].empty())
            g += (*d_taps)[r.tap_index];
        if (r.push_index >= 0 && !skip_grads[r.push_index].empty()) {
            g += skip_grads[r.push_index];
            skip_grads[r.push_index] = Tensor<T>{};
        }
        if (cache.ran[i]) {
            g = std::visit(
                [&](auto& layer) -> Tensor<T> {
                    using L = std::decay_t<decltype(layer)>;
                    if constexpr (std::is_same_v<L, ResPlusBlock<T>>)
                        return layer.backward(cache.layers[i], cache.temb, g);
                    else
                        return layer.backward(cache.layers[i], g);
                },
                layers_[i]);
        }
        if (r.pop_index >= 0 && cache.ran[i]) {
            Tensor<T> main, skip;
            split_channels(g, r.c_in - r.concat_channels, main, skip);
            g = std::move(main);
            skip_grads[r.pop_index] = std::move(skip);
        }
    }
}

template <typename T>
void Denoiser<T>::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
std::vector<nn::Param<T>*> Denoiser<T>::parameters() {
    std::vector<nn::Param<T>*> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (catalog_[i].removed) continue;
        for (auto* p : std::visit([](auto& l) { return l.params(); }, layers_[i])) out.push_back(p);
    }
    return out;
}

template <typename T>
std::vector<const nn::Param<T>*> Denoiser<T>::parameters() const {
    auto ps = const_cast<Denoiser<T>*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

template <typename T>
void Denoiser<T>::remove_layer(int id) {
    if (id < 0 || id >= static_cast<int>(catalog_.size())) throw DomainError("remove_layer: no layer " + std::to_string(id));
    auto& r = catalog_[id];
    if (!r.prunable) throw DomainError("remove_layer: layer " + std::to_string(id) + " is not prunable");
    if (r.removed) throw DomainError("remove_layer: layer " + std::to_string(id) + " already removed");
    for (auto* p : std::visit([](auto& l) { return l.params(); }, layers_[id])) p->release();
    r.removed = true;
    r.params = 0;
    r.flops = 0;
}

template <typename T>
std::vector<int> Denoiser<T>::removed_layers() const {
    std::vector<int> out;
    for (const auto& r : catalog_)
        if (r.removed) out.push_back(r.id);
    return out;
}

template struct ResPlusBlock<float>;
template struct ResPlusBlock<double>;
template struct AttentionBlock<float>;
template struct AttentionBlock<double>;
template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct TailLayer<float>;
template struct TailLayer<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template Tensor<float> res_plus_forward(const ResPlusBlock<float>&, const Tensor<float>&, std::span<const double>);
template Tensor<double> res_plus_forward(const ResPlusBlock<double>&, const Tensor<double>&, std::span<const double>);

}  // namespace cftwin::denoiser
