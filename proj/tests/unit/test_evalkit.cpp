#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"
#include "cftwin/error.hpp"
#include "cftwin/evalkit.hpp"

using namespace cftwin;
using namespace cftwin::evalkit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<double> random_map(Rng& rng, std::size_t n, double lo = 0.0, double hi = 255.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace

TEST_CASE("nmse and mse", "[metrics]") {
    Rng rng(1);
    const auto ref = random_map(rng, 1024);
    CHECK(nmse(ref, ref) == 0.0);
    CHECK(mse(ref, ref) == 0.0);
    const std::vector<double> zero(ref.size(), 0.0);
    CHECK(nmse(zero, ref) == 1.0);
    CHECK_THROWS_AS(nmse(ref, zero), DomainError);
    auto shifted = ref;
    for (auto& v : shifted) v += 3.0;
    CHECK_THAT(mse(shifted, ref), WithinRel(9.0, 1e-12));
    CHECK_THROWS_AS(mse(std::vector<double>{1.0}, ref), DomainError);

    for (int k = 0; k < 20; ++k) {
        const auto p = random_map(rng, 1024), r = random_map(rng, 1024);
        CHECK_THAT(nmse(p, r), WithinRel(oracle::nmse_long(p, r), 1e-12));
        CHECK_THAT(mse(p, r), WithinRel(oracle::two_pass_mse(p, r), 1e-12));
        // Scaling the error by c scales nmse by c².
        std::vector<double> scaled(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) scaled[i] = r[i] + 3.0 * (p[i] - r[i]);
        CHECK_THAT(nmse(scaled, r), WithinRel(9.0 * nmse(p, r), 1e-12));
    }
}

TEST_CASE("psnr", "[metrics]") {
    std::vector<double> ref(100, 0.0), off(100, 255.0), one(100, 1.0);
    CHECK_THAT(psnr(off, ref), WithinAbs(0.0, 1e-12));
    CHECK_THAT(psnr(one, ref), WithinAbs(48.1308, 1e-4));
    CHECK_THAT(psnr(one, ref), WithinAbs(20.0 * std::log10(255.0), 1e-12));
    CHECK(psnr(ref, ref) == 100.0);
    CHECK(psnr(ref, ref, 255.0, 80.0) == 80.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double e = 0.5; e < 100.0; e *= 1.7) {
        std::vector<double> p(100, e);
        const double v = psnr(p, ref);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("ssim", "[metrics]") {
    Rng rng(2);
    for (int k = 0; k < 20; ++k) {
        const auto a = random_map(rng, 32 * 32);
        CHECK(ssim_global(a, a) == 1.0);
        const auto b = random_map(rng, 32 * 32);
        const double s = ssim_global(a, b);
        CHECK(s >= -1.0);
        CHECK(s <= 1.0);
        CHECK_THAT(s, WithinAbs(oracle::ssim_long(a, b, 255.0), 1e-6));

        // Identical permutation of both inputs leaves global statistics unchanged.
        std::vector<std::size_t> perm(a.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        std::vector<double> pa(a.size()), pb(b.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            pa[i] = a[perm[i]];
            pb[i] = b[perm[i]];
        }
        CHECK_THAT(ssim_global(pa, pb), WithinAbs(s, 1e-12));
    }

    const auto ref = random_map(rng, 256, 50.0, 200.0);
    const double mean = std::accumulate(ref.begin(), ref.end(), 0.0) / ref.size();
    std::vector<double> anti(ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) anti[i] = -ref[i] + 2.0 * mean;
    CHECK(ssim_global(anti, ref) < 0.0);
    CHECK_THAT(ssim_global(anti, ref), WithinAbs(oracle::ssim_long(anti, ref, 255.0), 1e-6));

    const auto g = random_map(rng, 32 * 32);
    CHECK_THAT(ssim_gaussian(g, g, 32), WithinAbs(1.0, 1e-12));
    const auto h = random_map(rng, 32 * 32);
    const double sg = ssim_gaussian(g, h, 32);
    CHECK(sg < 1.0);
    CHECK(sg > -1.0);
    CHECK_THROWS_AS(ssim_gaussian(g, h, 8), DomainError);
    CHECK(ssim_variant_from_string("gaussian") == SsimVariant::gaussian);
}

TEST_CASE("aggregates", "[report]") {
    CHECK(aggregate({3, 1, 2}).median == 2.0);
    CHECK(aggregate({4, 1, 2, 3}).median == 2.5);
    CHECK(aggregate({4, 1, 2, 3}).mean == 2.5);
}

TEST_CASE("evaluate with oracle and interpolation baselines", "[evaluate]") {
    const auto pairs = fixture::simulated_pairs(6, 32, 4, 3);
    EvalOptions opts;
    opts.method = "oracle";
    const auto oracle_report = evaluate(pairs, oracle_reconstructor(), opts);
    REQUIRE(oracle_report.count() == 6);
    for (const auto& s : oracle_report.samples) {
        CHECK(s.nmse == 0.0);
        CHECK(s.ssim == 1.0);
        CHECK(s.psnr == opts.psnr_cap_db);
        CHECK(s.nmse_db == 0.0);
    }
    CHECK(oracle_report.psnr_capped == 6);
    CHECK(oracle_report.task == "x4 8^2 -> 32^2");

    opts.method = "nearest";
    const auto near = evaluate(pairs, interpolation_reconstructor(sampling::UpsampleMethod::nearest), opts);
    for (const auto& s : near.samples) {
        CHECK(s.nmse > 0.0);
        CHECK(std::isfinite(s.psnr));
    }

    // Aggregates equal recomputation from the per-sample lists.
    const auto j = to_json(near);
    for (const char* name : {"nmse", "mse", "psnr", "ssim", "nmse_db", "mse_db"}) {
        std::vector<double> v;
        for (const auto& row : j.at("samples")) v.push_back(row.at(name).get<double>());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        CHECK_THAT(j.at("aggregates").at(name).at("mean").get<double>(), WithinAbs(mean, 1e-12 * std::max(1.0, std::abs(mean))));
    }
    const auto back = report_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(j.at("count") == 6);

    const auto md = to_markdown({oracle_report, near});
    CHECK(md.find("| Task | Method |") == 0);
    CHECK(md.find("nearest") != std::string::npos);
    CHECK(std::count(md.begin(), md.end(), '\n') >= 4);

    for (int f : {2, 8, 16}) {
        opts.factor = f;
        const auto r = evaluate(pairs, interpolation_reconstructor(sampling::UpsampleMethod::bicubic), opts);
        CHECK(r.lr_resolution == 32 / f);
        for (const auto& s : r.samples) CHECK(std::isfinite(s.nmse));
    }
    opts.factor = 3;
    CHECK_THROWS_AS(evaluate(pairs, oracle_reconstructor(), opts), DomainError);
    opts.factor = 4;
    opts.max_samples = 2;
    CHECK(evaluate(pairs, oracle_reconstructor(), opts).count() == 2);
    opts.ssim_variant = SsimVariant::gaussian;
    CHECK(evaluate(pairs, oracle_reconstructor(), opts).samples[0].ssim == Catch::Approx(1.0).margin(1e-12));
}
