#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "cftwin/tensor.hpp"

namespace cftwin {

// Deterministic random stream. Substreams are derived by hashing a seed with
// integer keys so that independent consumers (grid cells, iterations, samples)
// never share state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
        std::uint64_t h = mix(seed);
        for (std::uint64_t k : keys) h = mix(h ^ mix(k + 0x632be59bd9b4e019ULL));
        return h;
    }

    static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) { return Rng(derive(seed, keys)); }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    double exponential(double mean) { return std::exponential_distribution<double>(1.0 / mean)(engine_); }
    int poisson(double mean) { return mean <= 0.0 ? 0 : std::poisson_distribution<int>(mean)(engine_); }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
    std::uint64_t next() { return engine_(); }

    template <typename T>
    void fill_normal(Tensor<T>& t) {
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : t.span()) v = static_cast<T>(dist(engine_));
    }

    template <typename T>
    Tensor<T> normal_like(const Tensor<T>& ref) {
        Tensor<T> t(ref.n(), ref.c(), ref.h(), ref.w());
        fill_normal(t);
        return t;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace cftwin
