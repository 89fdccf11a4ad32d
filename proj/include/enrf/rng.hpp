#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <Eigen/Core>

#include "enrf/errors.hpp"

namespace enrf {

/// splitmix64 mixing step; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a hash of a label, for content-derived stream seeds.
inline constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seeded random stream. All distributions are implemented here (not via
/// std::*_distribution, whose output is implementation-defined) so a fixed
/// seed reproduces identical draws everywhere. Streams are never shared
/// between tasks; derive one per task with derive()/split().
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

    /// Fold a list of identifiers into a stream seed.
    static std::uint64_t derive(std::initializer_list<std::uint64_t> parts) {
        std::uint64_t h = 0x8c96b2d1f0e4a395ULL;
        for (std::uint64_t p : parts) h = splitmix64(h ^ p);
        return h;
    }

    /// Independent child stream; deterministic, does not consume from this one.
    RngStream split(std::uint64_t salt) const { return RngStream(derive({seed_, salt})); }

    std::uint64_t next_raw() { return gen_(); }

    /// Uniform draw on the open interval (0, 1).
    double uniform() {
        return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1p-53;
    }

    /// Standard normal via Box-Muller, with the spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Gamma(shape, rate) via Marsaglia-Tsang squeeze, boosted for shape < 1.
    double gamma(double shape, double rate) {
        if (!(shape > 0.0) || !(rate > 0.0))
            throw ArgumentError("gamma: shape and rate must be positive");
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
        }
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    void fill_normal(Eigen::Ref<Eigen::MatrixXd> m) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal();
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace enrf
