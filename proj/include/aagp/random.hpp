#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>

namespace aagp {

/// splitmix64 finalizer; used to derive independent seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `index` derived from `master`: splitmix64(master ^ splitmix64(index + 1)).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(master ^ splitmix64(index + 1));
}

/// Thin wrapper over mt19937_64. Every draw builds a fresh distribution object,
/// so the engine state alone determines the stream and can be checkpointed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    double normal(double mean, double sd) { return mean + sd * normal(); }
    double gamma(double shape, double scale = 1.0) { return std::gamma_distribution<double>(shape, scale)(engine_); }

    /// Inverse gamma with density proportional to x^{-shape-1} exp(-scale / x).
    double inverse_gamma(double shape, double scale) { return scale / gamma(shape, 1.0); }

    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd out(n);
        for (Eigen::Index i = 0; i < n; ++i) out(i) = normal();
        return out;
    }

    std::mt19937_64& engine() { return engine_; }

    [[nodiscard]] std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace aagp
