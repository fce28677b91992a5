#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace gapspin {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Bad user input: malformed config, invalid parameters, unparseable files.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Solver breakdown: non-convergence, blow-up, singular systems.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// A structural property that must hold was violated (bad mesh, failed check).
class InvariantError : public std::runtime_error {
public:
    explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

// Process exit codes used by the CLI.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitNumerical = 3,
    kExitInvariant = 4,
};

// Deterministic 64-bit generator (splitmix64). Used for seeded start vectors
// and test fields so runs are reproducible bit-for-bit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [-1, 1).
    double symmetric() { return 2.0 * uniform() - 1.0; }

    VecX vector(Eigen::Index n) {
        VecX v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = symmetric();
        return v;
    }

    Vec3 vec3() {
        Vec3 v;
        for (int i = 0; i < 3; ++i) v[i] = symmetric();
        return v;
    }

private:
    std::uint64_t state_;
};

// Pairwise (binary tree) reduction: deterministic order independent of any
// chunking, and more accurate than a running sum.
inline double pairwise_sum(std::vector<double>& terms) {
    if (terms.empty()) return 0.0;
    std::size_t n = terms.size();
    while (n > 1) {
        std::size_t half = n / 2;
        for (std::size_t i = 0; i < half; ++i) terms[i] = terms[2 * i] + terms[2 * i + 1];
        if (n % 2 == 1) {
            terms[half] = terms[n - 1];
            n = half + 1;
        } else {
            n = half;
        }
    }
    return terms[0];
}

// Shortest decimal form that round-trips a double exactly. Negative zero
// prints as "0" so zero-valued monitors are sign-stable in reports.
inline std::string fmt_g17(double x) {
    if (x == 0.0) x = 0.0;
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline Mat3 skew(const Vec3& x) {
    Mat3 m;
    m << 0.0, -x.z(), x.y(),
         x.z(), 0.0, -x.x(),
         -x.y(), x.x(), 0.0;
    return m;
}

}  // namespace gapspin
