#pragma once

// Deterministic numerical primitives shared by every other module.
//
// All arithmetic is double precision and every reduction accumulates
// left-to-right in index order, so results are bit-reproducible run to run.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace stabguard {

using Vec64 = std::vector<double>;

/// Flat model parameters; the state the controller supervises.
using ParameterVector = Vec64;

/// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec64 data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

/// Counter-based splittable random stream.
///
/// The n-th output is a pure function of (seed, stream_id, n): a SplitMix64
/// finalizer applied to a keyed counter. Nothing here touches the standard
/// library distributions, whose output differs between implementations.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double next_uniform();
    /// Uniform integer in [0, bound); bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound);
    /// Standard normal via Box-Muller (one output per two uniforms; no caching).
    double next_normal();

    /// Child stream keyed by `child`; does not advance this stream.
    RngStream split(std::uint64_t child) const;

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// SplitMix64 finalizer. Bijective on 64-bit words.
std::uint64_t mix64(std::uint64_t x);

// Elementwise / reduction operations. All throw DimensionError on length
// mismatch and leave their inputs untouched.

Vec64 axpy(double a, std::span<const double> x, std::span<const double> y);
void axpy_inplace(double a, std::span<const double> x, std::span<double> y);
Vec64 scaled(double a, std::span<const double> x);
double dot(std::span<const double> x, std::span<const double> y);
double l2_norm(std::span<const double> x);

/// `n` samples from N(mean, std^2). Throws ParameterError when std < 0.
Vec64 gaussian(RngStream& rng, std::size_t n, double mean, double std);

Vec64 matvec(const Matrix& m, std::span<const double> x);

/// Max-subtracted softmax.
Vec64 softmax(std::span<const double> x);

/// log(sum(exp(x))) computed with max subtraction. Empty input gives -inf.
double log_sum_exp(std::span<const double> x);

double mean(std::span<const double> x);
/// Population standard deviation (divides by n). Empty input gives 0.
double stddev(std::span<const double> x);

bool all_finite(std::span<const double> x);

/// Bitwise equality, so that NaN payloads compare equal to themselves.
bool bit_equal(std::span<const double> a, std::span<const double> b);

} // namespace stabguard
