#include "stabguard/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <string>

#include "stabguard/errors.hpp"

namespace stabguard {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

void require_same_length(std::size_t a, std::size_t b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": length mismatch (" + std::to_string(a) + " vs " +
                             std::to_string(b) + ")");
    }
}

} // namespace

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), key_(mix64(mix64(seed + kGolden) ^ (stream_id * kGolden + 0x632BE59BD9B4E019ULL))) {}

std::uint64_t RngStream::next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
}

double RngStream::next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
    if (bound == 0) {
        throw ParameterError("next_below: bound must be positive");
    }
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r < limit) {
            return r % bound;
        }
    }
}

double RngStream::next_normal() {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - next_uniform();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::split(std::uint64_t child) const {
    return RngStream(seed_, mix64(stream_id_ ^ mix64(child + 0xD1B54A32D192ED03ULL)));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Vec64 axpy(double a, std::span<const double> x, std::span<const double> y) {
    require_same_length(x.size(), y.size(), "axpy");
    Vec64 out(y.begin(), y.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += a * x[i];
    }
    return out;
}

void axpy_inplace(double a, std::span<const double> x, std::span<double> y) {
    require_same_length(x.size(), y.size(), "axpy");
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] += a * x[i];
    }
}

Vec64 scaled(double a, std::span<const double> x) {
    Vec64 out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = a * x[i];
    }
    return out;
}

double dot(std::span<const double> x, std::span<const double> y) {
    require_same_length(x.size(), y.size(), "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc += x[i] * y[i];
    }
    return acc;
}

double l2_norm(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

Vec64 gaussian(RngStream& rng, std::size_t n, double mean, double std) {
    if (!(std >= 0.0)) {
        throw ParameterError("gaussian: std must be non-negative");
    }
    Vec64 out(n);
    for (auto& v : out) {
        v = mean + std * rng.next_normal();
    }
    return out;
}

Vec64 matvec(const Matrix& m, std::span<const double> x) {
    require_same_length(m.cols, x.size(), "matvec");
    Vec64 out(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.data.data() + r * m.cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
    return out;
}

Vec64 softmax(std::span<const double> x) {
    Vec64 out(x.size());
    if (x.empty()) {
        return out;
    }
    const double mx = *std::max_element(x.begin(), x.end());
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        total += out[i];
    }
    for (auto& v : out) {
        v /= total;
    }
    return out;
}

double log_sum_exp(std::span<const double> x) {
    if (x.empty()) {
        return -std::numeric_limits<double>::infinity();
    }
    const double mx = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(mx)) {
        return mx;
    }
    double total = 0.0;
    for (double v : x) {
        total += std::exp(v - mx);
    }
    return mx + std::log(total);
}

double mean(std::span<const double> x) {
    if (x.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (double v : x) {
        acc += v;
    }
    return acc / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
    if (x.empty()) {
        return 0.0;
    }
    const double mu = mean(x);
    double acc = 0.0;
    for (double v : x) {
        acc += (v - mu) * (v - mu);
    }
    return std::sqrt(acc / static_cast<double>(x.size()));
}

bool all_finite(std::span<const double> x) {
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

} // namespace stabguard
