#pragma once

// Optimizers that *propose* an additive update instead of applying it, with
// internal state that serializes bit-exactly.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stabguard/numerics.hpp"

namespace stabguard {

enum class OptimizerKind : std::uint8_t {
    SgdMomentum = 0,
    AdamW = 1,
};

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double learning_rate = 1e-3;
    double momentum = 0.9;      // sgd_momentum only
    double beta1 = 0.9;         // adamw
    double beta2 = 0.999;       // adamw
    double eps = 1e-8;          // adamw
    double weight_decay = 0.01; // decoupled for adamw, coupled (L2) for sgd

    static OptimizerConfig adamw(double lr, double weight_decay = 0.01);
    static OptimizerConfig sgd(double lr, double momentum, double weight_decay = 0.0);

    /// Throws ParameterError on any value outside its domain.
    void validate() const;

    friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Momentum / moment buffers plus the step count. For SGD only `first` is
/// used (the velocity); `second` stays empty.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::AdamW;
    Vec64 first;
    Vec64 second;
    std::uint64_t step_count = 0;

    static OptimizerState zeros(OptimizerKind kind, std::size_t dim);
    std::size_t dim() const { return first.size(); }

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct Proposal {
    Vec64 delta;
    OptimizerState next_state;
};

/// One optimizer step as a pure function: returns delta (so the proposed
/// parameters are params + delta) and the advanced state. Non-finite
/// gradients flow through untouched.
Proposal propose_update(const OptimizerState& state, const OptimizerConfig& config, std::span<const double> params,
                        std::span<const double> grad);

/// "OPT1" | kind u8 | dim u64 | buffers as f64 | step_count u64, all
/// little-endian.
std::vector<std::uint8_t> serialize_state(const OptimizerState& state);
OptimizerState deserialize_state(std::span<const std::uint8_t> bytes);

namespace detail {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);

/// Sequential little-endian reader that throws FormatError on overrun.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    std::uint8_t u8();
    std::uint64_t u64();
    double f64();
    void expect_magic(std::string_view magic);
    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::size_t position() const { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

/// Reads one "OPT1" record starting at the reader's position.
OptimizerState read_state(ByteReader& in);

} // namespace detail

} // namespace stabguard
