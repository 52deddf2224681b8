#include "stabguard/optimizers.hpp"

#include <bit>
#include <cmath>

#include "stabguard/errors.hpp"

namespace stabguard {

std::string_view to_string(OptimizerKind kind) {
    switch (kind) {
    case OptimizerKind::SgdMomentum:
        return "sgd_momentum";
    case OptimizerKind::AdamW:
        return "adamw";
    }
    return "unknown";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
    if (text == "sgd_momentum" || text == "sgd") {
        return OptimizerKind::SgdMomentum;
    }
    if (text == "adamw") {
        return OptimizerKind::AdamW;
    }
    throw ParameterError("unknown optimizer kind '" + std::string(text) + "'");
}

OptimizerConfig OptimizerConfig::adamw(double lr, double weight_decay) {
    OptimizerConfig c;
    c.kind = OptimizerKind::AdamW;
    c.learning_rate = lr;
    c.weight_decay = weight_decay;
    return c;
}

OptimizerConfig OptimizerConfig::sgd(double lr, double momentum, double weight_decay) {
    OptimizerConfig c;
    c.kind = OptimizerKind::SgdMomentum;
    c.learning_rate = lr;
    c.momentum = momentum;
    c.weight_decay = weight_decay;
    return c;
}

void OptimizerConfig::validate() const {
    auto in_unit = [](double b) { return b >= 0.0 && b < 1.0; };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ParameterError("optimizer: learning_rate must be > 0");
    }
    if (!in_unit(momentum) || !in_unit(beta1) || !in_unit(beta2)) {
        throw ParameterError("optimizer: momentum/beta1/beta2 must lie in [0, 1)");
    }
    if (!(eps > 0.0)) {
        throw ParameterError("optimizer: eps must be > 0");
    }
    if (!(weight_decay >= 0.0)) {
        throw ParameterError("optimizer: weight_decay must be >= 0");
    }
}

OptimizerState OptimizerState::zeros(OptimizerKind kind, std::size_t dim) {
    OptimizerState s;
    s.kind = kind;
    s.first.assign(dim, 0.0);
    if (kind == OptimizerKind::AdamW) {
        s.second.assign(dim, 0.0);
    }
    return s;
}

Proposal propose_update(const OptimizerState& state, const OptimizerConfig& config, std::span<const double> params,
                        std::span<const double> grad) {
    if (state.kind != config.kind) {
        throw ParameterError("propose_update: optimizer state kind does not match config");
    }
    const std::size_t d = params.size();
    if (grad.size() != d || state.first.size() != d ||
        (state.kind == OptimizerKind::AdamW && state.second.size() != d)) {
        throw DimensionError("propose_update: params, grad and state buffers must share one length");
    }
    Proposal p{Vec64(d), state};
    p.next_state.step_count = state.step_count + 1;
    const double lr = config.learning_rate;

    if (state.kind == OptimizerKind::SgdMomentum) {
        Vec64& vel = p.next_state.first;
        for (std::size_t i = 0; i < d; ++i) {
            const double g = grad[i] + config.weight_decay * params[i];
            vel[i] = config.momentum * vel[i] + g;
            p.delta[i] = -lr * vel[i];
        }
        return p;
    }

    const double t = static_cast<double>(p.next_state.step_count);
    const double bias1 = 1.0 - std::pow(config.beta1, t);
    const double bias2 = 1.0 - std::pow(config.beta2, t);
    Vec64& m = p.next_state.first;
    Vec64& v = p.next_state.second;
    for (std::size_t i = 0; i < d; ++i) {
        const double g = grad[i];
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        const double m_hat = m[i] / bias1;
        const double v_hat = v[i] / bias2;
        // Decoupled decay: a separate term, never folded into the moments.
        p.delta[i] = -lr * (m_hat / (std::sqrt(v_hat) + config.eps)) - lr * config.weight_decay * params[i];
    }
    return p;
}

namespace detail {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    }
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint8_t ByteReader::u8() {
    if (remaining() < 1) {
        throw FormatError("truncated input");
    }
    return bytes_[pos_++];
}

std::uint64_t ByteReader::u64() {
    if (remaining() < 8) {
        throw FormatError("truncated input");
    }
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) {
        v |= static_cast<std::uint64_t>(bytes_[pos_ + b]) << (8 * b);
    }
    pos_ += 8;
    return v;
}

double ByteReader::f64() {
    return std::bit_cast<double>(u64());
}

void ByteReader::expect_magic(std::string_view magic) {
    for (char c : magic) {
        if (remaining() < 1 || bytes_[pos_] != static_cast<std::uint8_t>(c)) {
            throw FormatError("bad magic, expected '" + std::string(magic) + "'");
        }
        ++pos_;
    }
}

} // namespace detail

std::vector<std::uint8_t> serialize_state(const OptimizerState& state) {
    std::vector<std::uint8_t> out{'O', 'P', 'T', '1'};
    out.push_back(static_cast<std::uint8_t>(state.kind));
    detail::put_u64(out, state.first.size());
    for (double x : state.first) {
        detail::put_f64(out, x);
    }
    if (state.kind == OptimizerKind::AdamW) {
        for (double x : state.second) {
            detail::put_f64(out, x);
        }
    }
    detail::put_u64(out, state.step_count);
    return out;
}

namespace detail {

OptimizerState read_state(ByteReader& in) {
    in.expect_magic("OPT1");
    const std::uint8_t kind_byte = in.u8();
    if (kind_byte > static_cast<std::uint8_t>(OptimizerKind::AdamW)) {
        throw FormatError("unknown optimizer kind byte " + std::to_string(kind_byte));
    }
    OptimizerState s;
    s.kind = static_cast<OptimizerKind>(kind_byte);
    const std::uint64_t dim = in.u64();
    const std::uint64_t buffers = s.kind == OptimizerKind::AdamW ? 2 : 1;
    if (dim > in.remaining() / 8 / buffers) {
        throw FormatError("declared dimension exceeds payload");
    }
    s.first.resize(dim);
    for (auto& x : s.first) {
        x = in.f64();
    }
    if (s.kind == OptimizerKind::AdamW) {
        s.second.resize(dim);
        for (auto& x : s.second) {
            x = in.f64();
        }
    }
    s.step_count = in.u64();
    return s;
}

} // namespace detail

OptimizerState deserialize_state(std::span<const std::uint8_t> bytes) {
    detail::ByteReader in(bytes);
    OptimizerState s = detail::read_state(in);
    if (in.remaining() != 0) {
        throw FormatError("trailing bytes after optimizer state");
    }
    return s;
}

} // namespace stabguard
