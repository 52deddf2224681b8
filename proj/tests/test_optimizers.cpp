#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "stabguard/errors.hpp"
#include "stabguard/optimizers.hpp"

using namespace stabguard;

TEST_SUITE("optimizers") {

TEST_CASE("adamw first step by hand") {
    OptimizerConfig cfg = OptimizerConfig::adamw(0.1, 0.0);
    const OptimizerState s0 = OptimizerState::zeros(OptimizerKind::AdamW, 1);
    const Proposal p = propose_update(s0, cfg, Vec64{0.0}, Vec64{1.0});
    CHECK(p.next_state.first[0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(p.next_state.second[0] == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(p.next_state.step_count == 1);
    // m_hat = v_hat = 1, so delta = -0.1 / (1 + 1e-8).
    CHECK(p.delta[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adamw second step by hand") {
    const OptimizerConfig cfg = OptimizerConfig::adamw(0.01, 0.0);
    const OptimizerState s0 = OptimizerState::zeros(OptimizerKind::AdamW, 1);
    const Proposal p1 = propose_update(s0, cfg, Vec64{0.0}, Vec64{2.0});
    const Proposal p2 = propose_update(p1.next_state, cfg, Vec64{0.0}, Vec64{-1.0});
    const double m = 0.9 * 0.2 + 0.1 * -1.0;          // 0.08
    const double v = 0.999 * 0.004 + 0.001 * 1.0;     // 0.004996
    const double m_hat = m / (1 - 0.81);
    const double v_hat = v / (1 - 0.998001);
    CHECK(p2.next_state.first[0] == doctest::Approx(m).epsilon(1e-14));
    CHECK(p2.next_state.second[0] == doctest::Approx(v).epsilon(1e-14));
    CHECK(p2.delta[0] == doctest::Approx(-0.01 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-13));
}

TEST_CASE("sgd examples") {
    const OptimizerConfig plain = OptimizerConfig::sgd(0.5, 0.0);
    const auto s0 = OptimizerState::zeros(OptimizerKind::SgdMomentum, 2);
    CHECK(propose_update(s0, plain, Vec64{3, 4}, Vec64{2, -2}).delta == Vec64{-1, 1});
    const OptimizerConfig mom = OptimizerConfig::sgd(0.1, 0.9);
    CHECK(propose_update(s0, mom, Vec64{3, 4}, Vec64{0, 0}).delta == Vec64{0, 0});
    // Velocity accumulates: v1 = g, v2 = 0.9 g + g.
    const auto p1 = propose_update(s0, mom, Vec64{0, 0}, Vec64{1, 2});
    const auto p2 = propose_update(p1.next_state, mom, Vec64{0, 0}, Vec64{1, 2});
    CHECK(p2.delta[0] == doctest::Approx(-0.1 * 1.9));
    CHECK(p2.delta[1] == doctest::Approx(-0.1 * 3.8));
    CHECK(p2.next_state.second.empty());
}

TEST_CASE("propose_update is pure and leaves its input state alone") {
    const OptimizerConfig cfg = OptimizerConfig::adamw(1e-3);
    OptimizerState s = OptimizerState::zeros(OptimizerKind::AdamW, 3);
    s.first = {0.1, -0.2, 0.3};
    s.second = {0.01, 0.02, 0.03};
    s.step_count = 7;
    const OptimizerState before = s;
    const Vec64 params{1, 2, 3};
    const Vec64 grad{0.5, -0.5, 2};
    const Proposal a = propose_update(s, cfg, params, grad);
    const Proposal b = propose_update(s, cfg, params, grad);
    CHECK(s == before);
    CHECK(bit_equal(a.delta, b.delta));
    CHECK(serialize_state(a.next_state) == serialize_state(b.next_state));
    CHECK(a.next_state.step_count == 8);
}

TEST_CASE("adamw weight decay is decoupled") {
    OptimizerState s = OptimizerState::zeros(OptimizerKind::AdamW, 4);
    s.first = {0.1, 0.0, -0.3, 1.0};
    s.second = {0.2, 0.1, 0.3, 0.5};
    s.step_count = 3;
    const Vec64 params{1.5, -2.0, 0.25, 10.0};
    const Vec64 grad{0.3, -1.0, 0.0, 4.0};
    const double w = 0.05;
    const double lr = 0.002;
    const Proposal with = propose_update(s, OptimizerConfig::adamw(lr, w), params, grad);
    const Proposal without = propose_update(s, OptimizerConfig::adamw(lr, 0.0), params, grad);
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(std::fabs(with.delta[i] - (without.delta[i] - lr * w * params[i])) <= 1e-15);
    }
    CHECK(with.next_state == without.next_state);
}

TEST_CASE("non-finite gradients flow through") {
    const auto s0 = OptimizerState::zeros(OptimizerKind::SgdMomentum, 2);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const Proposal p = propose_update(s0, OptimizerConfig::sgd(0.1, 0.9), Vec64{0, 0}, Vec64{nan, 1.0});
    CHECK(std::isnan(p.delta[0]));
    CHECK(p.delta[1] == doctest::Approx(-0.1));
}

TEST_CASE("dimension and config errors") {
    const OptimizerConfig cfg = OptimizerConfig::adamw(1e-3);
    const auto s = OptimizerState::zeros(OptimizerKind::AdamW, 2);
    CHECK_THROWS_AS(propose_update(s, cfg, Vec64{1, 2}, Vec64{1}), DimensionError);
    CHECK_THROWS_AS(propose_update(s, cfg, Vec64{1, 2, 3}, Vec64{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(propose_update(s, OptimizerConfig::sgd(0.1, 0.9), Vec64{1, 2}, Vec64{1, 2}), ParameterError);
    CHECK_THROWS_AS(OptimizerConfig::adamw(0.0).validate(), ParameterError);
    CHECK_THROWS_AS(OptimizerConfig::sgd(0.1, 1.0).validate(), ParameterError);
    OptimizerConfig bad = cfg;
    bad.eps = 0.0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = cfg;
    bad.weight_decay = -1.0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    CHECK_NOTHROW(cfg.validate());
    CHECK(parse_optimizer_kind(to_string(OptimizerKind::SgdMomentum)) == OptimizerKind::SgdMomentum);
    CHECK_THROWS_AS(parse_optimizer_kind("lion"), ParameterError);
}

TEST_CASE("state serialization round trips bit-exactly") {
    OptimizerState s = OptimizerState::zeros(OptimizerKind::AdamW, 3);
    s.first = {1.0 / 3.0, -0.0, std::numeric_limits<double>::quiet_NaN()};
    s.second = {std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::infinity(), 5e300};
    s.step_count = 0x0123456789abcdefULL;
    const auto bytes = serialize_state(s);
    const OptimizerState back = deserialize_state(bytes);
    CHECK(serialize_state(back) == bytes);
    CHECK(bit_equal(back.first, s.first));
    CHECK(bit_equal(back.second, s.second));
    CHECK(back.step_count == s.step_count);

    const auto empty = OptimizerState::zeros(OptimizerKind::SgdMomentum, 0);
    CHECK(deserialize_state(serialize_state(empty)) == empty);
}

TEST_CASE("state encoding layout") {
    OptimizerState s = OptimizerState::zeros(OptimizerKind::SgdMomentum, 1);
    s.first = {1.0};
    s.step_count = 2;
    const auto b = serialize_state(s);
    // magic(4) kind(1) dim(8) velocity(8) step(8)
    REQUIRE(b.size() == 29);
    CHECK(std::memcmp(b.data(), "OPT1", 4) == 0);
    CHECK(b[4] == 0);
    CHECK(b[5] == 1);
    for (int i = 6; i < 13; ++i) {
        CHECK(b[i] == 0);
    }
    // 1.0 is 0x3ff0000000000000, little-endian.
    CHECK(b[19] == 0xf0);
    CHECK(b[20] == 0x3f);
    CHECK(b[21] == 2);
}

TEST_CASE("malformed state bytes are rejected") {
    const auto good = serialize_state(OptimizerState::zeros(OptimizerKind::AdamW, 2));
    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_state(bad_magic), FormatError);
    auto bad_kind = good;
    bad_kind[4] = 9;
    CHECK_THROWS_AS(deserialize_state(bad_kind), FormatError);
    auto truncated = good;
    truncated.pop_back();
    CHECK_THROWS_AS(deserialize_state(truncated), FormatError);
    auto trailing = good;
    trailing.push_back(0);
    CHECK_THROWS_AS(deserialize_state(trailing), FormatError);
    auto huge = good;
    huge[12] = 0x7f;
    CHECK_THROWS_AS(deserialize_state(huge), FormatError);
}

}
