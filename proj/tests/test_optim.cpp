#include "ccnet/optim.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace ccnet;

TEST_CASE("lion defaults") {
    const LionConfig c;
    CHECK(c.lr == 0.0003);
    CHECK(c.weight_decay == 0.05);
    CHECK(c.beta1 == 0.95);
    CHECK(c.beta2 == 0.98);
}

TEST_CASE("lion leaves parameters alone with zero gradient, momentum and decay") {
    Tensor w(Shape{3}, {1.0, -2.0, 0.5});
    const Tensor before = w;
    Tensor m(Shape{3}, 0.0);
    LionConfig c;
    c.weight_decay = 0.0;
    for (int i = 0; i < 100; ++i) REQUIRE(lion_step(w, Tensor(Shape{3}, 0.0), m, c));
    CHECK(bitwise_equal(w, before));
}

TEST_CASE("lion sign step") {
    Tensor w(Shape{1}, {1.0});
    Tensor m(Shape{1}, 0.0);
    LionConfig c;
    c.lr = 0.1;
    c.weight_decay = 0.0;
    REQUIRE(lion_step(w, Tensor(Shape{1}, {4.0}), m, c));
    // c = 0.95*0 + 0.05*4 = 0.2 > 0, so w moves down by lr.
    CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(m[0] == doctest::Approx(0.02 * 4.0).epsilon(1e-15));
}

TEST_CASE("lion decoupled decay only") {
    Tensor w(Shape{1}, {1.0});
    Tensor m(Shape{1}, 0.0);
    REQUIRE(lion_step(w, Tensor(Shape{1}, {0.0}), m, LionConfig{}));
    CHECK(w[0] == 1.0 - 0.0003 * 0.05 * 1.0);
}

TEST_CASE("lion treats sign(0) as 0") {
    // Dyadic beta1 so the interpolation is exactly zero: 0.75*1 + 0.25*(-3) = 0.
    Tensor w(Shape{1}, {2.0});
    Tensor m(Shape{1}, {1.0});
    LionConfig c;
    c.weight_decay = 0.0;
    c.beta1 = 0.75;
    REQUIRE(lion_step(w, Tensor(Shape{1}, {-3.0}), m, c));
    CHECK(w[0] == 2.0);
}

TEST_CASE("lion rejects non-finite gradients") {
    Tensor w(Shape{2}, {1.0, 2.0});
    Tensor m(Shape{2}, 0.0);
    const Tensor before = w;
    CHECK_FALSE(lion_step(w, Tensor(Shape{2}, {1.0, std::numeric_limits<double>::infinity()}), m, LionConfig{}));
    CHECK(bitwise_equal(w, before));
    CHECK(m[0] == 0.0);

    ParamSet p;
    p.add("a", Tensor(Shape{1}, {1.0}));
    p.add("b", Tensor(Shape{1}, {1.0}));
    ParamSet g = p.zeros_like();
    g["a"][0] = 1.0;
    g["b"][0] = std::numeric_limits<double>::quiet_NaN();
    LionState state(p, LionConfig{});
    const ParamSet snapshot = p;
    CHECK_FALSE(state.step(p, g));
    CHECK(checksum(p) == checksum(snapshot));
    CHECK(state.momentum()["a"][0] == 0.0);
}

TEST_CASE("lion state keeps momentum shaped like the parameters") {
    ParamSet p;
    p.add("w", Tensor(Shape{2, 3}, 1.0));
    LionState state(p, LionConfig{});
    CHECK(state.momentum().same_layout(p));
    ParamSet g = p.zeros_like();
    g["w"][4] = 3.0;
    REQUIRE(state.step(p, g));
    CHECK(state.momentum()["w"][4] == doctest::Approx(0.02 * 3.0));
    CHECK(state.momentum().same_layout(p));
}

TEST_CASE("grad_check on a quadratic") {
    ParamSet p;
    p.add("w", Tensor(Shape{2}, {1.0, 2.0}));
    const auto r = grad_check([](Tape&, const ParamVars& v) { return sum_all(mul(v["w"], v["w"])); }, p);
    CHECK(r.max_rel_error < 1e-8);
    CHECK(r.coordinates == 2);
}

TEST_CASE("grad_check with a dead relu coordinate") {
    ParamSet p;
    p.add("w", Tensor(Shape{3}, {-1.0, 0.5, 2.0}));
    const auto r = grad_check([](Tape&, const ParamVars& v) { return sum_all(relu(v["w"])); }, p);
    CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("grad_check flags a wrong gradient") {
    ParamSet p;
    p.add("w", Tensor(Shape{1}, {1.5}));
    // A custom op whose backward is deliberately off by a factor of two.
    const auto broken = [](Tape& tape, const ParamVars& v) {
        Var w = v["w"];
        Tensor out = Tensor::scalar(w.value()[0] * w.value()[0]);
        return tape.record(std::move(out), {w}, [w](Tape& t, const Tensor& g) {
            t.accumulate(w, Tensor(Shape{1}, {4.0 * t.value(w)[0] * g[0]}));
        });
    };
    const auto r = grad_check(broken, p);
    CHECK(r.max_rel_error > 0.3);
    CHECK(r.worst_param == "w");
}

TEST_CASE("grad_check validates eps and reports non-finite losses") {
    ParamSet p;
    p.add("w", Tensor(Shape{2}, {0.0, 1e-9}));
    const auto f = [](Tape&, const ParamVars& v) { return sum_all(mul(v["w"], v["w"])); };
    CHECK_THROWS_AS(grad_check(f, p, 1e-2), std::invalid_argument);
    CHECK_THROWS_AS(grad_check(f, p, 1e-9), std::invalid_argument);
    const auto logf = [](Tape&, const ParamVars& v) { return sum_all(log(v["w"])); };
    try {
        (void)grad_check(logf, p, 1e-5);
        FAIL("expected GradCheckError");
    } catch (const GradCheckError& e) {
        CHECK(e.param == "w");
        CHECK(e.index == 0);
    }
}
