#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "recorr/autodiff.hpp"
#include "recorr/gradcheck.hpp"
#include "test_support.hpp"

using namespace recorr;
using namespace recorr::ad;
using namespace testing_support;

namespace {

// Random linear functional so every output entry carries gradient.
Var probe_loss(Tape& t, Var x, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Volume& v = t.value(x);
    Var w = t.constant(random_volume(rng, v.channels(), v.dims()));
    return sum(t, mul(t, x, w));
}

void expect_pass(const GradcheckReport& r) {
    INFO(r.name << " worst " << r.worst << " err " << r.max_rel_error << " analytic " << r.worst_analytic
                << " numeric " << r.worst_numeric);
    CHECK(r.passed);
    CHECK(r.probes > 0);
}

Dims random_dims(std::mt19937_64& rng, int lo, int hi) {
    std::uniform_int_distribution<int> u(lo, hi);
    return Dims{u(rng), u(rng), u(rng)};
}

} // namespace

TEST_CASE("conv3d with a centred unit kernel is the identity") {
    std::mt19937_64 rng(1);
    Tape t;
    const Volume img = random_volume(rng, 1, Dims{4, 5, 6});
    Var x = t.input(img, false);
    Volume w(1, Dims{1, 1, 27});
    w[13] = 1.0;
    Var y = conv3d(t, x, t.constant(w), Var{}, 1, {3, 3, 3});
    CHECK(t.value(y) == img);
}

TEST_CASE("sigmoid(0) = 0.5 and tanh(0) = 0") {
    Tape t;
    Var x = t.input(scalar_volume(0.0), false);
    CHECK(t.value(sigmoid(t, x))[0] == 0.5);
    CHECK(t.value(ad::tanh(t, x))[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    Tape t;
    Var x = t.input(Volume(1, Dims{2, 2, 2}));
    CHECK_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("constant loss gives zero gradients, sum of params gives ones") {
    ParamStore store;
    Param& a = store.add("a", {2, 3});
    Param& b = store.add("b", {4});
    for (double& v : a.value) v = 0.5;
    {
        Tape t;
        Var pa = t.param(a);
        Var loss = add(t, scale(t, sum(t, pa), 0.0), t.constant(scalar_volume(3.0)));
        t.backward(loss);
        for (double g : a.grad) CHECK(g == 0.0);
    }
    {
        Tape t;
        Var loss = add(t, sum(t, t.param(a)), sum(t, t.param(b)));
        t.backward(loss);
        for (double g : a.grad) CHECK(g == 1.0);
        for (double g : b.grad) CHECK(g == 1.0);
    }
}

TEST_CASE("param leaves are shared within a tape so gradients accumulate") {
    ParamStore store;
    Param& a = store.add("a", {3});
    Tape t;
    Var l = add(t, sum(t, t.param(a)), sum(t, t.param(a)));
    t.backward(l);
    for (double g : a.grad) CHECK(g == 2.0);
}

TEST_CASE("concat and split are exact adjoints") {
    std::mt19937_64 rng(2);
    const Dims d{3, 4, 5};
    Tape t;
    Var a = t.input(random_volume(rng, 2, d));
    Var b = t.input(random_volume(rng, 3, d));
    Var c = concat(t, {a, b});
    Var a2 = split(t, c, 0, 2);
    Var b2 = split(t, c, 2, 5);
    CHECK(t.value(a2) == t.value(a));
    CHECK(t.value(b2) == t.value(b));
    const Volume wa = random_volume(rng, 2, d), wb = random_volume(rng, 3, d);
    Var loss = add(t, sum(t, mul(t, a2, t.constant(wa))), sum(t, mul(t, b2, t.constant(wb))));
    t.backward(loss);
    CHECK(t.grad(a) == wa);
    CHECK(t.grad(b) == wb);
}

TEST_CASE("warp field gradient vanishes where sampling is clamped on every axis") {
    std::mt19937_64 rng(3);
    const Dims d{4, 4, 4};
    Tape t;
    Var img = t.input(random_volume(rng, 2, d));
    Volume f(3, d);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = (i % 2 ? 1.0 : -1.0) * 50.0;
    Var field = t.input(f);
    t.backward(probe_loss(t, warp(t, img, field), 7));
    const Volume g = t.grad(field);
    for (double v : g.values()) CHECK(v == 0.0);
}

TEST_CASE("finite-difference audit of every op on random small shapes") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const Dims d = random_dims(rng, 2, 4);
        const std::uint64_t s = 100 + trial;
        auto vol = [&](int c) { return random_volume(rng, c, d); };

        expect_pass(gradcheck("leaky_relu", [&](Tape& t, const std::vector<Var>& in) {
            return probe_loss(t, leaky_relu(t, in[0]), s);
        }, {vol(2)}));
        expect_pass(gradcheck("sigmoid", [&](Tape& t, const std::vector<Var>& in) {
            return probe_loss(t, sigmoid(t, in[0]), s);
        }, {vol(2)}));
        expect_pass(gradcheck("tanh", [&](Tape& t, const std::vector<Var>& in) {
            return probe_loss(t, ad::tanh(t, in[0]), s);
        }, {vol(2)}));
        expect_pass(gradcheck("add/sub/mul", [&](Tape& t, const std::vector<Var>& in) {
            return probe_loss(t, mul(t, add(t, in[0], in[1]), sub(t, in[1], in[2])), s);
        }, {vol(2), vol(2), vol(2)}));
        expect_pass(gradcheck("blend", [&](Tape& t, const std::vector<Var>& in) {
            return probe_loss(t, blend(t, sigmoid(t, in[0]), in[1], in[2]), s);
        }, {vol(2), vol(2), vol(2)}));
        expect_pass(gradcheck("concat/split", [&](Tape& t, const std::vector<Var>& in) {
            Var c = concat(t, {in[0], in[1]});
            return probe_loss(t, mul(t, split(t, c, 1, 3), split(t, c, 0, 2)), s);
        }, {vol(1), vol(2)}));
        expect_pass(gradcheck("upsample2", [&](Tape& t, const std::vector<Var>& in) {
            return probe_loss(t, upsample2(t, in[0]), s);
        }, {vol(2)}));
        expect_pass(gradcheck("mean", [&](Tape& t, const std::vector<Var>& in) {
            return mean(t, mul(t, in[0], in[0]));
        }, {vol(3)}));

        // warp: fractional, mostly interior displacements keep clear of lattice kinks
        Volume field = random_volume(rng, 3, d, -0.45, 0.45);
        for (double& v : field.values()) v += 0.3;
        expect_pass(gradcheck("warp", [&](Tape& t, const std::vector<Var>& in) {
            return probe_loss(t, warp(t, in[0], in[1]), s);
        }, {vol(2), field}));

        for (int r : {1, 3}) {
            expect_pass(gradcheck("correlation", [&](Tape& t, const std::vector<Var>& in) {
                return probe_loss(t, correlation(t, in[0], in[1], r), s);
            }, {vol(3), vol(3)}));
        }
        // correlation through warp, differentiable w.r.t. the field as well
        expect_pass(gradcheck("correlation∘warp", [&](Tape& t, const std::vector<Var>& in) {
            return probe_loss(t, correlation(t, in[0], warp(t, in[1], in[2]), 3), s);
        }, {vol(2), vol(2), field}));
    }
}

TEST_CASE("finite-difference audit of conv3d, strided and separable, with parameters") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const Dims d = random_dims(rng, 3, 5);
        ParamStore store;
        for (auto& [name, shape] : std::vector<std::pair<std::string, std::vector<int>>>{
                 {"c.w", {3, 2, 3, 3, 3}}, {"c.b", {3}}, {"s.w", {2, 2, 3, 3, 3}}, {"s.b", {2}},
                 {"a.w", {2, 3, 1, 1, 3}}, {"a.b", {2}}, {"b.w", {2, 2, 1, 3, 1}}, {"b.b", {2}},
                 {"c2.w", {1, 2, 3, 1, 1}}, {"c2.b", {1}}}) {
            Param& p = store.add(name, shape);
            std::uniform_real_distribution<double> u(-0.5, 0.5);
            for (double& v : p.value) v = u(rng);
        }
        const std::uint64_t s = 200 + trial;
        auto graph = [&](Tape& t, const std::vector<Var>& in) {
            auto P = [&](const char* n) { return t.param(store.get(n)); };
            Var x = leaky_relu(t, conv3d(t, in[0], P("c.w"), P("c.b"), 3, {3, 3, 3}));
            Var y = conv3d(t, in[0], P("s.w"), P("s.b"), 2, {3, 3, 3}, 2);
            Var z = separable_conv3d(t, x, {P("a.w"), P("b.w"), P("c2.w")}, {P("a.b"), P("b.b"), P("c2.b")}, 2, 1, 3);
            return add(t, probe_loss(t, z, s), probe_loss(t, y, s + 1));
        };
        expect_pass(gradcheck("conv3d", graph, {random_volume(rng, 2, d)}, &store));
    }
}

TEST_CASE("AdamW: zero gradient and zero decay leave params unchanged") {
    ParamStore store;
    Param& p = store.add("p", {3});
    p.value = {1.0, -2.0, 0.5};
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step(store, cfg);
    CHECK(p.value == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(store.step() == 1);
}

TEST_CASE("AdamW: first step moves by lr in the gradient's sign") {
    ParamStore store;
    Param& p = store.add("p", {1});
    p.value = {1.0};
    p.grad = {1.0};
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    adamw_step(store, cfg);
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(p.grad[0] == 0.0);
}

TEST_CASE("AdamW: 100 steps on (p - 3)^2 converge and track a scalar reference loop") {
    ParamStore store;
    Param& p = store.add("p", {1});
    p.value = {1.0};
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    double q = 1.0, m = 0.0, v = 0.0;
    for (int i = 1; i <= 100; ++i) {
        Tape t;
        Var x = t.param(p);
        Var d = sub(t, x, t.constant(scalar_volume(3.0)));
        t.backward(sum(t, mul(t, d, d)));
        adamw_step(store, cfg);

        const double g = 2.0 * (q - 3.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        q -= 0.1 * (m / (1 - std::pow(0.9, i))) / (std::sqrt(v / (1 - std::pow(0.999, i))) + 1e-8);
    }
    CHECK(std::abs(p.value[0] - 3.0) < 1e-2);
    // storage rounds to f32 each step
    CHECK(p.value[0] == doctest::Approx(q).epsilon(1e-5));
}

TEST_CASE("AdamW: decay is decoupled from the gradient") {
    ParamStore store;
    Param& p = store.add("p", {1});
    p.value = {2.0};
    AdamWConfig cfg;
    cfg.lr = 0.5;
    cfg.weight_decay = 0.1;
    adamw_step(store, cfg);
    CHECK(p.value[0] == doctest::Approx(2.0 * (1 - 0.05)).epsilon(1e-6));
}

TEST_CASE("checkpoint round trip is lossless") {
    std::mt19937_64 rng(6);
    ParamStore store;
    for (int i = 0; i < 3; ++i) {
        Param& p = store.add("layer" + std::to_string(i) + ".w", {2, i + 1, 3});
        for (double& v : p.value) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        for (double& v : p.grad) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    }
    adamw_step(store, {});
    const auto path = std::filesystem::temp_directory_path() / "recorr_ckpt_roundtrip.ckpt";
    save_checkpoint(path, store);
    const ParamStore loaded = load_checkpoint(path);
    CHECK(loaded == store);
    CHECK(loaded.step() == 1);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects bad magic") {
    const auto path = std::filesystem::temp_directory_path() / "recorr_bad.ckpt";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTACKPT00000000";
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("reserved and duplicate parameter names are rejected") {
    ParamStore store;
    store.add("w", {1});
    CHECK_THROWS_AS(store.add("w", {1}), ContractError);
    CHECK_THROWS_AS(store.add("step", {1}), ContractError);
    CHECK_THROWS_AS(store.add("x.m", {1}), ContractError);
}
