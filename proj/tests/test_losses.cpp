#include <cmath>
#include <random>

#include "doctest.h"
#include "recorr/gradcheck.hpp"
#include "recorr/losses.hpp"
#include "test_support.hpp"

using namespace recorr;
using namespace testing_support;

namespace {

// Nested-loop NCC with clipped windows, straight from the definition.
double ncc_oracle(const Volume& a, const Volume& b, int window) {
    const Dims d = a.dims();
    const int r = window / 2;
    double total = 0.0;
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                double n = 0, si = 0, sj = 0, si2 = 0, sj2 = 0, sij = 0;
                for (int c = std::max(0, z - r); c <= std::min(d.d - 1, z + r); ++c)
                    for (int e = std::max(0, y - r); e <= std::min(d.h - 1, y + r); ++e)
                        for (int f = std::max(0, x - r); f <= std::min(d.w - 1, x + r); ++f) {
                            const double p = a.at(0, c, e, f), q = b.at(0, c, e, f);
                            n += 1;
                            si += p;
                            sj += q;
                            si2 += p * p;
                            sj2 += q * q;
                            sij += p * q;
                        }
                const double mi = si / n, mj = sj / n;
                // centred form, algebraically equal to the running-sum form
                double cross = 0, vi = 0, vj = 0;
                for (int c = std::max(0, z - r); c <= std::min(d.d - 1, z + r); ++c)
                    for (int e = std::max(0, y - r); e <= std::min(d.h - 1, y + r); ++e)
                        for (int f = std::max(0, x - r); f <= std::min(d.w - 1, x + r); ++f) {
                            const double p = a.at(0, c, e, f) - mi, q = b.at(0, c, e, f) - mj;
                            cross += p * q;
                            vi += p * p;
                            vj += q * q;
                        }
                total += cross * cross / (vi * vj + 1e-5);
            }
    return 1.0 - total / static_cast<double>(d.voxels());
}

double grad_l2_oracle(const Volume& u) {
    const Dims d = u.dims();
    double sz = 0, sy = 0, sx = 0;
    for (int c = 0; c < 3; ++c)
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.h; ++y)
                for (int x = 0; x < d.w; ++x) {
                    if (z + 1 < d.d) sz += std::pow(u.at(c, z + 1, y, x) - u.at(c, z, y, x), 2);
                    if (y + 1 < d.h) sy += std::pow(u.at(c, z, y + 1, x) - u.at(c, z, y, x), 2);
                    if (x + 1 < d.w) sx += std::pow(u.at(c, z, y, x + 1) - u.at(c, z, y, x), 2);
                }
    const double nz = (d.d - 1.0) * d.h * d.w, ny = d.d * (d.h - 1.0) * d.w, nx = d.d * d.h * (d.w - 1.0);
    return (sz / nz + sy / ny + sx / nx) / 3.0;
}

Volume ball(Dims d, double cz, double cy, double cx, double radius) {
    Volume v(1, d);
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x)
                if (std::pow(z - cz, 2) + std::pow(y - cy, 2) + std::pow(x - cx, 2) <= radius * radius)
                    v.at(0, z, y, x) = 1.0;
    return v;
}

} // namespace

TEST_CASE("mse trivial values and loop oracle") {
    const Dims d{4, 5, 6};
    CHECK(loss::mse(Volume(1, d), Volume(1, d)) == 0.0);
    CHECK(loss::mse(Volume(1, d), Volume::filled(1, d, 1.0)) == doctest::Approx(1.0).epsilon(1e-15));
    std::mt19937_64 rng(3);
    const Volume a = random_volume(rng, 1, d), b = random_volume(rng, 1, d);
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(std::abs(loss::mse(a, b) - acc / a.size()) < 1e-7);
    CHECK_THROWS_AS(loss::mse(a, Volume(1, Dims{4, 5, 5})), ContractError);
}

TEST_CASE("ncc matches the nested-loop oracle and is affine invariant") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 4; ++trial) {
        const Dims d{7 + trial, 6, 9};
        const Volume a = random_volume(rng, 1, d, 0.0, 1.0), b = random_volume(rng, 1, d, 0.0, 1.0);
        for (int w : {3, 9}) CHECK(std::abs(loss::ncc(a, b, w) - ncc_oracle(a, b, w)) < 1e-5);
        CHECK(std::abs(loss::ncc(a, a)) < 1e-3);
        Volume affine = a;
        for (double& v : affine.values()) v = 2.0 * v + 3.0;
        CHECK(std::abs(loss::ncc(a, affine)) < 1e-3);
        const double l = loss::ncc(a, b);
        CHECK(l >= 0.0);
        CHECK(l <= 1.0);
    }
    CHECK_THROWS_AS(loss::ncc(Volume(1, Dims{4, 4, 4}), Volume(1, Dims{4, 4, 5})), ContractError);
}

TEST_CASE("grad_l2 analytic values and oracle") {
    const Dims d{5, 6, 7};
    CHECK(loss::grad_l2(DisplacementField::constant(d, {1.0, -2.0, 0.5}).volume()) == 0.0);
    DisplacementField ramp(d);
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) ramp.component(2, z, y, x) = x;
    CHECK(loss::grad_l2(ramp.volume()) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    std::mt19937_64 rng(9);
    const Volume u = random_volume(rng, 3, d);
    CHECK(std::abs(loss::grad_l2(u) - grad_l2_oracle(u)) < 1e-12);
    CHECK_THROWS_AS(loss::grad_l2(Volume(3, Dims{1, 4, 4})), ContractError);
}

TEST_CASE("dice_loss identical, disjoint and half-overlap spheres") {
    const Dims d{16, 16, 16};
    const Volume a = ball(d, 7.5, 7.5, 5.0, 4.0);
    CHECK(loss::dice_loss(a, a) == doctest::Approx(0.0).epsilon(1e-15));
    const Volume far = ball(d, 7.5, 7.5, 13.0, 2.0);
    double sa = 0, sf = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sa += a[i];
        sf += far[i];
        REQUIRE(a[i] * far[i] == 0.0);
    }
    // disjoint: only the +1 smoothing term survives
    CHECK(loss::dice_loss(a, far) == doctest::Approx(1.0 - 1.0 / (sa + sf + 1.0)).epsilon(1e-14));
    CHECK(loss::dice_loss(a, far) > 0.99);
    const Volume b = ball(d, 7.5, 7.5, 9.0, 4.0);
    double inter = 0, sb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] * b[i];
        sb += b[i];
    }
    CHECK(loss::dice_loss(a, b) == doctest::Approx(1.0 - (2 * inter + 1) / (sa + sb + 1)).epsilon(1e-14));
}

TEST_CASE("loss gradients match finite differences") {
    std::mt19937_64 rng(11);
    const Dims d{5, 4, 6};
    ad::GradcheckOptions opt;
    auto run = [&](const char* name, ad::GraphFn fn, std::vector<Volume> in) {
        const ad::GradcheckReport r = ad::gradcheck(name, fn, std::move(in), nullptr, opt);
        INFO(name << " " << r.worst << " " << r.max_rel_error);
        CHECK(r.passed);
    };
    run("mse", [](ad::Tape& t, const std::vector<ad::Var>& v) { return loss::mse(t, v[0], v[1]); },
        {random_volume(rng, 1, d), random_volume(rng, 1, d)});
    run("ncc", [](ad::Tape& t, const std::vector<ad::Var>& v) { return loss::ncc(t, v[0], v[1], 3); },
        {random_volume(rng, 1, d, 0, 1), random_volume(rng, 1, d, 0, 1)});
    run("ncc9", [](ad::Tape& t, const std::vector<ad::Var>& v) { return loss::ncc(t, v[0], v[1], 9); },
        {random_volume(rng, 1, d, 0, 1), random_volume(rng, 1, d, 0, 1)});
    run("grad_l2", [](ad::Tape& t, const std::vector<ad::Var>& v) { return loss::grad_l2(t, v[0]); },
        {random_volume(rng, 3, d)});
    run("dice_loss", [](ad::Tape& t, const std::vector<ad::Var>& v) { return loss::dice_loss(t, v[0], v[1]); },
        {random_volume(rng, 2, d, 0, 1), random_volume(rng, 2, d, 0, 1)});
}

TEST_CASE("sequence weights follow gamma^(T-t)") {
    const std::vector<int> scales{0, 0, 0, 1, 1, 1, 2, 2, 3, 3, 4};
    const std::vector<double> w = sequence_weights(scales, 0.7, Supervision::full);
    REQUIRE(w.size() == 11);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(w[i] - std::pow(0.7, 10.0 - i)) < 1e-12);
    CHECK(w[0] == doctest::Approx(0.028247524900).epsilon(1e-10));
    const std::vector<double> last = sequence_weights(scales, 0.7, Supervision::last_of_scale);
    const std::vector<std::size_t> kept{2, 5, 7, 9, 10};
    for (std::size_t i = 0; i < last.size(); ++i) {
        const bool k = std::find(kept.begin(), kept.end(), i) != kept.end();
        CHECK(last[i] == (k ? w[i] : 0.0));
    }
    CHECK(sequence_weights({3}, 0.7, Supervision::full) == std::vector<double>{1.0});
    CHECK_THROWS_AS(sequence_weights({}, 0.7, Supervision::full), ContractError);
}

TEST_CASE("sequence loss: single field, and full >= last-of-scale") {
    std::mt19937_64 rng(13);
    const Dims d{8, 8, 8};
    const Volume f = random_volume(rng, 1, d, 0, 1), m = random_volume(rng, 1, d, 0, 1);
    LossConfig cfg;
    ad::Tape t;
    const ad::Var vf = t.input(f, false), vm = t.input(m, false);
    GraphTrace trace;
    for (int k = 0; k < 6; ++k) {
        trace.fields.push_back(t.input(smooth_field(rng, d, 1.5).volume(), false));
        trace.scale_of.push_back(k / 2);
    }
    GraphTrace one;
    one.fields = {trace.fields[0]};
    one.scale_of = {0};
    const double l1 = t.value(sequence_loss(t, one, vf, vm, cfg))[0];
    const double direct = t.value(single_loss(t, trace.fields[0], vf, vm, cfg))[0];
    CHECK(l1 == direct);
    const double full = t.value(sequence_loss(t, trace, vf, vm, cfg))[0];
    cfg.supervision = Supervision::last_of_scale;
    const double last = t.value(sequence_loss(t, trace, vf, vm, cfg))[0];
    CHECK(full >= last);
    CHECK(last > 0.0);
    LossConfig bad;
    bad.gamma = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad.gamma = 0.7;
    bad.lambda = -1;
    CHECK_THROWS_AS(bad.validate(), ContractError);
}
