#include <cmath>
#include <random>

#include "doctest.h"
#include "recorr/encoder.hpp"
#include "recorr/kernels.hpp"
#include "recorr/local_search.hpp"
#include "recorr/metrics.hpp"
#include "recorr/pyramid.hpp"
#include "recorr/synthdata.hpp"
#include "recorr/updater.hpp"
#include "oracles.hpp"

using namespace recorr;
using namespace testing_support;

namespace {


// Zero-padded "same" convolution, stride 1, straight loops.
Volume conv_oracle(const Volume& in, const std::vector<double>& w, const std::vector<double>& b, int out_c,
                   std::array<int, 3> k) {
    const Dims d = in.dims();
    const int C = in.channels();
    Volume out(out_c, d);
    for (int o = 0; o < out_c; ++o)
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.h; ++y)
                for (int x = 0; x < d.w; ++x) {
                    double acc = b[o];
                    for (int c = 0; c < C; ++c)
                        for (int a = 0; a < k[0]; ++a)
                            for (int e = 0; e < k[1]; ++e)
                                for (int f = 0; f < k[2]; ++f) {
                                    const int zz = z + a - k[0] / 2, yy = y + e - k[1] / 2, xx = x + f - k[2] / 2;
                                    if (zz < 0 || yy < 0 || xx < 0 || zz >= d.d || yy >= d.h || xx >= d.w) continue;
                                    acc += w[(((o * C + c) * k[0] + a) * k[1] + e) * k[2] + f] * in.at(c, zz, yy, xx);
                                }
                    out.at(o, z, y, x) = acc;
                }
    return out;
}

Volume shifted(const Volume& v, int dz, int dy, int dx) {
    Volume out(v.channels(), v.dims());
    const Dims d = v.dims();
    for (int c = 0; c < v.channels(); ++c)
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.h; ++y)
                for (int x = 0; x < d.w; ++x) {
                    const int zz = z - dz, yy = y - dy, xx = x - dx;
                    if (zz >= 0 && yy >= 0 && xx >= 0 && zz < d.d && yy < d.h && xx < d.w)
                        out.at(c, z, y, x) = v.at(c, zz, yy, xx);
                }
    return out;
}


} // namespace

TEST_CASE("encoder level shapes, determinism and zero input") {
    ModelConfig cfg;
    ad::ParamStore p = init_params(cfg, 3);
    std::mt19937_64 rng(1);
    const Volume img = random_volume(rng, 1, Dims{32, 32, 32}, 0, 1);
    const FeaturePyramid a = encode(img, p, cfg), b = encode(img, p, cfg);
    for (int level = 0; level < 5; ++level) {
        const int e = 32 >> (4 - level);
        CHECK(a.levels[level].dims() == Dims{e, e, e});
        CHECK(a.levels[level].channels() == cfg.level_channels(level));
        CHECK(a.levels[level] == b.levels[level]);
    }
    CHECK(cfg.level_channels(4) == 8);
    CHECK(cfg.level_channels(0) == 32);
    const FeaturePyramid z = encode(Volume(1, Dims{32, 32, 32}), p, cfg);
    for (int level = 0; level < 5; ++level)
        for (double v : z.levels[level].values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(encode(Volume(1, Dims{24, 32, 32}), p, cfg), ContractError);
}

TEST_CASE("encoder is translation covariant away from the border") {
    ModelConfig cfg;
    ad::ParamStore p = init_params(cfg, 4);
    std::mt19937_64 rng(2);
    Volume img(1, Dims{32, 32, 32});
    const Volume noise = random_volume(rng, 1, Dims{32, 32, 32}, 0, 1);
    for (int z = 8; z < 22; ++z)
        for (int y = 8; y < 22; ++y)
            for (int x = 8; x < 22; ++x) img.at(0, z, y, x) = noise.at(0, z, y, x);
    const FeaturePyramid a = encode(img, p, cfg), b = encode(shifted(img, 2, -2, 2), p, cfg);
    // full resolution moves by the shift, 1/2 by half of it
    const Volume s4 = shifted(a.levels[4], 2, -2, 2), s3 = shifted(a.levels[3], 1, -1, 1);
    CHECK(max_abs_diff(s4.values(), b.levels[4].values()) < 1e-12);
    CHECK(max_abs_diff(s3.values(), b.levels[3].values()) < 1e-12);
}

TEST_CASE("split_context halves the channels") {
    std::mt19937_64 rng(3);
    const Volume f = random_volume(rng, 4, Dims{3, 3, 3}, -2, 2);
    const auto [h, fc] = split_context(f, 0.2);
    CHECK(h.channels() == 2);
    CHECK(fc.channels() == 2);
    for (std::size_t i = 0; i < h.size(); ++i) {
        CHECK(h[i] == std::tanh(f[i]));
        const double v = f[h.size() + i];
        CHECK(fc[i] == (v > 0 ? v : 0.2 * v));
    }
    CHECK_THROWS_AS(split_context(random_volume(rng, 3, Dims{2, 2, 2})), ContractError);
}

TEST_CASE("local_search matches the nested-loop oracle") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> ext(1, 6), chans(1, 8);
    const int radii[3] = {1, 3, 5};
    for (int trial = 0; trial < 60; ++trial) {
        const Dims d{ext(rng), ext(rng), ext(rng)};
        const int C = chans(rng), r = radii[trial % 3];
        const Volume f = random_volume(rng, C, d), m = random_volume(rng, C, d);
        const DisplacementField u(random_volume(rng, 3, d, -1.5, 1.5));
        const CorrelationVolume got = local_search(f, m, u, r);
        CHECK(got.channels() == r * r * r);
        CHECK(search_radius(got) == r);
        CHECK(max_abs_diff(got.values(), correlation_oracle(f, m, u, r).values()) < 1e-6);
    }
}

TEST_CASE("local_search on constant features and a shifted pattern") {
    const Dims d{5, 5, 5};
    const Volume ones = Volume::filled(2, d, 1.0);
    const CorrelationVolume c = local_search(ones, ones, DisplacementField(d), 3);
    CHECK(c.channels() == 27);
    for (int k = 0; k < 27; ++k) CHECK(c.at(k, 2, 2, 2) == 1.0);
    // corner voxel: offsets reaching outside the grid see zero padding
    CHECK(c.at(0, 0, 0, 0) == 0.0);
    CHECK(c.at(26, 0, 0, 0) == 1.0);

    std::mt19937_64 rng(5);
    const Volume f = random_volume(rng, 64, Dims{8, 8, 8});
    const Volume m = shifted(f, 0, 1, -1); // moving content sits at p + (0, 1, -1)
    const CorrelationVolume corr = local_search(f, m, DisplacementField(f.dims()), 3);
    const int want = (0 + 1) * 9 + (1 + 1) * 3 + (-1 + 1);
    int best = 0;
    for (int k = 1; k < 27; ++k)
        if (corr.at(k, 4, 4, 4) > corr.at(best, 4, 4, 4)) best = k;
    CHECK(best == want);
}

TEST_CASE("soft_argmax: uniform, saturated and oracle") {
    const Dims d{2, 2, 2};
    const DisplacementField flat = soft_argmax(Volume::filled(27, d, 0.3), 0.1);
    for (double v : flat.volume().values()) CHECK(std::abs(v) < 1e-15);
    Volume peaked(27, d);
    for (std::size_t i = 0; i < d.voxels(); ++i) peaked[5 * d.voxels() + i] = 10.0;
    const DisplacementField sat = soft_argmax(peaked, 0.1);
    const auto off = kernels::correlation_offset(3, 5);
    for (int a = 0; a < 3; ++a) CHECK(sat.at(1, 1, 1)[a] == doctest::Approx(off[a]).epsilon(1e-12));

    std::mt19937_64 rng(6);
    const Volume s = random_volume(rng, 27, d);
    const DisplacementField got = soft_argmax(s, 0.5);
    for (std::size_t i = 0; i < d.voxels(); ++i) {
        double z = 0, e[3] = {0, 0, 0};
        for (int k = 0; k < 27; ++k) {
            const double w = std::exp(s[k * d.voxels() + i] / 0.5);
            z += w;
            const auto o = kernels::correlation_offset(3, k);
            for (int a = 0; a < 3; ++a) e[a] += w * o[a];
        }
        for (int a = 0; a < 3; ++a) CHECK(std::abs(got.volume()[a * d.voxels() + i] - e[a] / z) < 1e-12);
    }
}

TEST_CASE("gru cell: gate extremes are exact, dense oracle") {
    const Dims d{3, 4, 5};
    const int hid = 2, mc = 3;
    std::mt19937_64 rng(7);
    ad::ParamStore p;
    for (char g : {'z', 'r', 'h'}) {
        ad::Param& w = p.add(names::gru(0, 1, g, 'w'), {hid, 2 * hid + mc, 1, 5, 1});
        ad::Param& b = p.add(names::gru(0, 1, g, 'b'), {hid});
        for (double& v : w.value) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
        for (double& v : b.value) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    }
    const Volume h = random_volume(rng, hid, d), m = random_volume(rng, mc, d), fc = random_volume(rng, hid, d);
    auto run = [&]() {
        ad::Tape t;
        return t.value(gru_cell(t, t.input(h, false), t.input(m, false), t.input(fc, false), p, 0, 1));
    };

    // dense oracle
    const auto& P = p.entries();
    const std::array<int, 3> k{1, 5, 1};
    Volume hx(2 * hid + mc, d);
    std::copy(h.values().begin(), h.values().end(), hx.values().begin());
    std::copy(m.values().begin(), m.values().end(), hx.values().begin() + h.size());
    std::copy(fc.values().begin(), fc.values().end(), hx.values().begin() + h.size() + m.size());
    const Volume zpre = conv_oracle(hx, P.at(names::gru(0, 1, 'z', 'w')).value, P.at(names::gru(0, 1, 'z', 'b')).value, hid, k);
    const Volume rpre = conv_oracle(hx, P.at(names::gru(0, 1, 'r', 'w')).value, P.at(names::gru(0, 1, 'r', 'b')).value, hid, k);
    Volume rh = hx;
    for (std::size_t i = 0; i < h.size(); ++i) rh[i] = h[i] / (1 + std::exp(-rpre[i]));
    const Volume cpre = conv_oracle(rh, P.at(names::gru(0, 1, 'h', 'w')).value, P.at(names::gru(0, 1, 'h', 'b')).value, hid, k);
    const Volume got = run();
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double z = 1 / (1 + std::exp(-zpre[i]));
        CHECK(std::abs(got[i] - ((1 - z) * h[i] + z * std::tanh(cpre[i]))) < 1e-12);
    }

    for (double& v : p.get(names::gru(0, 1, 'z', 'w')).value) v = 0.0;
    for (double& v : p.get(names::gru(0, 1, 'z', 'b')).value) v = -1000.0;
    CHECK(run() == h);
    for (double& v : p.get(names::gru(0, 1, 'z', 'b')).value) v = 1000.0;
    const Volume full = run();
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(std::abs(full[i] - std::tanh(cpre[i])) < 1e-12);
}

TEST_CASE("cold start: zero heads give the identity for every supervised field") {
    ModelConfig cfg;
    ad::ParamStore p = init_params(cfg, 8);
    for (int s = 0; s < 4; ++s)
        for (double v : p.get(names::head(s, 'w')).value) CHECK(v == 0.0);
    PhantomSpec spec;
    spec.seed = 2;
    const Phantom ph = make_phantom(spec);
    const PairSample pair = make_pair(ph.image, ph.labels, PerturbSpec{});
    const RegistrationTrace tr = register_images(pair.fixed, pair.moving, &p, cfg);
    CHECK(tr.fields.size() == 11);
    CHECK(cfg.schedule.trace_length() == 11);
    for (const auto& f : tr.fields)
        for (double v : f.volume().values()) CHECK(v == 0.0);
    CHECK(tr.diagnostics.size() == 11);
    CHECK(tr.diagnostics.back().scale == 4);
    CHECK(tr.diagnostics[2].iteration == 2);

    cfg.variant = Variant::diffeo;
    const RegistrationTrace td = register_images(pair.fixed, pair.moving, &p, cfg);
    for (double v : td.final_field.volume().values()) CHECK(v == 0.0);

    IterationSchedule s;
    s.iterations = {0, 0, 0, 0};
    s.refine = true;
    CHECK_THROWS_AS(s.validate(), ContractError);
}

TEST_CASE("scaling and squaring against Euler integration") {
    const Dims d{16, 16, 16};
    const DisplacementField zero = exp_field(DisplacementField(d), 5);
    for (double v : zero.volume().values()) CHECK(v == 0.0);

    const DisplacementField c = DisplacementField::constant(d, {0.0, 0.0, 4.0});
    const DisplacementField ec = exp_field(c, 5);
    CHECK(interior_error(ec, c.volume(), 5, 1024) < 1e-3);

    // on a smooth velocity the error shrinks as squarings are added
    std::mt19937_64 rng(9);
    const DisplacementField v = smooth_field(rng, d, 1.0);
    double prev = 1e9;
    for (int steps : {1, 3, 5, 7}) {
        const double e = interior_error(exp_field(v, steps), v.volume(), 3, 1024);
        CHECK(e < prev);
        prev = e;
    }
    CHECK(prev < 2e-2);
}

TEST_CASE("exp_field outputs are fold-free on random smooth velocities") {
    std::mt19937_64 rng(10);
    const Dims d{16, 16, 16};
    for (int trial = 0; trial < 20; ++trial) {
        const DisplacementField v = smooth_field(rng, d, 3.0);
        CHECK(fold_fraction(jacobian_det(exp_field(v, 5))) == 0.0);
    }
}

TEST_CASE("direct mode: identical pair stays put, translation is recovered") {
    PhantomSpec spec;
    spec.seed = 5;
    const Phantom ph = make_phantom(spec);
    ModelConfig cfg;
    cfg.mode = Mode::direct;
    const RegistrationTrace same = register_images(ph.image, ph.image, nullptr, cfg);
    CHECK(mean_magnitude(same.final_field.volume()) < 0.05);

    PerturbSpec t;
    t.kind = PerturbKind::translation;
    t.translation = {0.0, 4.0, -3.0};
    const PairSample pair = make_pair(ph.image, ph.labels, t);
    cfg.schedule.iterations = {1, 1, 1, 1};
    const RegistrationTrace tr = register_images(pair.fixed, pair.moving, nullptr, cfg);
    const LabelMap fg = pair.labels_fixed;
    std::vector<double> epe;
    for (const auto& f : tr.fields) epe.push_back(endpoint_error(f, pair.true_field, &fg));
    CHECK(epe.back() < 1.0);
    CHECK(epe.back() < epe.front());
}
