#include "recorr/audit.hpp"

#include "recorr/local_search.hpp"
#include "recorr/losses.hpp"
#include "recorr/pyramid.hpp"
#include "recorr/rng.hpp"
#include "recorr/synthdata.hpp"

namespace recorr {

namespace {

using ad::Tape;
using ad::Var;
using Inputs = std::vector<Var>;

Volume random_volume(Rng& rng, int channels, Dims dims, double lo = -1.0, double hi = 1.0) {
    Volume v(channels, dims);
    for (double& x : v.values()) x = rng.uniform(lo, hi);
    return v;
}

// Random linear read-out so every output entry carries its own weight.
Var probe(Tape& t, Var x, std::uint64_t seed) {
    Rng rng(seed);
    const Volume& v = t.value(x);
    return ad::sum(t, ad::mul(t, x, t.constant(random_volume(rng, v.channels(), v.dims()))));
}

} // namespace

std::vector<ad::GradcheckReport> gradient_audit(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ad::GradcheckReport> out;
    auto run = [&](const char* name, ad::GraphFn fn, std::vector<Volume> in, ad::ParamStore* params = nullptr,
                   ad::GradcheckOptions o = {}) {
        out.push_back(ad::gradcheck(name, fn, std::move(in), params, o));
    };
    const Dims d{3, 4, 5};
    const std::uint64_t s = rng.next();
    auto vol = [&](int c) { return random_volume(rng, c, d); };
    // fractional displacements clear of the integer lattice
    auto field = [&](Dims dd, double amp) {
        Volume f = random_volume(rng, 3, dd, -amp, amp);
        for (double& v : f.values()) v += 0.3;
        return f;
    };

    run("leaky_relu", [&](Tape& t, const Inputs& v) { return probe(t, ad::leaky_relu(t, v[0]), s); }, {vol(2)});
    run("sigmoid", [&](Tape& t, const Inputs& v) { return probe(t, ad::sigmoid(t, v[0]), s); }, {vol(2)});
    run("tanh", [&](Tape& t, const Inputs& v) { return probe(t, ad::tanh(t, v[0]), s); }, {vol(2)});
    run("add/sub/mul/scale", [&](Tape& t, const Inputs& v) {
        return probe(t, ad::scale(t, ad::mul(t, ad::add(t, v[0], v[1]), ad::sub(t, v[1], v[2])), -1.7), s);
    }, {vol(2), vol(2), vol(2)});
    run("blend", [&](Tape& t, const Inputs& v) {
        return probe(t, ad::blend(t, ad::sigmoid(t, v[0]), v[1], v[2]), s);
    }, {vol(2), vol(2), vol(2)});
    run("concat/split", [&](Tape& t, const Inputs& v) {
        const Var c = ad::concat(t, {v[0], v[1]});
        return probe(t, ad::mul(t, ad::split(t, c, 1, 3), ad::split(t, c, 0, 2)), s);
    }, {vol(1), vol(2)});
    run("upsample2", [&](Tape& t, const Inputs& v) { return probe(t, ad::upsample2(t, v[0]), s); }, {vol(2)});
    run("mean", [&](Tape& t, const Inputs& v) { return ad::mean(t, ad::mul(t, v[0], v[0])); }, {vol(3)});
    run("warp", [&](Tape& t, const Inputs& v) { return probe(t, ad::warp(t, v[0], v[1]), s); },
        {vol(2), field(d, 0.45)});
    for (int r : {1, 3, 5}) {
        const std::string name = "correlation r=" + std::to_string(r);
        run(name.c_str(), [&](Tape& t, const Inputs& v) { return probe(t, ad::correlation(t, v[0], v[1], r), s); },
            {vol(3), vol(3)});
    }
    run("local_search", [&](Tape& t, const Inputs& v) { return probe(t, local_search(t, v[0], v[1], v[2], 3), s); },
        {vol(2), vol(2), field(d, 0.45)});

    {
        ad::ParamStore store;
        for (auto& [name, shape] : std::vector<std::pair<std::string, std::vector<int>>>{
                 {"c.w", {3, 2, 3, 3, 3}}, {"c.b", {3}}, {"s.w", {2, 2, 3, 3, 3}}, {"s.b", {2}},
                 {"a.w", {2, 3, 1, 1, 3}}, {"a.b", {2}}, {"b.w", {2, 2, 1, 3, 1}}, {"b.b", {2}},
                 {"e.w", {1, 2, 3, 1, 1}}, {"e.b", {1}}}) {
            ad::Param& p = store.add(name, shape);
            for (double& v : p.value) v = rng.uniform(-0.5, 0.5);
        }
        const Dims dc{4, 5, 4};
        run("conv3d (plain, strided, separable)", [&](Tape& t, const Inputs& v) {
            auto P = [&](const char* n) { return t.param(store.get(n)); };
            const Var x = ad::leaky_relu(t, ad::conv3d(t, v[0], P("c.w"), P("c.b"), 3, {3, 3, 3}));
            const Var y = ad::conv3d(t, v[0], P("s.w"), P("s.b"), 2, {3, 3, 3}, 2);
            const Var z = ad::separable_conv3d(t, x, {P("a.w"), P("b.w"), P("e.w")}, {P("a.b"), P("b.b"), P("e.b")},
                                               2, 1, 3);
            return ad::add(t, probe(t, z, s), probe(t, y, s + 1));
        }, {random_volume(rng, 2, dc)}, &store);
    }

    const Dims de{6, 6, 6};
    run("exp_field", [&](Tape& t, const Inputs& v) { return probe(t, exp_field(t, v[0], 5), s); },
        {random_volume(rng, 3, de, -0.8, 0.8)});
    run("upsample_field", [&](Tape& t, const Inputs& v) { return probe(t, upsample_field(t, v[0]), s); },
        {random_volume(rng, 3, d)});

    const Dims dl{5, 4, 6};
    run("loss mse", [](Tape& t, const Inputs& v) { return loss::mse(t, v[0], v[1]); },
        {random_volume(rng, 1, dl), random_volume(rng, 1, dl)});
    run("loss ncc w3", [](Tape& t, const Inputs& v) { return loss::ncc(t, v[0], v[1], 3); },
        {random_volume(rng, 1, dl, 0, 1), random_volume(rng, 1, dl, 0, 1)});
    run("loss ncc w9", [](Tape& t, const Inputs& v) { return loss::ncc(t, v[0], v[1], 9); },
        {random_volume(rng, 1, dl, 0, 1), random_volume(rng, 1, dl, 0, 1)});
    run("loss grad_l2", [](Tape& t, const Inputs& v) { return loss::grad_l2(t, v[0]); }, {random_volume(rng, 3, dl)});
    run("loss dice", [](Tape& t, const Inputs& v) { return loss::dice_loss(t, v[0], v[1]); },
        {random_volume(rng, 2, dl, 0, 1), random_volume(rng, 2, dl, 0, 1)});

    // Composed network. 8^3 phantom content sits in a 16^3 grid (the encoder
    // halves four times); only scales 1/4 and 1/2 iterate.
    {
        ModelConfig cfg;
        cfg.schedule.iterations = {0, 0, 1, 1};
        cfg.schedule.refine = false;
        ad::ParamStore params = init_params(cfg, rng.next());
        for (auto& [name, p] : params.entries())
            for (double& v : p.value) v += rng.uniform(-0.05, 0.05);
        PhantomSpec ps;
        ps.dims = {16, 16, 16};
        ps.seed = rng.next();
        const Phantom ph = make_phantom(ps);
        Volume fixed(1, ps.dims), moving(1, ps.dims);
        for (int z = 0; z < 8; ++z)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    fixed.at(0, z + 4, y + 4, x + 4) = ph.image.at(0, 2 * z, 2 * y, 2 * x);
                    moving.at(0, z + 4, y + 4, x + 4) = ph.image.at(0, 2 * z + 1, 2 * y, 2 * x + 1);
                }
        const Volume onehot_f = gaussian_smooth(one_hot(ph.labels.values(), ps.dims, ps.label_count), 1.0);
        LossConfig lc;
        lc.dice_weight = 0.5;
        ad::GradcheckOptions o;
        o.max_probes = 3;
        o.seed = rng.next();
        run("network (2 scales, 8^3)", [&](Tape& t, const Inputs& v) {
            const GraphTrace trace = register_graph(t, v[0], v[1], params, cfg);
            LabelVars labels{t.constant(onehot_f), v[2]};
            return sequence_loss(t, trace, v[0], v[1], lc, &labels);
        }, {fixed, moving, onehot_f}, &params, o);
    }
    return out;
}

} // namespace recorr
