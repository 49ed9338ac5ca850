#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "recorr/pyramid.hpp"
#include "recorr/synthdata.hpp"

using namespace recorr;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("recorr_synth_" + name);
    std::filesystem::remove_all(p);
    return p;
}

} // namespace

TEST_CASE("phantoms are deterministic, bounded and label every region") {
    PhantomSpec spec;
    spec.seed = 17;
    const Phantom a = make_phantom(spec), b = make_phantom(spec);
    CHECK(a.image == b.image);
    CHECK(a.labels == b.labels);
    for (double v : a.image.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        spec.seed = seed;
        const Phantom p = make_phantom(spec);
        CHECK(p.labels.label_set().size() == static_cast<std::size_t>(spec.label_count));
        for (int l = 0; l < spec.label_count; ++l) CHECK(p.labels.count(l) > 0);
    }
    spec.dims = Dims{8, 32, 32};
    CHECK_THROWS_AS(make_phantom(spec), ContractError);
}

TEST_CASE("perturbation kinds") {
    PhantomSpec spec;
    spec.seed = 3;
    const Phantom ph = make_phantom(spec);

    PerturbSpec none;
    none.kind = PerturbKind::none;
    const PairSample n = make_pair(ph.image, ph.labels, none);
    CHECK(n.fixed == n.moving);
    CHECK(n.labels_fixed == n.labels_moving);
    for (double v : n.true_field.volume().values()) CHECK(v == 0.0);

    PerturbSpec tr;
    tr.kind = PerturbKind::translation;
    tr.translation = {0.0, 0.0, 4.0};
    const PairSample t = make_pair(ph.image, ph.labels, tr);
    for (int z = 0; z < 32; z += 5)
        for (int y = 0; y < 32; y += 3)
            for (int x = 0; x < 32; x += 7) {
                const auto u = t.true_field.at(z, y, x);
                CHECK(u[0] == 0.0);
                CHECK(u[1] == 0.0);
                CHECK(u[2] == 4.0);
            }
    // moving content sits 4 voxels further along x
    CHECK(t.moving.at(0, 16, 16, 20) == ph.image.at(0, 16, 16, 16));

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PerturbSpec svf;
        svf.seed = seed;
        const PairSample s = make_pair(ph.image, ph.labels, svf);
        CHECK(fold_fraction(jacobian_det(s.true_field)) == 0.0);
        CHECK(s.applied_magnitude <= svf.magnitude);
        CHECK(s.applied_magnitude > 0.0);
    }
    PerturbSpec bad;
    bad.svf_factor = 3;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    CHECK(perturb_kind_from_string("affine_scale") == PerturbKind::affine_scale);
    CHECK_THROWS_AS(perturb_kind_from_string("rotation"), ContractError);
}

TEST_CASE("warping the moving image by true_field recovers the fixed image") {
    // On a linear image trilinear resampling is exact, so what remains is the
    // geometric consistency of the construction.
    PhantomSpec spec;
    const Phantom ph = make_phantom(spec);
    Volume ramp(1, ph.image.dims());
    for (int z = 0; z < 32; ++z)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) ramp.at(0, z, y, x) = (z + 2.0 * y + 3.0 * x) / 192.0;
    for (PerturbKind kind : {PerturbKind::svf, PerturbKind::translation, PerturbKind::affine_offset,
                             PerturbKind::affine_scale}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            PerturbSpec p;
            p.kind = kind;
            p.seed = seed;
            if (kind == PerturbKind::translation) p.translation = {1.0, -2.0, 3.0};
            if (kind == PerturbKind::affine_offset || kind == PerturbKind::affine_scale) p.magnitude = 0.1;
            const PairSample s = make_pair(ramp, ph.labels, p);
            const Volume back = warp(s.moving, s.true_field);
            double worst = 0.0;
            for (int z = 6; z < 26; ++z)
                for (int y = 6; y < 26; ++y)
                    for (int x = 6; x < 26; ++x)
                        worst = std::max(worst, std::abs(back.at(0, z, y, x) - s.fixed.at(0, z, y, x)));
            INFO(to_string(kind) << " seed " << seed);
            CHECK(worst < 1e-3);
        }
    }
}

TEST_CASE("datasets are reproducible and round-trip through the manifest") {
    DatasetSpec spec;
    spec.seed = 4;
    spec.train = 3;
    spec.validation = 1;
    spec.test = 2;
    const auto d1 = scratch("a"), d2 = scratch("b");
    const Manifest m1 = generate_dataset(spec, d1);
    generate_dataset(spec, d2);
    CHECK(m1.entries.size() == 6);
    CHECK(m1.split("train").size() == 3);
    CHECK(m1.split("validation").size() == 1);
    CHECK(m1.split("test").size() == 2);
    for (const auto& e : m1.entries) {
        for (const auto& f : {e.fixed, e.moving, e.labels_fixed, e.labels_moving, e.true_field}) {
            std::ifstream a(f, std::ios::binary), b(d2 / f.filename(), std::ios::binary);
            const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
            CHECK(!sa.empty());
            CHECK(sa == sb);
        }
    }
    const Manifest back = read_manifest(d1 / "manifest.json");
    REQUIRE(back.entries.size() == 6);
    const PairSample p = load_pair(back.entries[0]);
    CHECK(p.fixed.dims() == Dims{32, 32, 32});
    CHECK(back.spec == m1.spec);
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
    CHECK_THROWS_AS(read_manifest(d1 / "manifest.json"), DataError);
}
