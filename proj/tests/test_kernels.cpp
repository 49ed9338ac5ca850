#include <omp.h>

#include <random>
#include <vector>

#include "doctest.h"
#include "recorr/kernels.hpp"
#include "test_support.hpp"

using namespace recorr;
using namespace testing_support;
namespace k = recorr::kernels;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

// Zero-padded convolution written from the definition.
std::vector<double> conv_oracle(const k::ConvShape& s, const std::vector<double>& in, const std::vector<double>& w,
                                const std::vector<double>& b) {
    std::vector<double> out(static_cast<std::size_t>(s.out_channels) * s.out.voxels(), 0.0);
    for (int o = 0; o < s.out_channels; ++o)
        for (int z = 0; z < s.out.d; ++z)
            for (int y = 0; y < s.out.h; ++y)
                for (int x = 0; x < s.out.w; ++x) {
                    double acc = b.empty() ? 0.0 : b[o];
                    for (int i = 0; i < s.in_channels; ++i)
                        for (int a = 0; a < s.kernel[0]; ++a)
                            for (int bb = 0; bb < s.kernel[1]; ++bb)
                                for (int c = 0; c < s.kernel[2]; ++c) {
                                    const int zz = z * s.stride + a - s.pad[0];
                                    const int yy = y * s.stride + bb - s.pad[1];
                                    const int xx = x * s.stride + c - s.pad[2];
                                    if (zz < 0 || yy < 0 || xx < 0 || zz >= s.in.d || yy >= s.in.h || xx >= s.in.w)
                                        continue;
                                    const double wv =
                                        w[(((static_cast<std::size_t>(o) * s.in_channels + i) * s.kernel[0] + a) *
                                               s.kernel[1] + bb) * s.kernel[2] + c];
                                    acc += wv * in[((static_cast<std::size_t>(i) * s.in.d + zz) * s.in.h + yy) *
                                                       s.in.w + xx];
                                }
                    out[((static_cast<std::size_t>(o) * s.out.d + z) * s.out.h + y) * s.out.w + x] = acc;
                }
    return out;
}

struct ConvCase {
    int in_c, out_c;
    Dims dims;
    std::array<int, 3> kernel;
    int stride;
};

const ConvCase kConvCases[] = {
    {1, 8, {8, 8, 8}, {3, 3, 3}, 1},  {3, 4, {5, 6, 7}, {3, 3, 3}, 1}, {4, 2, {4, 5, 6}, {1, 1, 5}, 1},
    {4, 2, {6, 4, 5}, {1, 5, 1}, 1},  {4, 2, {5, 6, 4}, {5, 1, 1}, 1}, {2, 3, {8, 8, 8}, {3, 3, 3}, 2},
    {3, 2, {7, 5, 6}, {3, 3, 3}, 2},  {5, 3, {3, 3, 3}, {1, 1, 1}, 1}, {2, 2, {1, 1, 9}, {3, 3, 3}, 1},
};

} // namespace

TEST_CASE("conv forward: OpenMP and serial kernels match the definition") {
    std::mt19937_64 rng(11);
    for (const auto& c : kConvCases) {
        const auto s = k::make_conv_shape(c.in_c, c.out_c, c.dims, c.kernel, c.stride);
        const auto in = random_vec(rng, static_cast<std::size_t>(c.in_c) * c.dims.voxels());
        const auto w = random_vec(rng, s.weight_count());
        const auto b = random_vec(rng, c.out_c);
        const auto ref = conv_oracle(s, in, w, b);
        std::vector<double> fast(ref.size()), slow(ref.size());
        k::conv3d_forward(s, in, w, b, fast);
        k::serial::conv3d_forward(s, in, w, b, slow);
        CHECK(max_abs_diff(fast, ref) < 1e-12);
        CHECK(max_abs_diff(slow, ref) < 1e-12);
    }
}

TEST_CASE("conv stride-2 output dims follow the floor formula") {
    CHECK(k::make_conv_shape(1, 1, Dims{32, 32, 32}, {3, 3, 3}, 2).out == Dims{16, 16, 16});
    CHECK(k::make_conv_shape(1, 1, Dims{7, 5, 6}, {3, 3, 3}, 2).out == Dims{4, 3, 3});
    CHECK_THROWS_AS(k::make_conv_shape(1, 1, Dims{4, 4, 4}, {2, 3, 3}, 1), ContractError);
    CHECK_THROWS_AS(k::make_conv_shape(1, 1, Dims{4, 4, 4}, {3, 3, 3}, 3), ContractError);
}

TEST_CASE("conv backward kernels are adjoint to the forward and agree across implementations") {
    std::mt19937_64 rng(12);
    for (const auto& c : kConvCases) {
        const auto s = k::make_conv_shape(c.in_c, c.out_c, c.dims, c.kernel, c.stride);
        const std::size_t n_in = static_cast<std::size_t>(c.in_c) * c.dims.voxels();
        const std::size_t n_out = static_cast<std::size_t>(c.out_c) * s.out.voxels();
        const auto in = random_vec(rng, n_in);
        const auto w = random_vec(rng, s.weight_count());
        const auto g = random_vec(rng, n_out);

        std::vector<double> gi(n_in, 0.0), gi_s(n_in, 0.0);
        k::conv3d_backward_input(s, g, w, gi);
        k::serial::conv3d_backward_input(s, g, w, gi_s);
        CHECK(max_abs_diff(gi, gi_s) < 1e-12);

        // <g, conv(x)> = <conv^T(g), x> with no bias
        std::vector<double> y(n_out);
        k::conv3d_forward(s, in, w, {}, y);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < n_out; ++i) lhs += g[i] * y[i];
        for (std::size_t i = 0; i < n_in; ++i) rhs += gi[i] * in[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

        std::vector<double> gw(s.weight_count(), 0.0), gw_s(s.weight_count(), 0.0);
        std::vector<double> gb(c.out_c, 0.0), gb_s(c.out_c, 0.0);
        k::conv3d_backward_weight(s, g, in, gw, gb);
        k::serial::conv3d_backward_weight(s, g, in, gw_s, gb_s);
        CHECK(max_abs_diff(gw, gw_s) < 1e-11);
        CHECK(max_abs_diff(gb, gb_s) < 1e-11);
        // <g, conv_w(x)> is linear in w: sum over weights of grad*w equals lhs
        double wsum = 0;
        for (std::size_t i = 0; i < gw.size(); ++i) wsum += gw[i] * w[i];
        CHECK(wsum == doctest::Approx(lhs).epsilon(1e-12));
    }
}

TEST_CASE("warp kernels agree across implementations") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 6; ++trial) {
        const Dims d{4 + trial % 3, 5, 3 + trial};
        const int ch = 1 + trial % 3;
        const auto img = random_vec(rng, ch * d.voxels());
        auto field = random_vec(rng, 3 * d.voxels());
        for (double& f : field) f *= 3.0; // reach the clamped border too
        const auto g = random_vec(rng, ch * d.voxels());

        std::vector<double> a(ch * d.voxels()), b(ch * d.voxels());
        k::warp_forward(ch, d, img, field, a);
        k::serial::warp_forward(ch, d, img, field, b);
        CHECK(max_abs_diff(a, b) < 1e-13);

        std::vector<double> gi(img.size(), 0.0), gi_s(img.size(), 0.0), gf(field.size(), 0.0), gf_s(field.size(), 0.0);
        k::warp_backward(ch, d, img, field, g, gi, gf);
        k::serial::warp_backward(ch, d, img, field, g, gi_s, gf_s);
        CHECK(max_abs_diff(gi, gi_s) < 1e-12);
        CHECK(max_abs_diff(gf, gf_s) < 1e-12);
    }
}

TEST_CASE("correlation kernels agree across implementations") {
    std::mt19937_64 rng(14);
    for (int r : {1, 3, 5}) {
        const Dims d{4, 6, 5};
        const int ch = 3;
        const int taps = r * r * r;
        const auto f = random_vec(rng, ch * d.voxels());
        const auto m = random_vec(rng, ch * d.voxels());
        const auto g = random_vec(rng, taps * d.voxels());
        std::vector<double> a(taps * d.voxels()), b(taps * d.voxels());
        k::correlation_forward(ch, d, r, f, m, a);
        k::serial::correlation_forward(ch, d, r, f, m, b);
        CHECK(max_abs_diff(a, b) < 1e-14);

        std::vector<double> gf(f.size(), 0.0), gm(m.size(), 0.0), gf_s(f.size(), 0.0), gm_s(m.size(), 0.0);
        k::correlation_backward(ch, d, r, f, m, g, gf, gm);
        k::serial::correlation_backward(ch, d, r, f, m, g, gf_s, gm_s);
        CHECK(max_abs_diff(gf, gf_s) < 1e-13);
        CHECK(max_abs_diff(gm, gm_s) < 1e-13);
    }
}

TEST_CASE("correlation offsets run lexicographically over (dz, dy, dx)") {
    CHECK(k::correlation_offset(3, 0) == std::array<int, 3>{-1, -1, -1});
    CHECK(k::correlation_offset(3, 1) == std::array<int, 3>{-1, -1, 0});
    CHECK(k::correlation_offset(3, 13) == std::array<int, 3>{0, 0, 0});
    CHECK(k::correlation_offset(3, 26) == std::array<int, 3>{1, 1, 1});
    CHECK(k::correlation_offset(5, 0) == std::array<int, 3>{-2, -2, -2});
    CHECK(k::correlation_offset(1, 0) == std::array<int, 3>{0, 0, 0});
}

TEST_CASE("parallel kernels are bit-identical for any thread count") {
    std::mt19937_64 rng(15);
    const Dims d{8, 8, 8};
    const auto s = k::make_conv_shape(4, 6, d, {3, 3, 3}, 1);
    const auto in = random_vec(rng, 4 * d.voxels());
    const auto w = random_vec(rng, s.weight_count());
    const auto g = random_vec(rng, 6 * d.voxels());
    auto run = [&](int threads) {
        omp_set_num_threads(threads);
        std::vector<double> out(6 * d.voxels()), gi(in.size(), 0.0), gw(w.size(), 0.0), corr(27 * d.voxels());
        k::conv3d_forward(s, in, w, {}, out);
        k::conv3d_backward_input(s, g, w, gi);
        k::conv3d_backward_weight(s, g, in, gw, {});
        k::correlation_forward(4, d, 3, in, in, corr);
        out.insert(out.end(), gi.begin(), gi.end());
        out.insert(out.end(), gw.begin(), gw.end());
        out.insert(out.end(), corr.begin(), corr.end());
        return out;
    };
    const auto one = run(1);
    const auto four = run(4);
    omp_set_num_threads(omp_get_num_procs());
    CHECK(one == four);
}
