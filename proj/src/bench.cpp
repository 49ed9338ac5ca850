#include "recorr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>

#include "recorr/kernels.hpp"
#include "recorr/rng.hpp"

namespace recorr {

using nlohmann::json;

namespace {

double best_ms(int repeats, const std::function<void()>& fn) {
    fn(); // warm caches and page in buffers
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

std::vector<double> random_values(Rng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

} // namespace

json run_bench(const BenchOptions& opt) {
    require(opt.dims >= 4 && opt.channels >= 1 && opt.repeats >= 1, "bench: dims >= 4, channels >= 1, repeats >= 1");
    for (int r : opt.radii) require(r >= 1 && r % 2 == 1, "bench: radii must be odd and >= 1");
    Rng rng(opt.seed);
    const Dims d{opt.dims, opt.dims, opt.dims};
    const std::size_t vox = d.voxels();
    const int c = opt.channels;
    const auto fixed = random_values(rng, c * vox, -1, 1), moving = random_values(rng, c * vox, -1, 1);

    json out = {{"dims", opt.dims}, {"channels", c}, {"repeats", opt.repeats}, {"seed", opt.seed}};
    json corr = json::array();
    std::map<int, double> omp_ms;
    for (int r : opt.radii) {
        std::vector<double> o(static_cast<std::size_t>(r) * r * r * vox);
        json row = {{"radius", r}, {"offsets", r * r * r}};
        omp_ms[r] = best_ms(opt.repeats, [&] { kernels::correlation_forward(c, d, r, fixed, moving, o); });
        row["omp_ms"] = omp_ms[r];
        if (opt.serial)
            row["serial_ms"] = best_ms(opt.repeats, [&] { kernels::serial::correlation_forward(c, d, r, fixed, moving, o); });
        corr.push_back(row);
    }
    out["correlation"] = corr;
    json ratios = json::array();
    for (std::size_t i = 1; i < opt.radii.size(); ++i) {
        const int a = opt.radii[i - 1], b = opt.radii[i];
        const double expected = static_cast<double>(b * b * b) / (a * a * a);
        const double measured = omp_ms[b] / omp_ms[a];
        ratios.push_back({{"from", a}, {"to", b}, {"measured", measured}, {"expected", expected},
                          {"within_2x", measured >= expected / 2 && measured <= expected * 2}});
    }
    out["correlation_ratios"] = ratios;

    auto field = random_values(rng, 3 * vox, -2.5, 2.5);
    std::vector<double> w(c * vox);
    json warp = {{"omp_ms", best_ms(opt.repeats, [&] { kernels::warp_forward(c, d, moving, field, w); })}};
    if (opt.serial)
        warp["serial_ms"] = best_ms(opt.repeats, [&] { kernels::serial::warp_forward(c, d, moving, field, w); });
    out["warp"] = warp;

    const kernels::ConvShape s = kernels::make_conv_shape(c, c, d, {3, 3, 3}, 1);
    const auto weight = random_values(rng, s.weight_count(), -0.1, 0.1), bias = random_values(rng, c, -0.1, 0.1);
    std::vector<double> co(c * vox);
    json conv = {{"omp_ms", best_ms(opt.repeats, [&] { kernels::conv3d_forward(s, fixed, weight, bias, co); })}};
    if (opt.serial)
        conv["serial_ms"] = best_ms(opt.repeats, [&] { kernels::serial::conv3d_forward(s, fixed, weight, bias, co); });
    out["conv3d"] = conv;
    return out;
}

} // namespace recorr
