#include "recorr/losses.hpp"

#include <algorithm>
#include <cmath>

namespace recorr {

std::string to_string(Similarity s) { return s == Similarity::mse ? "mse" : "ncc"; }
std::string to_string(Supervision s) { return s == Supervision::full ? "full" : "last_of_scale"; }

Similarity similarity_from_string(const std::string& s) {
    if (s == "mse") return Similarity::mse;
    if (s == "ncc") return Similarity::ncc;
    throw ContractError("loss.similarity: expected mse or ncc, got '" + s + "'");
}

Supervision supervision_from_string(const std::string& s) {
    if (s == "full") return Supervision::full;
    if (s == "last_of_scale") return Supervision::last_of_scale;
    throw ContractError("loss.supervision: expected full or last_of_scale, got '" + s + "'");
}

void LossConfig::validate() const {
    require(lambda >= 0.0, "loss.lambda must be >= 0");
    require(gamma > 0.0 && gamma <= 1.0, "loss.gamma must be in (0, 1]");
    require(dice_weight >= 0.0, "loss.dice_weight must be >= 0");
    require(ncc_window >= 1 && ncc_window % 2 == 1, "loss.ncc_window must be odd and >= 1");
}

namespace loss {

namespace {

void same(const ad::Tape& t, ad::Var a, ad::Var b, const char* what) {
    const Volume& va = t.value(a);
    const Volume& vb = t.value(b);
    require(va.same_shape(vb), std::string(what) + ": shape mismatch");
}

// Sum over the window clipped to the grid, separable, fixed order.
Volume box_sum(const Volume& v, int radius) {
    const Dims d = v.dims();
    Volume a = v, b(v.channels(), d);
    const int n[3] = {d.d, d.h, d.w};
    const std::size_t step[3] = {static_cast<std::size_t>(d.h) * d.w, static_cast<std::size_t>(d.w), 1};
    for (int axis = 0; axis < 3; ++axis) {
        const std::size_t total = a.size();
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < total; ++i) {
            const std::size_t vox = i % d.voxels();
            const int pos = static_cast<int>(vox / step[axis] % n[axis]);
            const int lo = std::max(0, pos - radius), hi = std::min(n[axis] - 1, pos + radius);
            double acc = 0.0;
            for (int k = lo; k <= hi; ++k) acc += a[i + (k - pos) * static_cast<std::ptrdiff_t>(step[axis])];
            b[i] = acc;
        }
        std::swap(a, b);
    }
    return a;
}

Volume window_counts(Dims d, int radius) {
    Volume c(1, d);
    auto count = [&](int p, int n) { return std::min(n - 1, p + radius) - std::max(0, p - radius) + 1; };
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x)
                c.at(0, z, y, x) = static_cast<double>(count(z, d.d)) * count(y, d.h) * count(x, d.w);
    return c;
}

constexpr double kNccEps = 1e-5;

} // namespace

ad::Var mse(ad::Tape& t, ad::Var a, ad::Var b) {
    same(t, a, b, "mse");
    const ad::Var d = ad::sub(t, a, b);
    return ad::mean(t, ad::mul(t, d, d));
}

ad::Var ncc(ad::Tape& t, ad::Var a, ad::Var b, int window) {
    same(t, a, b, "ncc");
    require(window >= 1 && window % 2 == 1, "ncc: window must be odd");
    const Volume& va = t.value(a);
    const Volume& vb = t.value(b);
    const int r = window / 2;
    const std::size_t n = va.size();
    Volume a2 = va, b2 = vb, ab = va;
    for (std::size_t i = 0; i < n; ++i) {
        a2[i] = va[i] * va[i];
        b2[i] = vb[i] * vb[i];
        ab[i] = va[i] * vb[i];
    }
    const Volume si = box_sum(va, r), sj = box_sum(vb, r), si2 = box_sum(a2, r), sj2 = box_sum(b2, r),
                 sij = box_sum(ab, r);
    const Volume cnt = window_counts(va.dims(), r);
    const std::size_t vox = va.channel_stride();
    // per-voxel partials of cc w.r.t. the five window sums
    Volume d_ij(va.channels(), va.dims()), d_i2(va.channels(), va.dims()), d_j2(va.channels(), va.dims()),
        d_i(va.channels(), va.dims()), d_j(va.channels(), va.dims());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double m = cnt[i % vox];
        const double cross = sij[i] - si[i] * sj[i] / m;
        const double ivar = si2[i] - si[i] * si[i] / m;
        const double jvar = sj2[i] - sj[i] * sj[i] / m;
        const double den = ivar * jvar + kNccEps;
        total += cross * cross / den;
        const double A = 2.0 * cross / den;
        const double bi = -cross * cross * jvar / (den * den);
        const double bj = -cross * cross * ivar / (den * den);
        d_ij[i] = A;
        d_i2[i] = bi;
        d_j2[i] = bj;
        d_i[i] = -A * sj[i] / m - 2.0 * bi * si[i] / m;
        d_j[i] = -A * si[i] / m - 2.0 * bj * sj[i] / m;
    }
    const double count = static_cast<double>(n);
    return t.record("ncc", ad::scalar_volume(1.0 - total / count), {a, b},
                    [=](ad::Tape& tp, const Volume& g) {
                        const double s = -g[0] / count;
                        const Volume bij = box_sum(d_ij, r);
                        const Volume& xa = tp.value(a);
                        const Volume& xb = tp.value(b);
                        if (tp.requires_grad(a)) {
                            const Volume bi2 = box_sum(d_i2, r), bi = box_sum(d_i, r);
                            auto out = tp.grad_buffer(a).values();
                            for (std::size_t i = 0; i < out.size(); ++i)
                                out[i] += s * (bij[i] * xb[i] + 2.0 * bi2[i] * xa[i] + bi[i]);
                        }
                        if (tp.requires_grad(b)) {
                            const Volume bj2 = box_sum(d_j2, r), bj = box_sum(d_j, r);
                            auto out = tp.grad_buffer(b).values();
                            for (std::size_t i = 0; i < out.size(); ++i)
                                out[i] += s * (bij[i] * xa[i] + 2.0 * bj2[i] * xb[i] + bj[i]);
                        }
                    });
}

ad::Var grad_l2(ad::Tape& t, ad::Var field) {
    const Volume& u = t.value(field);
    const Dims d = u.dims();
    require(d.d >= 2 && d.h >= 2 && d.w >= 2, "grad_l2: grid must be at least 2 along every axis");
    const std::size_t step[3] = {static_cast<std::size_t>(d.h) * d.w, static_cast<std::size_t>(d.w), 1};
    const int n[3] = {d.d, d.h, d.w};
    const std::size_t vox = d.voxels();
    // 1 / (3 * number of forward differences along the axis)
    double inv[3];
    for (int axis = 0; axis < 3; ++axis)
        inv[axis] = 1.0 / (3.0 * static_cast<double>(vox / n[axis] * (n[axis] - 1)));
    auto valid = [=](std::size_t v, int axis) { return static_cast<int>(v / step[axis] % n[axis]) + 1 < n[axis]; };
    double total = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
        double acc = 0.0;
        for (int c = 0; c < u.channels(); ++c) {
            const double* p = u.data() + c * vox;
            for (std::size_t v = 0; v < vox; ++v)
                if (valid(v, axis)) {
                    const double diff = p[v + step[axis]] - p[v];
                    acc += diff * diff;
                }
        }
        total += acc * inv[axis];
    }
    return t.record("grad_l2", ad::scalar_volume(total), {field}, [=](ad::Tape& tp, const Volume& g) {
        const Volume& x = tp.value(field);
        auto out = tp.grad_buffer(field).values();
        for (int axis = 0; axis < 3; ++axis) {
            const double s = 2.0 * g[0] * inv[axis];
            for (int c = 0; c < x.channels(); ++c) {
                const std::size_t off = c * vox;
                for (std::size_t v = 0; v < vox; ++v)
                    if (valid(v, axis)) {
                        const double diff = x[off + v + step[axis]] - x[off + v];
                        out[off + v + step[axis]] += s * diff;
                        out[off + v] -= s * diff;
                    }
            }
        }
    });
}

ad::Var dice_loss(ad::Tape& t, ad::Var warped, ad::Var fixed) {
    same(t, warped, fixed, "dice_loss");
    const Volume& a = t.value(warped);
    const Volume& b = t.value(fixed);
    const int channels = a.channels();
    const std::size_t vox = a.channel_stride();
    std::vector<double> inter(channels, 0.0), denom(channels, 0.0);
    for (int c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < vox; ++i) {
            inter[c] += a[c * vox + i] * b[c * vox + i];
            denom[c] += a[c * vox + i] + b[c * vox + i];
        }
    double score = 0.0;
    for (int c = 0; c < channels; ++c) score += (2.0 * inter[c] + 1.0) / (denom[c] + 1.0);
    const double value = 1.0 - score / channels;
    return t.record("dice_loss", ad::scalar_volume(value), {warped, fixed}, [=](ad::Tape& tp, const Volume& g) {
        // d/dx of (2I+1)/(S+1) for an entry x of one side: 2y/(S+1) - (2I+1)/(S+1)^2
        auto grad_side = [&](ad::Var self, ad::Var other) {
            if (!tp.requires_grad(self)) return;
            const Volume& o = tp.value(other);
            auto out = tp.grad_buffer(self).values();
            for (int c = 0; c < channels; ++c) {
                const double s1 = denom[c] + 1.0;
                const double k = -g[0] / channels;
                const double tail = (2.0 * inter[c] + 1.0) / (s1 * s1);
                for (std::size_t i = 0; i < vox; ++i) out[c * vox + i] += k * (2.0 * o[c * vox + i] / s1 - tail);
            }
        };
        grad_side(warped, fixed);
        grad_side(fixed, warped);
    });
}

namespace {

template <class F> double eval2(const Volume& a, const Volume& b, F f) {
    ad::Tape t;
    return t.value(f(t, t.input(a, false), t.input(b, false)))[0];
}

} // namespace

double mse(const Volume& a, const Volume& b) {
    return eval2(a, b, [](ad::Tape& t, ad::Var x, ad::Var y) { return mse(t, x, y); });
}
double ncc(const Volume& a, const Volume& b, int window) {
    return eval2(a, b, [&](ad::Tape& t, ad::Var x, ad::Var y) { return ncc(t, x, y, window); });
}
double grad_l2(const Volume& field) {
    ad::Tape t;
    return t.value(grad_l2(t, t.input(field, false)))[0];
}
double dice_loss(const Volume& warped, const Volume& fixed) {
    return eval2(warped, fixed, [](ad::Tape& t, ad::Var x, ad::Var y) { return dice_loss(t, x, y); });
}

} // namespace loss

Volume one_hot(const std::vector<int>& labels, Dims dims, int label_count) {
    require(labels.size() == dims.voxels(), "one_hot: label count does not match dims");
    require(label_count >= 2, "one_hot: need at least one foreground label");
    Volume out(label_count - 1, dims);
    const std::size_t vox = dims.voxels();
    for (std::size_t i = 0; i < vox; ++i)
        if (labels[i] >= 1 && labels[i] < label_count) out[(labels[i] - 1) * vox + i] = 1.0;
    return out;
}

std::vector<double> sequence_weights(const std::vector<int>& scale_of, double gamma, Supervision mode) {
    require(!scale_of.empty(), "sequence_loss: empty trace");
    const std::size_t n = scale_of.size();
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const bool last = i + 1 == n || scale_of[i + 1] != scale_of[i];
        if (mode == Supervision::full || last) w[i] = std::pow(gamma, static_cast<double>(n - 1 - i));
    }
    return w;
}

ad::Var single_loss(ad::Tape& t, ad::Var field, ad::Var fixed, ad::Var moving, const LossConfig& cfg,
                    const LabelVars* labels) {
    const ad::Var warped = ad::warp(t, moving, field);
    ad::Var l = cfg.similarity == Similarity::mse ? loss::mse(t, fixed, warped)
                                                  : loss::ncc(t, fixed, warped, cfg.ncc_window);
    if (cfg.lambda > 0.0) l = ad::add(t, l, ad::scale(t, loss::grad_l2(t, field), cfg.lambda));
    if (labels && cfg.dice_weight > 0.0) {
        const ad::Var wl = ad::warp(t, labels->moving, field);
        l = ad::add(t, l, ad::scale(t, loss::dice_loss(t, wl, labels->fixed), cfg.dice_weight));
    }
    return l;
}

ad::Var sequence_loss(ad::Tape& t, const GraphTrace& trace, ad::Var fixed, ad::Var moving, const LossConfig& cfg,
                      const LabelVars* labels) {
    cfg.validate();
    require(!trace.fields.empty() && trace.fields.size() == trace.scale_of.size(), "sequence_loss: empty trace");
    const std::vector<double> w = sequence_weights(trace.scale_of, cfg.gamma, cfg.supervision);
    ad::Var total;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] == 0.0) continue;
        const ad::Var term = ad::scale(t, single_loss(t, trace.fields[i], fixed, moving, cfg, labels), w[i]);
        total = total.valid() ? ad::add(t, total, term) : term;
    }
    return total;
}

} // namespace recorr
