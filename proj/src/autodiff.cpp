#include "recorr/autodiff.hpp"

#include <cmath>
#include <fstream>

#include "recorr/binary.hpp"
#include "recorr/kernels.hpp"

namespace recorr::ad {

// ---- ParamStore ----------------------------------------------------------

namespace {

bool reserved_name(const std::string& name) {
    auto ends_with = [&](const char* suffix) {
        const std::string s(suffix);
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    return name == "step" || ends_with(".m") || ends_with(".v");
}

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int s : shape) {
        require(s >= 1, "parameter extents must be positive");
        n *= static_cast<std::size_t>(s);
    }
    return n;
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

} // namespace

Param& ParamStore::add(const std::string& name, std::vector<int> shape) {
    require(!name.empty() && !reserved_name(name), "invalid parameter name '" + name + "'");
    require(!contains(name), "duplicate parameter name '" + name + "'");
    const std::size_t n = shape_numel(shape);
    Param p;
    p.shape = std::move(shape);
    p.value.assign(n, 0.0);
    p.grad.assign(n, 0.0);
    p.m.assign(n, 0.0);
    p.v.assign(n, 0.0);
    return entries_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

const Param& ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [_, p] : entries_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

double ParamStore::grad_norm() const {
    double acc = 0.0;
    for (const auto& [_, p] : entries_)
        for (double g : p.grad) acc += g * g;
    return std::sqrt(acc);
}

void ParamStore::scale_grad(double factor) {
    for (auto& [_, p] : entries_)
        for (double& g : p.grad) g *= factor;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : entries_) n += p.numel();
    return n;
}

void ParamStore::round_to_storage() {
    for (auto& [_, p] : entries_) {
        for (double& x : p.value) x = to_f32(x);
        for (double& x : p.m) x = to_f32(x);
        for (double& x : p.v) x = to_f32(x);
    }
}

bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.step_ != b.step_ || a.entries_.size() != b.entries_.size()) return false;
    for (const auto& [name, p] : a.entries_) {
        auto it = b.entries_.find(name);
        if (it == b.entries_.end()) return false;
        const Param& q = it->second;
        if (p.shape != q.shape || p.value != q.value || p.m != q.m || p.v != q.v) return false;
    }
    return true;
}

void adamw_step(ParamStore& store, const AdamWConfig& cfg) {
    store.set_step(store.step() + 1);
    const double t = static_cast<double>(store.step());
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [_, p] : store.entries()) {
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double g = p.grad[i];
            p.value[i] -= cfg.lr * cfg.weight_decay * p.value[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = p.m[i] / bc1;
            const double vhat = p.v[i] / bc2;
            p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
    store.round_to_storage();
    store.zero_grad();
}

// ---- checkpoint ----------------------------------------------------------

namespace {

constexpr char kCkptMagic[10] = {'R', 'E', 'C', 'O', 'R', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

void put_entry(std::ostream& os, const std::string& name, const std::vector<int>& shape,
               const std::vector<double>& values) {
    binary::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binary::put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (int s : shape) binary::put_u32(os, static_cast<std::uint32_t>(s));
    binary::put_f32_array(os, values);
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os.write(kCkptMagic, sizeof(kCkptMagic));
    binary::put_u32(os, kCkptVersion);
    for (const auto& [name, p] : store.entries()) {
        put_entry(os, name, p.shape, p.value);
        put_entry(os, name + ".m", p.shape, p.m);
        put_entry(os, name + ".v", p.shape, p.v);
    }
    put_entry(os, "step", {}, {static_cast<double>(store.step())});
    if (!os) throw DataError("write failed for " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    char magic[sizeof(kCkptMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw DataError(path.string() + ": not a checkpoint (bad magic)");
    const std::uint32_t version = binary::get_u32(is);
    if (!is || version != kCkptVersion) throw DataError(path.string() + ": unsupported checkpoint version");

    struct Raw {
        std::vector<int> shape;
        std::vector<double> values;
    };
    std::map<std::string, Raw> raw;
    while (is.peek() != std::char_traits<char>::eof()) {
        const std::uint32_t len = binary::get_u32(is);
        if (!is || len == 0 || len > 4096) throw DataError(path.string() + ": corrupt entry name");
        std::string name(len, '\0');
        is.read(name.data(), len);
        const std::uint32_t rank = binary::get_u32(is);
        if (!is || rank > 8) throw DataError(path.string() + ": corrupt entry rank for " + name);
        Raw r;
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint32_t d = binary::get_u32(is);
            if (d == 0) throw DataError(path.string() + ": zero extent in " + name);
            r.shape.push_back(static_cast<int>(d));
            n *= d;
        }
        r.values = binary::get_f32_array(is, n);
        if (!is) throw DataError(path.string() + ": truncated entry " + name);
        raw.emplace(std::move(name), std::move(r));
    }

    ParamStore store;
    auto step_it = raw.find("step");
    if (step_it == raw.end() || step_it->second.values.size() != 1)
        throw DataError(path.string() + ": missing step entry");
    store.set_step(static_cast<std::int64_t>(step_it->second.values[0]));
    for (auto& [name, r] : raw) {
        if (reserved_name(name)) continue;
        auto mi = raw.find(name + ".m");
        auto vi = raw.find(name + ".v");
        if (mi == raw.end() || vi == raw.end()) throw DataError(path.string() + ": missing moments for " + name);
        if (mi->second.shape != r.shape || vi->second.shape != r.shape)
            throw DataError(path.string() + ": moment shape mismatch for " + name);
        Param& p = store.add(name, r.shape);
        p.value = r.values;
        p.m = mi->second.values;
        p.v = vi->second.values;
    }
    return store;
}

// ---- Tape ----------------------------------------------------------------

Volume scalar_volume(double v) { return Volume(1, Dims{1, 1, 1}, std::vector<double>{v}); }

Var Tape::constant(Volume value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::input(Volume value, bool requires_grad) {
    Node n;
    n.op = "input";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::param(Param& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{it->second};
    Node n;
    n.op = "param";
    n.value = Volume(1, Dims{1, 1, static_cast<int>(p.numel())}, p.value);
    n.requires_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return Var{nodes_.size() - 1};
}

Volume Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.has_grad) return n.grad;
    return Volume(n.value.channels(), n.value.dims(), n.value.spacing());
}

Volume& Tape::grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (!n.has_grad) {
        n.grad = Volume(n.value.channels(), n.value.dims(), n.value.spacing());
        n.has_grad = true;
    }
    return n.grad;
}

Var Tape::record(std::string op, Volume value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    for (Var in : inputs) {
        require(in.valid() && in.id < nodes_.size(), op + ": invalid input node");
        needs = needs || nodes_[in.id].requires_grad;
    }
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

void Tape::backward(Var loss) {
    const Node& l = nodes_.at(loss.id);
    if (l.value.size() != 1) throw ContractError("backward: loss must be a scalar, got " + std::to_string(l.value.size()) + " values");
    if (!l.requires_grad) return;
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.backward) {
            // grad may be reallocated only for earlier nodes; ours is stable
            n.backward(*this, n.grad);
        }
        if (n.param) {
            auto g = n.grad.values();
            for (std::size_t k = 0; k < g.size(); ++k) n.param->grad[k] += g[k];
        }
    }
}

// ---- ops -----------------------------------------------------------------

namespace {

void add_into(std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void same_shape(const Tape& t, Var a, Var b, const char* op) {
    const Volume &x = t.value(a), &y = t.value(b);
    require(x.same_shape(y), std::string(op) + ": shape mismatch (" + std::to_string(x.channels()) + "@" +
                                 to_string(x.dims()) + " vs " + std::to_string(y.channels()) + "@" +
                                 to_string(y.dims()) + ")");
}

} // namespace

Var conv3d(Tape& t, Var x, Var weight, Var bias, int out_channels, std::array<int, 3> kernel, int stride) {
    const Volume& in = t.value(x);
    const auto shape = kernels::make_conv_shape(in.channels(), out_channels, in.dims(), kernel, stride);
    require(t.value(weight).size() == shape.weight_count(),
            "conv3d: weight has " + std::to_string(t.value(weight).size()) + " values, expected " +
                std::to_string(shape.weight_count()));
    if (bias.valid())
        require(t.value(bias).size() == static_cast<std::size_t>(out_channels), "conv3d: bias length mismatch");
    Spacing sp = in.spacing();
    if (stride == 2)
        for (double& s : sp) s *= 2;
    Volume out(out_channels, shape.out, sp);
    kernels::conv3d_forward(shape, in.values(), t.value(weight).values(),
                            bias.valid() ? t.value(bias).values() : std::span<const double>{}, out.values());
    std::vector<Var> inputs{x, weight};
    if (bias.valid()) inputs.push_back(bias);
    return t.record("conv3d", std::move(out), inputs, [=](Tape& tp, const Volume& g) {
        if (tp.requires_grad(x))
            kernels::conv3d_backward_input(shape, g.values(), tp.value(weight).values(), tp.grad_buffer(x).values());
        const bool gw = tp.requires_grad(weight);
        const bool gb = bias.valid() && tp.requires_grad(bias);
        if (gw || gb) {
            std::vector<double> scratch;
            std::span<double> wspan;
            if (gw) {
                wspan = tp.grad_buffer(weight).values();
            } else {
                scratch.assign(shape.weight_count(), 0.0);
                wspan = scratch;
            }
            kernels::conv3d_backward_weight(shape, g.values(), tp.value(x).values(), wspan,
                                            gb ? tp.grad_buffer(bias).values() : std::span<double>{});
        }
    });
}

Var separable_conv3d(Tape& t, Var x, const std::array<Var, 3>& weights, const std::array<Var, 3>& biases,
                     int mid_channels, int out_channels, int k) {
    Var a = conv3d(t, x, weights[0], biases[0], mid_channels, {1, 1, k});
    Var b = conv3d(t, a, weights[1], biases[1], mid_channels, {1, k, 1});
    return conv3d(t, b, weights[2], biases[2], out_channels, {k, 1, 1});
}

Var leaky_relu(Tape& t, Var x, double slope) {
    Volume out = t.value(x);
    for (double& v : out.values()) v = v > 0 ? v : slope * v;
    return t.record("leaky_relu", std::move(out), {x}, [=](Tape& tp, const Volume& g) {
        auto src = tp.value(x).values();
        auto dst = tp.grad_buffer(x).values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] > 0 ? g[i] : slope * g[i];
    });
}

Var sigmoid(Tape& t, Var x) {
    Volume out = t.value(x);
    for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
    const std::size_t self = t.size();
    return t.record("sigmoid", std::move(out), {x}, [=](Tape& tp, const Volume& g) {
        auto y = tp.value(Var{self}).values();
        auto dst = tp.grad_buffer(x).values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var tanh(Tape& t, Var x) {
    Volume out = t.value(x);
    for (double& v : out.values()) v = std::tanh(v);
    const std::size_t self = t.size();
    return t.record("tanh", std::move(out), {x}, [=](Tape& tp, const Volume& g) {
        auto y = tp.value(Var{self}).values();
        auto dst = tp.grad_buffer(x).values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

Var add(Tape& t, Var a, Var b) {
    same_shape(t, a, b, "add");
    Volume out = t.value(a);
    add_into(out.values(), t.value(b).values());
    return t.record("add", std::move(out), {a, b}, [=](Tape& tp, const Volume& g) {
        if (tp.requires_grad(a)) add_into(tp.grad_buffer(a).values(), g.values());
        if (tp.requires_grad(b)) add_into(tp.grad_buffer(b).values(), g.values());
    });
}

Var sub(Tape& t, Var a, Var b) {
    same_shape(t, a, b, "sub");
    Volume out = t.value(a);
    auto src = t.value(b).values();
    auto dst = out.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
    return t.record("sub", std::move(out), {a, b}, [=](Tape& tp, const Volume& g) {
        if (tp.requires_grad(a)) add_into(tp.grad_buffer(a).values(), g.values());
        if (tp.requires_grad(b)) {
            auto d = tp.grad_buffer(b).values();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    same_shape(t, a, b, "mul");
    Volume out = t.value(a);
    auto src = t.value(b).values();
    auto dst = out.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= src[i];
    return t.record("mul", std::move(out), {a, b}, [=](Tape& tp, const Volume& g) {
        if (tp.requires_grad(a)) {
            auto d = tp.grad_buffer(a).values();
            auto o = tp.value(b).values();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * o[i];
        }
        if (tp.requires_grad(b)) {
            auto d = tp.grad_buffer(b).values();
            auto o = tp.value(a).values();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * o[i];
        }
    });
}

Var scale(Tape& t, Var x, double factor) {
    Volume out = t.value(x);
    for (double& v : out.values()) v *= factor;
    return t.record("scale", std::move(out), {x}, [=](Tape& tp, const Volume& g) {
        auto d = tp.grad_buffer(x).values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
    });
}

Var blend(Tape& t, Var z, Var a, Var b) {
    same_shape(t, z, a, "blend");
    same_shape(t, z, b, "blend");
    Volume out = t.value(a);
    {
        auto zs = t.value(z).values();
        auto bs = t.value(b).values();
        auto o = out.values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0 - zs[i]) * o[i] + zs[i] * bs[i];
    }
    return t.record("blend", std::move(out), {z, a, b}, [=](Tape& tp, const Volume& g) {
        auto zs = tp.value(z).values();
        auto as = tp.value(a).values();
        auto bs = tp.value(b).values();
        if (tp.requires_grad(z)) {
            auto d = tp.grad_buffer(z).values();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (bs[i] - as[i]);
        }
        if (tp.requires_grad(a)) {
            auto d = tp.grad_buffer(a).values();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (1.0 - zs[i]);
        }
        if (tp.requires_grad(b)) {
            auto d = tp.grad_buffer(b).values();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * zs[i];
        }
    });
}

Var concat(Tape& t, const std::vector<Var>& parts) {
    require(!parts.empty(), "concat: no inputs");
    const Dims dims = t.value(parts.front()).dims();
    int channels = 0;
    for (Var p : parts) {
        require(t.value(p).dims() == dims, "concat: spatial dims differ");
        channels += t.value(p).channels();
    }
    Volume out(channels, dims, t.value(parts.front()).spacing());
    std::size_t off = 0;
    for (Var p : parts) {
        auto src = t.value(p).values();
        std::copy(src.begin(), src.end(), out.values().begin() + off);
        off += src.size();
    }
    return t.record("concat", std::move(out), parts, [=](Tape& tp, const Volume& g) {
        std::size_t o = 0;
        for (Var p : parts) {
            const std::size_t n = tp.value(p).size();
            if (tp.requires_grad(p)) add_into(tp.grad_buffer(p).values(), g.values().subspan(o, n));
            o += n;
        }
    });
}

Var split(Tape& t, Var x, int begin, int end) {
    const Volume& in = t.value(x);
    require(0 <= begin && begin < end && end <= in.channels(), "split: channel range out of bounds");
    const std::size_t stride = in.channel_stride();
    Volume out(end - begin, in.dims(), in.spacing());
    auto src = in.values().subspan(begin * stride, (end - begin) * stride);
    std::copy(src.begin(), src.end(), out.values().begin());
    return t.record("split", std::move(out), {x}, [=](Tape& tp, const Volume& g) {
        add_into(tp.grad_buffer(x).values().subspan(begin * stride, (end - begin) * stride), g.values());
    });
}

Var upsample2(Tape& t, Var x) {
    const Volume& in = t.value(x);
    const Spacing s = in.spacing();
    Volume out(in.channels(), in.dims().doubled(), Spacing{s[0] / 2, s[1] / 2, s[2] / 2});
    kernels::upsample2_forward(in.channels(), in.dims(), in.values(), out.values());
    const int channels = in.channels();
    const Dims coarse = in.dims();
    return t.record("upsample2", std::move(out), {x}, [=](Tape& tp, const Volume& g) {
        kernels::upsample2_backward(channels, coarse, g.values(), tp.grad_buffer(x).values());
    });
}

Var warp(Tape& t, Var image, Var field) {
    const Volume& img = t.value(image);
    const Volume& f = t.value(field);
    require(f.channels() == 3, "warp: field must have 3 channels");
    require(img.dims() == f.dims(), "warp: image dims " + to_string(img.dims()) + " != field dims " + to_string(f.dims()));
    Volume out(img.channels(), img.dims(), img.spacing());
    kernels::warp_forward(img.channels(), img.dims(), img.values(), f.values(), out.values());
    return t.record("warp", std::move(out), {image, field}, [=](Tape& tp, const Volume& g) {
        const Volume& im = tp.value(image);
        kernels::warp_backward(im.channels(), im.dims(), im.values(), tp.value(field).values(), g.values(),
                               tp.requires_grad(image) ? tp.grad_buffer(image).values() : std::span<double>{},
                               tp.requires_grad(field) ? tp.grad_buffer(field).values() : std::span<double>{});
    });
}

Var correlation(Tape& t, Var fixed, Var moving, int r) {
    require(r >= 1 && r % 2 == 1, "correlation: radius must be odd and >= 1, got " + std::to_string(r));
    same_shape(t, fixed, moving, "correlation");
    const Volume& f = t.value(fixed);
    Volume out(r * r * r, f.dims(), f.spacing());
    kernels::correlation_forward(f.channels(), f.dims(), r, f.values(), t.value(moving).values(), out.values());
    return t.record("correlation", std::move(out), {fixed, moving}, [=](Tape& tp, const Volume& g) {
        const Volume& fv = tp.value(fixed);
        kernels::correlation_backward(fv.channels(), fv.dims(), r, fv.values(), tp.value(moving).values(), g.values(),
                                      tp.requires_grad(fixed) ? tp.grad_buffer(fixed).values() : std::span<double>{},
                                      tp.requires_grad(moving) ? tp.grad_buffer(moving).values() : std::span<double>{});
    });
}

Var sum(Tape& t, Var x) {
    double acc = 0.0;
    for (double v : t.value(x).values()) acc += v;
    return t.record("sum", scalar_volume(acc), {x}, [=](Tape& tp, const Volume& g) {
        const double gv = g[0];
        for (double& d : tp.grad_buffer(x).values()) d += gv;
    });
}

Var mean(Tape& t, Var x) {
    const double n = static_cast<double>(t.value(x).size());
    return scale(t, sum(t, x), 1.0 / n);
}

} // namespace recorr::ad
