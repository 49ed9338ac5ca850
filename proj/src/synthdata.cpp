#include "recorr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "recorr/pyramid.hpp"
#include "recorr/rng.hpp"
#include "recorr/volume_io.hpp"

namespace recorr {

void PhantomSpec::validate() const {
    require(dims.d >= 16 && dims.h >= 16 && dims.w >= 16, "phantom dims must be >= 16 per axis, got " + to_string(dims));
    require(label_count >= 2 && label_count <= 16, "phantom.label_count must be in [2, 16]");
    require(noise_sigma >= 0.0 && smoothing >= 0.0 && texture >= 0.0, "phantom noise/smoothing/texture must be >= 0");
}

std::string to_string(PerturbKind k) {
    switch (k) {
    case PerturbKind::none: return "none";
    case PerturbKind::svf: return "svf";
    case PerturbKind::affine_offset: return "affine_offset";
    case PerturbKind::affine_scale: return "affine_scale";
    case PerturbKind::translation: return "translation";
    }
    return "?";
}

PerturbKind perturb_kind_from_string(const std::string& s) {
    for (PerturbKind k : {PerturbKind::none, PerturbKind::svf, PerturbKind::affine_offset, PerturbKind::affine_scale,
                          PerturbKind::translation})
        if (to_string(k) == s) return k;
    throw ContractError("unknown perturbation kind '" + s + "'");
}

void PerturbSpec::validate() const {
    if (kind == PerturbKind::svf) {
        require(svf_factor >= 1 && (svf_factor & (svf_factor - 1)) == 0, "perturb.svf_factor must be a power of two");
        require(magnitude > 0.0, "perturb.magnitude must be positive for svf");
    }
    if (kind == PerturbKind::affine_scale) require(magnitude > -1.0, "perturb.magnitude must be > -1 for scaling");
    require(std::isfinite(magnitude), "perturb.magnitude must be finite");
}

Volume gaussian_smooth(const Volume& v, double sigma) {
    if (sigma <= 0.0) return v;
    const int rad = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * rad + 1);
    double ks = 0.0;
    for (int i = -rad; i <= rad; ++i) ks += k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& x : k) x /= ks;

    const Dims d = v.dims();
    Volume cur = v;
    const std::array<int, 3> ext{d.d, d.h, d.w};
    const std::array<std::size_t, 3> stride{static_cast<std::size_t>(d.h) * d.w, static_cast<std::size_t>(d.w), 1};
    for (int axis = 0; axis < 3; ++axis) {
        Volume next(v.channels(), d, v.spacing());
        for (int c = 0; c < v.channels(); ++c) {
            const double* src = cur.data() + c * cur.channel_stride();
            double* dst = next.data() + c * next.channel_stride();
            for (int z = 0; z < d.d; ++z)
                for (int y = 0; y < d.h; ++y)
                    for (int x = 0; x < d.w; ++x) {
                        const std::array<int, 3> p{z, y, x};
                        const std::size_t base = z * stride[0] + y * stride[1] + x - p[axis] * stride[axis];
                        double acc = 0.0;
                        for (int i = -rad; i <= rad; ++i) {
                            const int q = std::clamp(p[axis] + i, 0, ext[axis] - 1);
                            acc += k[i + rad] * src[base + q * stride[axis]];
                        }
                        dst[z * stride[0] + y * stride[1] + x] = acc;
                    }
        }
        cur = std::move(next);
    }
    return cur;
}

Phantom make_phantom(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const Dims d = spec.dims;
    LabelMap labels(d);

    struct Ellipsoid {
        std::array<double, 3> c, r;
        double theta;
    };
    auto draw = [&]() {
        Ellipsoid e;
        const std::array<int, 3> ext{d.d, d.h, d.w};
        for (int a = 0; a < 3; ++a) {
            e.c[a] = ext[a] * rng.uniform(0.3, 0.7);
            e.r[a] = ext[a] * rng.uniform(0.12, 0.22);
        }
        e.theta = rng.uniform(0.0, M_PI);
        return e;
    };
    auto inside = [](const Ellipsoid& e, int z, int y, int x) {
        const double dz = z - e.c[0], dy = y - e.c[1], dx = x - e.c[2];
        const double ct = std::cos(e.theta), st = std::sin(e.theta);
        const double ry = ct * dy - st * dx, rx = st * dy + ct * dx;
        return (dz * dz) / (e.r[0] * e.r[0]) + (ry * ry) / (e.r[1] * e.r[1]) + (rx * rx) / (e.r[2] * e.r[2]) <= 1.0;
    };

    // later labels overwrite earlier ones; redraw until every label keeps a
    // visible region (the redraw is seeded, so still deterministic)
    const std::size_t min_voxels = std::max<std::size_t>(8, d.voxels() / 2000);
    for (int attempt = 0;; ++attempt) {
        require(attempt < 1000, "make_phantom: could not place non-empty labels");
        LabelMap trial(d);
        for (int l = 1; l < spec.label_count; ++l) {
            const Ellipsoid e = draw();
            for (int z = 0; z < d.d; ++z)
                for (int y = 0; y < d.h; ++y)
                    for (int x = 0; x < d.w; ++x)
                        if (inside(e, z, y, x)) trial.at(z, y, x) = l;
        }
        bool ok = true;
        for (int l = 0; l < spec.label_count; ++l) ok = ok && trial.count(l) >= min_voxels;
        if (ok) {
            labels = std::move(trial);
            break;
        }
    }

    std::vector<double> level(spec.label_count);
    level[0] = 0.1;
    for (int l = 1; l < spec.label_count; ++l) level[l] = 0.3 + 0.6 * (l - 1) / std::max(1, spec.label_count - 2);
    for (int l = spec.label_count - 1; l > 1; --l) std::swap(level[l], level[1 + rng.next() % l]);

    std::array<std::array<double, 4>, 3> waves{};
    for (auto& w : waves) {
        for (int a = 0; a < 3; ++a) w[a] = rng.uniform(-1.0, 1.0) * 2.0 * M_PI / 7.0;
        w[3] = rng.uniform(0.0, 2.0 * M_PI);
    }

    Volume img(1, d);
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                double t = 0.0;
                for (const auto& w : waves) t += std::sin(w[0] * z + w[1] * y + w[2] * x + w[3]);
                img.at(0, z, y, x) = level[labels.at(z, y, x)] + spec.texture * t / 3.0;
            }
    img = gaussian_smooth(img, spec.smoothing);
    for (double& v : img.values()) v = std::clamp(v + spec.noise_sigma * rng.normal(), 0.0, 1.0);
    return {std::move(img), std::move(labels)};
}

namespace {

DisplacementField scaled(const DisplacementField& f, double s) {
    Volume v = f.volume();
    for (double& x : v.values()) x *= s;
    return DisplacementField(std::move(v));
}

double max_norm(const Volume& f) {
    const std::size_t vox = f.channel_stride();
    double m = 0.0;
    for (std::size_t i = 0; i < vox; ++i)
        m = std::max(m, std::sqrt(f[i] * f[i] + f[vox + i] * f[vox + i] + f[2 * vox + i] * f[2 * vox + i]));
    return m;
}

// Smooth random velocity at dims / s, brought to full resolution.
VelocityField random_velocity(Dims dims, int s, Rng& rng) {
    require(dims.d % s == 0 && dims.h % s == 0 && dims.w % s == 0, "svf factor must divide the volume dims");
    Volume coarse(3, Dims{dims.d / s, dims.h / s, dims.w / s});
    for (double& v : coarse.values()) v = rng.normal();
    coarse = gaussian_smooth(coarse, 1.0);
    while (coarse.dims() != dims) coarse = upsample_volume(coarse);
    return VelocityField(std::move(coarse));
}

} // namespace

PairSample make_pair(const Volume& image, const LabelMap& labels, const PerturbSpec& perturb) {
    perturb.validate();
    require(image.channels() == 1 && image.dims() == labels.dims(), "make_pair: image/labels mismatch");
    const Dims d = image.dims();
    Rng rng(perturb.seed);
    PairSample out;
    out.fixed = image;
    out.labels_fixed = labels;
    DisplacementField inverse(d);

    switch (perturb.kind) {
    case PerturbKind::none:
        out.true_field = DisplacementField(d);
        break;
    case PerturbKind::translation:
    case PerturbKind::affine_offset: {
        std::array<double, 3> t = perturb.translation;
        if (perturb.kind == PerturbKind::translation && t == std::array<double, 3>{0.0, 0.0, 0.0}) {
            // random direction at the configured length
            Rng dir_rng(perturb.seed);
            double n = 0.0;
            while (n < 1e-6) {
                for (double& c : t) c = dir_rng.normal();
                n = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
            }
            for (double& c : t) c *= perturb.magnitude / n;
        }
        if (perturb.kind == PerturbKind::affine_offset) t = {0.0, 0.0, perturb.magnitude * d.w};
        out.true_field = DisplacementField::constant(d, t);
        inverse = DisplacementField::constant(d, {-t[0], -t[1], -t[2]});
        out.applied_magnitude = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
        break;
    }
    case PerturbKind::affine_scale: {
        // phi_x(p) = c + (1 + m)(x - c) along x only
        const double c = 0.5 * (d.w - 1), m = perturb.magnitude;
        out.true_field = DisplacementField(d);
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.h; ++y)
                for (int x = 0; x < d.w; ++x) {
                    out.true_field.component(2, z, y, x) = m * (x - c);
                    inverse.component(2, z, y, x) = (1.0 / (1.0 + m) - 1.0) * (x - c);
                }
        out.applied_magnitude = m;
        break;
    }
    case PerturbKind::svf: {
        const VelocityField raw = random_velocity(d, perturb.svf_factor, rng);
        const double norm = max_norm(raw.volume());
        require(norm > 0.0, "make_pair: degenerate random velocity");
        double mag = perturb.magnitude;
        for (int attempt = 0;; ++attempt) {
            require(attempt < 40, "make_pair: could not produce a fold-free svf truth");
            const VelocityField v = scaled(raw, mag / norm);
            DisplacementField truth = exp_field(v, 5);
            if (fold_fraction(jacobian_det(truth)) == 0.0) {
                out.true_field = std::move(truth);
                inverse = exp_field(scaled(v, -1.0), 5);
                break;
            }
            mag *= 0.8;
        }
        out.applied_magnitude = mag;
        break;
    }
    }
    out.moving = perturb.kind == PerturbKind::none ? image : warp(image, inverse);
    out.labels_moving = perturb.kind == PerturbKind::none ? labels : warp_labels(labels, inverse);
    return out;
}

// ---- datasets ---------------------------------------------------------------

nlohmann::json to_json(const DatasetSpec& s) {
    using nlohmann::json;
    return json{{"seed", s.seed},
                {"splits", {{"train", s.train}, {"validation", s.validation}, {"test", s.test}}},
                {"phantom",
                 {{"dims", {s.phantom.dims.d, s.phantom.dims.h, s.phantom.dims.w}},
                  {"label_count", s.phantom.label_count},
                  {"noise_sigma", s.phantom.noise_sigma},
                  {"smoothing", s.phantom.smoothing},
                  {"texture", s.phantom.texture}}},
                {"perturb",
                 {{"kind", to_string(s.perturb.kind)},
                  {"svf_factor", s.perturb.svf_factor},
                  {"magnitude", s.perturb.magnitude},
                  {"translation", s.perturb.translation}}}};
}

std::vector<const ManifestEntry*> Manifest::split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == name) out.push_back(&e);
    return out;
}

namespace {

std::string pair_id(int i) {
    std::ostringstream os;
    os << "pair_" << std::setw(3) << std::setfill('0') << i;
    return os.str();
}

} // namespace

Manifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
    require(spec.train >= 0 && spec.validation >= 0 && spec.test >= 0, "dataset split sizes must be >= 0");
    require(spec.train + spec.validation + spec.test >= 1, "dataset must contain at least one pair");
    spec.phantom.validate();
    spec.perturb.validate();
    std::filesystem::create_directories(dir);

    Manifest m;
    m.path = dir / "manifest.json";
    m.spec = to_json(spec);
    Rng master(spec.seed);
    const int total = spec.train + spec.validation + spec.test;
    nlohmann::json pairs = nlohmann::json::array();
    for (int i = 0; i < total; ++i) {
        ManifestEntry e;
        e.id = pair_id(i);
        e.split = i < spec.train ? "train" : i < spec.train + spec.validation ? "validation" : "test";
        e.phantom_seed = master.next();
        e.perturb_seed = master.next();

        PhantomSpec ps = spec.phantom;
        ps.seed = e.phantom_seed;
        const Phantom ph = make_phantom(ps);
        PerturbSpec pp = spec.perturb;
        pp.seed = e.perturb_seed;
        const PairSample s = make_pair(ph.image, ph.labels, pp);
        e.applied_magnitude = s.applied_magnitude;

        e.fixed = e.id + "_fixed.vol3";
        e.moving = e.id + "_moving.vol3";
        e.labels_fixed = e.id + "_labels_fixed.vol3";
        e.labels_moving = e.id + "_labels_moving.vol3";
        e.true_field = e.id + "_true_field.vol3";
        write_vol3(dir / e.fixed, s.fixed);
        write_vol3(dir / e.moving, s.moving);
        write_labels(dir / e.labels_fixed, s.labels_fixed);
        write_labels(dir / e.labels_moving, s.labels_moving);
        write_field(dir / e.true_field, s.true_field);

        pairs.push_back({{"id", e.id},
                         {"split", e.split},
                         {"fixed", e.fixed.string()},
                         {"moving", e.moving.string()},
                         {"labels_fixed", e.labels_fixed.string()},
                         {"labels_moving", e.labels_moving.string()},
                         {"true_field", e.true_field.string()},
                         {"phantom_seed", e.phantom_seed},
                         {"perturb_seed", e.perturb_seed},
                         {"translation", pp.kind == PerturbKind::translation ? s.true_field.at(0, 0, 0)
                                                                             : std::array<double, 3>{0.0, 0.0, 0.0}},
                         {"applied_magnitude", e.applied_magnitude}});
        e.fixed = dir / e.fixed;
        e.moving = dir / e.moving;
        e.labels_fixed = dir / e.labels_fixed;
        e.labels_moving = dir / e.labels_moving;
        e.true_field = dir / e.true_field;
        m.entries.push_back(std::move(e));
    }

    const nlohmann::json doc{{"schema_version", 1}, {"seed", spec.seed}, {"spec", m.spec}, {"pairs", pairs}};
    std::ofstream os(m.path);
    if (!os) throw DataError("cannot write " + m.path.string());
    os << doc.dump(2) << "\n";
    return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    Manifest m;
    m.path = path;
    const auto base = path.parent_path();
    try {
        if (doc.at("schema_version").get<int>() != 1) throw DataError("manifest: unsupported schema_version");
        m.spec = doc.value("spec", nlohmann::json::object());
        for (const auto& p : doc.at("pairs")) {
            ManifestEntry e;
            e.id = p.at("id").get<std::string>();
            e.split = p.at("split").get<std::string>();
            e.fixed = base / p.at("fixed").get<std::string>();
            e.moving = base / p.at("moving").get<std::string>();
            e.labels_fixed = base / p.at("labels_fixed").get<std::string>();
            e.labels_moving = base / p.at("labels_moving").get<std::string>();
            e.true_field = base / p.at("true_field").get<std::string>();
            e.phantom_seed = p.value("phantom_seed", std::uint64_t{0});
            e.perturb_seed = p.value("perturb_seed", std::uint64_t{0});
            e.applied_magnitude = p.value("applied_magnitude", 0.0);
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    return m;
}

PairSample load_pair(const ManifestEntry& entry) {
    PairSample s;
    s.fixed = read_vol3(entry.fixed);
    s.moving = read_vol3(entry.moving);
    s.labels_fixed = read_labels(entry.labels_fixed);
    s.labels_moving = read_labels(entry.labels_moving);
    s.true_field = read_field(entry.true_field);
    s.applied_magnitude = entry.applied_magnitude;
    if (!(s.fixed.dims() == s.moving.dims()) || !(s.fixed.dims() == s.true_field.dims()))
        throw DataError("pair " + entry.id + ": file dims disagree");
    return s;
}

} // namespace recorr
