#include "recorr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recorr/rng.hpp"

namespace recorr::ad {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const GraphFn& graph, const std::vector<Volume>& inputs) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Volume& v : inputs) vars.push_back(t.input(v, false));
    const Volume& out = t.value(graph(t, vars));
    require(out.size() == 1, "gradcheck: graph must produce a scalar");
    return out[0];
}

std::vector<std::size_t> probe_indices(std::size_t n, const GradcheckOptions& opt, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_probes == 0 || n <= opt.max_probes) return idx;
    // partial Fisher-Yates
    for (std::size_t i = 0; i < opt.max_probes; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next() % (n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(opt.max_probes);
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace

GradcheckReport gradcheck(const std::string& name, const GraphFn& graph, std::vector<Volume> inputs,
                          ParamStore* params, const GradcheckOptions& opt) {
    GradcheckReport report;
    report.name = name;

    // analytic pass
    std::vector<Volume> input_grads;
    {
        if (params) params->zero_grad();
        Tape t;
        std::vector<Var> vars;
        for (const Volume& v : inputs) vars.push_back(t.input(v, true));
        Var loss = graph(t, vars);
        t.backward(loss);
        for (Var v : vars) input_grads.push_back(t.grad(v));
    }

    Rng rng(opt.seed);
    auto central = [&](double& slot, double h) {
        const double saved = slot;
        slot = saved + h;
        const double fp = evaluate(graph, inputs);
        slot = saved - h;
        const double fm = evaluate(graph, inputs);
        slot = saved;
        return (fp - fm) / (2.0 * h);
    };
    auto probe = [&](const std::string& tensor, std::size_t i, double& slot, double analytic) {
        double numeric = central(slot, opt.h);
        double err = relative_error(analytic, numeric, opt.floor);
        if (!(err < opt.tolerance) && opt.retry_factor > 0.0) {
            // A kink inside the stencil. Re-measure at h * retry_factor,
            // centrally and from each side (second-order one-sided
            // stencils): away from the kink the analytic value must match at
            // least one of them.
            const double hs = opt.h * opt.retry_factor;
            const double saved = slot;
            const double f0 = evaluate(graph, inputs);
            double candidates[3] = {central(slot, hs), 0.0, 0.0};
            for (int k = 0; k < 2; ++k) {
                const double sg = k == 0 ? 1.0 : -1.0;
                slot = saved + sg * hs;
                const double f1 = evaluate(graph, inputs);
                slot = saved + 2.0 * sg * hs;
                const double f2 = evaluate(graph, inputs);
                slot = saved;
                candidates[k + 1] = sg * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * hs);
            }
            for (double c : candidates) {
                const double e = relative_error(analytic, c, opt.floor);
                if (e < err) {
                    numeric = c;
                    err = e;
                }
            }
            if (err < opt.tolerance) ++report.kink_retries;
        }
        ++report.probes;
        if (!(err <= report.max_rel_error)) {
            report.max_rel_error = std::isfinite(err) ? err : HUGE_VAL;
            report.worst = tensor + "[" + std::to_string(i) + "]";
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    };

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto vals = inputs[k].values();
        for (std::size_t i : probe_indices(vals.size(), opt, rng))
            probe("input" + std::to_string(k), i, vals[i], input_grads[k][i]);
    }
    if (params) {
        for (auto& [pname, p] : params->entries()) {
            const std::vector<double> analytic = p.grad;
            for (std::size_t i : probe_indices(p.numel(), opt, rng)) probe(pname, i, p.value[i], analytic[i]);
        }
        params->zero_grad();
    }
    report.passed = report.max_rel_error < opt.tolerance;
    return report;
}

} // namespace recorr::ad
