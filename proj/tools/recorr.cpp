// recorr: gen | train | register | evaluate | gradcheck | bench
//
// Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numerical failure.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "recorr/audit.hpp"
#include "recorr/bench.hpp"
#include "recorr/config.hpp"
#include "recorr/pyramid.hpp"
#include "recorr/trainer.hpp"
#include "recorr/volume_io.hpp"

using namespace recorr;
namespace fs = std::filesystem;

namespace {

std::string key_table() {
    std::ostringstream os;
    os << "Config keys (JSON; nested objects or dotted keys, unknown keys rejected):\n";
    for (const ConfigKeyInfo& k : config_keys())
        os << "  " << std::left << std::setw(26) << k.path << std::setw(24) << k.default_value << k.help << "\n";
    return os.str();
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << doc.dump(2) << "\n";
}

// --config wins; otherwise a checkpoint brings the config it was trained with.
RunConfig resolve_config(const std::string& config, const std::string& ckpt) {
    if (!config.empty()) return load_run_config(config);
    if (!ckpt.empty()) {
        const fs::path beside = fs::path(ckpt).parent_path() / "resolved_config.json";
        if (fs::exists(beside)) return load_run_config(beside);
    }
    return RunConfig{};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"recorr: recurrent correlation search for 3-D deformable registration"};
    app.require_subcommand(1);
    app.footer(key_table());

    std::string spec_path, out_dir;
    auto* gen = app.add_subcommand("gen", "write a synthetic dataset and manifest");
    gen->add_option("--spec", spec_path, "run config (seed and data.* keys)")->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir, "output directory")->required();

    std::string config_path, data_path, train_out, train_report;
    auto* tr = app.add_subcommand("train", "train learned mode");
    tr->add_option("--config", config_path, "run config")->check(CLI::ExistingFile);
    tr->add_option("--data", data_path, "dataset manifest.json")->required();
    tr->add_option("--out", train_out, "output directory for checkpoints and logs")->required();
    tr->add_option("--report", train_report, "also evaluate the best checkpoint on the test split into this file");

    std::string fixed_path, moving_path, ckpt_path, field_out, warped_out, reg_config;
    bool reg_direct = false, reg_diffeo = false;
    auto* reg = app.add_subcommand("register", "register one pair");
    reg->add_option("--fixed", fixed_path, "fixed .vol3")->required()->check(CLI::ExistingFile);
    reg->add_option("--moving", moving_path, "moving .vol3")->required()->check(CLI::ExistingFile);
    auto* reg_ckpt = reg->add_option("--ckpt", ckpt_path, "learned-mode checkpoint")->check(CLI::ExistingFile);
    reg->add_flag("--direct", reg_direct, "training-free direct mode")->excludes(reg_ckpt);
    reg->add_flag("--diffeo", reg_diffeo, "diffeomorphic variant");
    reg->add_option("--config", reg_config, "run config (model keys)")->check(CLI::ExistingFile);
    reg->add_option("--out", field_out, "displacement field .vol3")->required();
    reg->add_option("--warped", warped_out, "warped moving image .vol3");

    std::string eval_data, eval_split = "test", eval_ckpt, eval_report, eval_config;
    bool eval_direct = false, eval_diffeo = false;
    auto* ev = app.add_subcommand("evaluate", "metrics report on a manifest split");
    ev->add_option("--data", eval_data, "dataset manifest.json")->required()->check(CLI::ExistingFile);
    ev->add_option("--split", eval_split, "train | validation | test");
    auto* ev_ckpt = ev->add_option("--ckpt", eval_ckpt, "learned-mode checkpoint")->check(CLI::ExistingFile);
    ev->add_flag("--direct", eval_direct, "training-free direct mode")->excludes(ev_ckpt);
    ev->add_flag("--diffeo", eval_diffeo, "diffeomorphic variant");
    ev->add_option("--config", eval_config, "run config (model keys)")->check(CLI::ExistingFile);
    ev->add_option("--report", eval_report, "report .json")->required();

    std::uint64_t gc_seed = 0;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of every op, loss and the network");
    gc->add_option("--seed", gc_seed, "seed");

    BenchOptions bopt;
    std::string bench_out;
    bool bench_no_serial = false;
    auto* bench = app.add_subcommand("bench", "correlation / warp / conv kernel timings as JSON");
    bench->add_option("--radii", bopt.radii, "search extents")->delimiter(',');
    bench->add_option("--dims", bopt.dims, "cube side");
    bench->add_option("--channels", bopt.channels, "feature channels");
    bench->add_option("--repeats", bopt.repeats, "best-of repeats");
    bench->add_option("--seed", bopt.seed, "seed");
    bench->add_flag("--no-serial", bench_no_serial, "skip the serial reference kernels");
    bench->add_option("--out", bench_out, "write JSON here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            const RunConfig cfg = spec_path.empty() ? RunConfig{} : load_run_config(spec_path);
            const Manifest m = generate_dataset(cfg.data, out_dir);
            std::cout << "wrote " << m.entries.size() << " pairs to " << m.path.string() << " (seed " << cfg.seed
                      << ")\n";
        } else if (*tr) {
            const RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
            const Manifest m = read_manifest(data_path);
            TrainResult r = train(m, cfg, train_out, &std::cout);
            std::cout << "best epoch " << r.best_epoch << " val_dice " << r.best_val_dice << " -> "
                      << (fs::path(train_out) / "best.ckpt").string() << "\n";
            if (!train_report.empty()) write_json(train_report, evaluate(m, "test", cfg, &r.best));
        } else if (*reg) {
            RunConfig cfg = resolve_config(reg_config, ckpt_path);
            if (reg_direct) cfg.model.mode = Mode::direct;
            if (reg_diffeo) cfg.model.variant = Variant::diffeo;
            if (cfg.model.mode == Mode::learned && ckpt_path.empty())
                throw ContractError("register: pass --ckpt for learned mode or --direct");
            ad::ParamStore params;
            if (!ckpt_path.empty()) params = ad::load_checkpoint(ckpt_path);
            const Volume fixed = read_vol3(fixed_path), moving = read_vol3(moving_path);
            if (fixed.dims() != moving.dims())
                throw DataError("register: fixed " + to_string(fixed.dims()) + " and moving " +
                                to_string(moving.dims()) + " differ");
            // the pyramid needs multiples of 16: replicate-pad, then crop back
            const RegistrationTrace t =
                register_images(pad_to_multiple(fixed, 16), pad_to_multiple(moving, 16), &params, cfg.model);
            const DisplacementField field(crop(t.final_field.volume(), fixed.dims()));
            write_field(field_out, field);
            if (!warped_out.empty()) write_vol3(warped_out, warp(moving, field));
            std::cout << "mean |u| " << mean_magnitude(field.volume()) << " fold_fraction "
                      << fold_fraction(jacobian_det(field)) << "\n";
        } else if (*ev) {
            RunConfig cfg = resolve_config(eval_config, eval_ckpt);
            if (eval_direct) cfg.model.mode = Mode::direct;
            if (eval_diffeo) cfg.model.variant = Variant::diffeo;
            if (cfg.model.mode == Mode::learned && eval_ckpt.empty())
                throw ContractError("evaluate: pass --ckpt for learned mode or --direct");
            ad::ParamStore params;
            if (!eval_ckpt.empty()) params = ad::load_checkpoint(eval_ckpt);
            const nlohmann::json report = evaluate(read_manifest(eval_data), eval_split, cfg, &params);
            write_json(eval_report, report);
            const auto& s = report["summary"];
            std::cout << "dice " << s["dice_mean"]["mean"] << " (baseline " << report["baseline"]["dice_mean"]["mean"]
                      << ")  epe " << s["epe"]["mean"] << "  fold_fraction " << s["fold_fraction"]["mean"] << "\n";
        } else if (*gc) {
            bool ok = true;
            for (const ad::GradcheckReport& r : gradient_audit(gc_seed)) {
                std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(36) << r.name
                          << " max_rel_error " << std::setw(12) << r.max_rel_error << " probes " << r.probes
                          << " kink_retries " << r.kink_retries << " worst " << r.worst << "\n";
                ok = ok && r.passed;
            }
            return ok ? 0 : 3;
        } else if (*bench) {
            bopt.serial = !bench_no_serial;
            const nlohmann::json out = run_bench(bopt);
            if (bench_out.empty())
                std::cout << out.dump(2) << "\n";
            else
                write_json(bench_out, out);
        }
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
