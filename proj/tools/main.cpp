#include <CLI11.hpp>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "semcorr/gradcheck.hpp"
#include "semcorr/trainer.hpp"

namespace fs = std::filesystem;
using namespace semcorr;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "flat key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--set", opts.sets, "config override key=value (repeatable, last wins)");
    cmd->add_option("--seed", opts.seed, "seed override");
}

/// Keys the CLI accepts beyond the trainer's own.
const std::vector<std::string> kCliKeys = {"source_csv", "target_csv", "projector_ckpt", "kernel_ckpt"};

ConfigMap load_config(const CommonOpts& opts) {
    ConfigMap map;
    if (!opts.config_path.empty()) map = parse_config_text(read_file(opts.config_path));
    for (const std::string& kv : opts.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        map[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    if (opts.seed) map["seed"] = std::to_string(*opts.seed);
    for (const auto& [key, value] : map) {
        const auto& train_keys = train_config_keys();
        const bool known = std::find(train_keys.begin(), train_keys.end(), key) != train_keys.end() ||
                           std::find(kCliKeys.begin(), kCliKeys.end(), key) != kCliKeys.end();
        if (!known) throw std::invalid_argument("unknown config key '" + key + "'");
    }
    return map;
}

std::string get_or(const ConfigMap& map, const std::string& key, const std::string& fallback) {
    const auto it = map.find(key);
    return it == map.end() ? fallback : it->second;
}

TrainedModel load_or_init_model(const ConfigMap& map, const TrainConfig& cfg, const fs::path& out_dir,
                                bool require_checkpoints) {
    const fs::path proj_path = get_or(map, "projector_ckpt", (out_dir / "projector.bin").string());
    const fs::path kern_path = get_or(map, "kernel_ckpt", (out_dir / "kernel.bin").string());
    if (!require_checkpoints && (!fs::exists(proj_path) || !fs::exists(kern_path))) return init_model(cfg);
    TrainedModel model;
    model.projector = load_projector(proj_path);
    model.kernel = load_kernel(kern_path);
    if (model.projector.in_features() != cfg.channels || model.projector.dim() != cfg.d)
        throw std::invalid_argument("projector checkpoint dims do not match config");
    if (model.kernel.size != cfg.kernel_size)
        throw std::invalid_argument("kernel checkpoint size does not match config");
    return model;
}

int cmd_train(const CommonOpts& opts) {
    const ConfigMap map = load_config(opts);
    const TrainConfig cfg = build_train_config(map);
    const TrainResult result = train(cfg);

    fs::create_directories(opts.out_dir);
    const fs::path out(opts.out_dir);
    write_file_atomic(out / "metrics.csv", metrics_to_csv(result));
    write_file_atomic(out / "heldout.csv", heldout_to_csv(result));
    save_projector(out / "projector.bin", result.model.projector);
    save_kernel(out / "kernel.bin", result.model.kernel);

    for (const EvalPoint& p : result.heldout_log)
        std::cout << "step " << p.step << ": pck_raw=" << p.pck_raw << " pck_agg=" << p.pck_agg
                  << " epe_agg=" << p.epe_agg << "\n";
    const EvalPoint& first = result.heldout_log.front();
    const EvalPoint& last = result.heldout_log.back();
    std::cout << "trained " << cfg.steps << " steps; heldout PCK@0.1 " << first.pck_raw << " (step-0 raw) -> "
              << last.pck_agg << " (aggregated)\n"
              << "wrote metrics.csv, heldout.csv, projector.bin, kernel.bin to " << opts.out_dir << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts) {
    const ConfigMap map = load_config(opts);
    const TrainConfig cfg = build_train_config(map);
    const TrainedModel model = load_or_init_model(map, cfg, opts.out_dir, true);
    const std::vector<SyntheticPair> heldout = make_heldout_set(cfg);

    std::string csv = eval_csv_header() + "\n";
    std::cout << eval_csv_header() << "\n";
    for (const double alpha : {0.05, 0.1, 0.15}) {
        long correct = 0, total = 0;
        double err = 0.0;
        for (const SyntheticPair& pair : heldout) {
            const PipelineVolumes v = forward_volumes(pair.source, pair.target, model);
            const FlowField flow = wta_flow(v.agg);
            const PckResult r = pck(flow, pair.gt_flow, pair.valid, alpha);
            correct += r.correct;
            total += r.total;
            err += endpoint_error(flow, pair.gt_flow, pair.valid) * r.total;
        }
        PckResult merged;
        merged.alpha = alpha;
        merged.correct = static_cast<int>(correct);
        merged.total = static_cast<int>(total);
        merged.pck = static_cast<double>(correct) / static_cast<double>(total);
        const std::string row = eval_csv_row(merged, err / static_cast<double>(total));
        csv += row + "\n";
        std::cout << row << "\n";
    }
    fs::create_directories(opts.out_dir);
    write_file_atomic(fs::path(opts.out_dir) / "eval.csv", csv);
    return 0;
}

int cmd_inspect(const CommonOpts& opts) {
    const ConfigMap map = load_config(opts);
    const TrainConfig cfg = build_train_config(map);
    const TrainedModel model = load_or_init_model(map, cfg, opts.out_dir, false);

    SyntheticPair pair;
    if (map.count("source_csv") && map.count("target_csv")) {
        pair.source = read_image_csv(map.at("source_csv"));
        pair.target = read_image_csv(map.at("target_csv"));
        if (pair.source.shape != pair.target.shape)
            throw std::invalid_argument("source and target grids must match");
        pair.gt_flow = FlowField(pair.source.shape, pair.source.shape);
        pair.valid = ConfidenceMask(pair.source.shape);
    } else {
        Rng rng(cfg.seed);
        pair = generate_pair(rng, cfg.grid(), cfg.channels, cfg.pair);
    }

    const PipelineVolumes v = forward_volumes(pair.source, pair.target, model);
    const FlowsAndMask raw_fm = mask_and_flows(v.raw, cfg.consistency());
    const FlowsAndMask agg_fm = mask_and_flows(v.agg, cfg.consistency());

    fs::create_directories(opts.out_dir);
    const fs::path out(opts.out_dir);
    write_image_csv(out / "source.csv", pair.source);
    write_image_csv(out / "target.csv", pair.target);
    write_flow_csv(out / "gt_flow.csv", pair.gt_flow);
    write_mask_pgm(out / "valid.pgm", pair.valid);
    write_cost_volume_csv(out / "cost_raw.csv", v.raw);
    write_cost_volume_csv(out / "cost_agg.csv", v.agg);
    write_flow_csv(out / "flow_raw.csv", raw_fm.fwd);
    write_flow_csv(out / "flow_agg.csv", agg_fm.fwd);
    write_mask_pgm(out / "mask_raw.pgm", raw_fm.mask);
    write_mask_pgm(out / "mask_agg.pgm", agg_fm.mask);
    write_image_csv(out / "warped.csv", warp(pair.target, agg_fm.fwd));
    std::cout << "n_c=" << raw_fm.mask.count << " n_a=" << agg_fm.mask.count << "; wrote grids, volumes, "
              << "flows and masks to " << opts.out_dir << "\n";
    return 0;
}

int cmd_gradcheck(const CommonOpts& opts) {
    const ConfigMap map = load_config(opts);
    std::uint64_t seed = 7;
    if (auto it = map.find("seed"); it != map.end()) seed = std::stoull(it->second);
    const GradCheckResult r = run_gradcheck(seed);
    std::cout << "ccl_term      max rel err = " << r.ccl << "  (tol 1e-4)\n"
              << "correlate     max rel err = " << r.correlate << "  (tol 1e-4)\n"
              << "conv4d        max rel err = " << r.conv << "  (tol 1e-4)\n"
              << "end_to_end    max rel err = " << r.end_to_end << "  (tol 1e-3)\n"
              << (r.pass() ? "gradcheck PASS\n" : "gradcheck FAIL\n");
    return r.pass() ? 0 : 2;
}

int cmd_ablate(const CommonOpts& opts) {
    const ConfigMap map = load_config(opts);
    std::string csv = "config,pck_agg,pck_raw\n";
    for (const char row : {'a', 'b', 'c', 'd'}) {
        ConfigMap m = map;
        m["loss_config"] = std::string(1, row);
        m.erase("eval_every");
        TrainConfig cfg = build_train_config(m);
        cfg.eval_every = 0;  // endpoints only; ablation needs just the final PCK
        const TrainResult result = train(cfg);
        const EvalPoint& last = result.heldout_log.back();
        std::cout << "config " << row << ": final PCK@0.1 = " << last.pck_agg
                  << " (raw-volume flow " << last.pck_raw << ")\n";
        csv += std::string(1, row) + "," + format_double(last.pck_agg) + "," + format_double(last.pck_raw) +
               "\n";
    }
    fs::create_directories(opts.out_dir);
    write_file_atomic(fs::path(opts.out_dir) / "ablate.csv", csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dense correspondence trainer: features + 4D-conv cost aggregation learned jointly "
                 "from confidence-masked pseudo-labels on synthetic warp pairs"};
    app.require_subcommand(1);

    CommonOpts train_opts, eval_opts, inspect_opts, gradcheck_opts, ablate_opts;
    add_common(app.add_subcommand("train", "train on synthetic pairs, write metrics and checkpoints"),
               train_opts);
    add_common(app.add_subcommand("eval", "evaluate checkpoints: PCK table at alpha 0.05/0.1/0.15"),
               eval_opts);
    add_common(app.add_subcommand("inspect", "dump volumes, flows and masks for one seeded pair"),
               inspect_opts);
    add_common(app.add_subcommand("gradcheck", "finite-difference check of all backward passes"),
               gradcheck_opts);
    add_common(app.add_subcommand("ablate", "train loss configs a-d and report final PCKs"), ablate_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (app.got_subcommand("train")) return cmd_train(train_opts);
        if (app.got_subcommand("eval")) return cmd_eval(eval_opts);
        if (app.got_subcommand("inspect")) return cmd_inspect(inspect_opts);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck(gradcheck_opts);
        if (app.got_subcommand("ablate")) return cmd_ablate(ablate_opts);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
