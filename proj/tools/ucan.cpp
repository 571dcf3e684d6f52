// Command-line front end: train a deployed model, unlearn a forget set with
// U-CAN or a baseline, evaluate checkpoints against each other, sweep tau or
// lambda.
//
// Settings resolve as defaults < config file < $UCAN_OUTPUT_DIR < --set / flags.
// Commands that start from a checkpoint begin with the config embedded in it.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ucan/errors.hpp"
#include "ucan/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ucan;

namespace {

constexpr const char* kOutputEnv = "UCAN_OUTPUT_DIR";
constexpr const char* kCheckpointName = "deployed.ckpt";
constexpr const char* kManifestName = "split.manifest";

struct Settings {
    std::string config_path;
    std::vector<std::string> sets;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
};

void add_settings(CLI::App* cmd, Settings& s) {
    cmd->add_option("-c,--config", s.config_path, "config file (key = value, [section] headers)");
    cmd->add_option("--set", s.sets, "override one setting, key=value (repeatable)");
    cmd->add_option("-o,--output-dir", s.output_dir, "output directory");
    cmd->add_option("--seed", s.seed, "root seed");
}

void resolve(RunConfig& cfg, const Settings& s) {
    if (!s.config_path.empty()) cfg.load_file(s.config_path);
    if (const char* env = std::getenv(kOutputEnv); env && *env) cfg.output_dir = env;
    for (const auto& kv : s.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got `" + kv + "`");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!s.output_dir.empty()) cfg.output_dir = s.output_dir;
    if (s.seed) cfg.seed = *s.seed;
}

// Embedded in checkpoints. output_dir is left out so the artifact does not
// depend on where it was written.
std::string portable_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& [k, v] : cfg.to_map()) {
        if (k != "output_dir") os << k << " = " << v << '\n';
    }
    return os.str();
}

fs::path output_dir(const RunConfig& cfg) {
    fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

// A checkpoint together with the run settings recovered from it.
struct Lineage {
    Checkpoint ckpt;
    RunConfig config;
    std::string lineage;
};

Lineage open_checkpoint(const fs::path& path, const Settings* overrides) {
    Lineage out;
    out.ckpt = load_checkpoint(path);
    const auto& meta = out.ckpt.meta;
    if (!meta.contains("config") || !meta.contains("lineage") || !meta.contains("manifest_hash")) {
        throw FormatError(path.string() + ": checkpoint lacks run metadata (config, lineage, manifest_hash)");
    }
    out.config.load_text(meta.at("config").get<std::string>(), path.string() + " [config]");
    out.lineage = meta.at("lineage").get<std::string>();
    if (hex64(out.config.lineage_hash()) != out.lineage) {
        throw FormatError(path.string() + ": embedded config does not reproduce the recorded lineage hash");
    }
    if (overrides) {
        resolve(out.config, *overrides);
        if (hex64(out.config.lineage_hash()) != out.lineage) {
            throw ConfigError("overrides change data, model or training settings of " + path.string() +
                              "; retrain instead");
        }
    }
    out.config.validate();
    return out;
}

Split open_manifest(const fs::path& path, const Lineage& lin) {
    if (!fs::exists(path)) throw DataError("manifest not found: " + path.string());
    const auto hash = hex64(content_hash(path));
    const auto want = lin.ckpt.meta.at("manifest_hash").get<std::string>();
    if (hash != want) {
        throw DataError("manifest " + path.string() + " (hash " + hash + ") does not belong to this checkpoint (expects " +
                        want + ")");
    }
    auto split = read_manifest(path);
    check_dim(static_cast<std::size_t>(split.retain.n_items), static_cast<std::size_t>(lin.ckpt.model.shape.n_items),
              "manifest item count vs checkpoint vocabulary");
    return split;
}

void print_report(const EvalReport& r) {
    std::printf("%-12s forget R@10 %.4f -> %.4f  retain R@10 %.4f -> %.4f  trade-off@10 %.2f  KL %.4f  shift %.1f%%  "
                "PPL %.2f -> %.2f\n",
                r.method.c_str(), r.forget_original.recall10, r.forget.recall10, r.retain_original.recall10,
                r.retain.recall10, r.tradeoff_at_10, r.kl, r.pred_shift_pct, r.ppl_original, r.ppl);
}

// ---- train / split ---------------------------------------------------------

int cmd_train(const Settings& s) {
    RunConfig cfg;
    resolve(cfg, s);
    const auto dir = output_dir(cfg);
    const auto ex = prepare_experiment(cfg);

    const auto manifest = dir / kManifestName;
    write_manifest(manifest, ex.data.split);
    nlohmann::json meta;
    meta["lineage"] = hex64(cfg.lineage_hash());
    meta["manifest_hash"] = hex64(content_hash(manifest));
    meta["dataset"] = ex.data.name;
    meta["config"] = portable_config(cfg);
    save_checkpoint(ex.deployed, dir / kCheckpointName, meta);

    std::ostringstream log;
    log << "epoch,loss\n";
    for (std::size_t i = 0; i < ex.train_losses.size(); ++i) log << i << ',' << ex.train_losses[i] << '\n';
    write_text(dir / "train_log.csv", log.str());
    write_text(dir / "config.toml", cfg.to_text());

    std::printf("trained %s: %zu forget + %zu retain samples, loss %.4f -> %.4f\n", ex.data.name.c_str(),
                ex.work.forget_train.size(), ex.work.retain_train.size(), ex.train_losses.front(),
                ex.train_losses.back());
    std::printf("wrote %s, %s (lineage %s)\n", (dir / kCheckpointName).c_str(), manifest.c_str(),
                meta["lineage"].get<std::string>().c_str());
    return 0;
}

int cmd_split(const Settings& s) {
    RunConfig cfg;
    resolve(cfg, s);
    const auto dir = output_dir(cfg);
    const auto data = prepare_data(cfg);
    write_manifest(dir / kManifestName, data.split);
    std::printf("%s: %zu forget / %zu retain events -> %s\n", data.name.c_str(), data.split.forget.events.size(),
                data.split.retain.events.size(), (dir / kManifestName).c_str());
    return 0;
}

// ---- unlearn / baseline ----------------------------------------------------

struct UcanFlags {
    std::optional<double> gamma, lambda, tau, alpha_max, beta;
    std::optional<std::string> ablation, target;
    bool quant_proxy = false;
};

void add_ucan_flags(CLI::App* cmd, UcanFlags& f) {
    cmd->add_option("--gamma", f.gamma, "retain suppression in the contrast gap");
    cmd->add_option("--lambda", f.lambda, "contrast vs utility balance");
    cmd->add_option("--tau", f.tau, "risk threshold; 1 leaves the model untouched");
    cmd->add_option("--alpha-max", f.alpha_max, "largest retention factor");
    cmd->add_option("--beta", f.beta, "decay exponent");
    cmd->add_option("--ablation", f.ablation, "any of F (no utility), C (no contrast), H (hard mask), or none");
    cmd->add_option("--target", f.target, "adapter or full")->check(CLI::IsMember({"adapter", "full"}));
    cmd->add_flag("--quant-proxy", f.quant_proxy, "score against NF4-dequantized weights");
}

void apply_ucan_flags(RunConfig& cfg, const UcanFlags& f) {
    if (f.gamma) cfg.ucan.gamma = *f.gamma;
    if (f.lambda) cfg.ucan.lambda = *f.lambda;
    if (f.tau) cfg.ucan.tau_risk = *f.tau;
    if (f.alpha_max) cfg.ucan.alpha_max = *f.alpha_max;
    if (f.beta) cfg.ucan.beta = *f.beta;
    if (f.ablation) cfg.set("ucan.ablation", *f.ablation);
    if (f.target) cfg.set("ucan.target", *f.target);
    if (f.quant_proxy) cfg.ucan.quant_proxy = true;
    cfg.ucan.validate();
}

struct RunInputs {
    std::string checkpoint;
    std::string manifest;
    std::string name;
};

void add_run_inputs(CLI::App* cmd, RunInputs& in) {
    cmd->add_option("--checkpoint", in.checkpoint, "deployed checkpoint")->required();
    cmd->add_option("--manifest", in.manifest, "split manifest written by train")->required();
    cmd->add_option("--name", in.name, "output file stem (default: method name)");
}

nlohmann::ordered_json run_record(const MethodRun& run, const Lineage& lin) {
    nlohmann::ordered_json j;
    j["method"] = run.method;
    j["lineage"] = lin.lineage;
    j["wall_clock_s"] = run.run.wall_clock_s;
    j["throughput"] = run.run.throughput;
    j["gradient_ops"] = run.run.gradient_ops;
    j["extra"] = run.extra;
    return j;
}

int cmd_unlearn(const Settings& s, const RunInputs& in, const UcanFlags& f) {
    auto lin = open_checkpoint(in.checkpoint, &s);
    apply_ucan_flags(lin.config, f);
    const auto split = open_manifest(in.manifest, lin);
    const auto ex = attach_experiment(lin.config, split, lin.ckpt.model);
    const auto run = run_ucan(ex, lin.config.ucan);
    const auto& res = *run.ucan;

    const auto dir = output_dir(lin.config);
    const auto stem = in.name.empty() ? run.method : in.name;
    // Same metadata as the input, so an untouched model is byte-identical.
    save_checkpoint(run.model, dir / (stem + ".ckpt"), lin.ckpt.meta);
    res.report.to_tensor_file(lin.config.ucan).save(dir / (stem + ".risk.tsr"));
    res.summary.to_tensor_file().save(dir / (stem + ".stats.tsr"));
    auto record = run_record(run, lin);
    record["timing"] = {{"stats_s", res.timing.stats_s},
                        {"score_s", res.timing.score_s},
                        {"attenuate_s", res.timing.attenuate_s}};
    nlohmann::ordered_json per_layer = nlohmann::ordered_json::array();
    for (const auto& l : res.plan.layers) per_layer.push_back(l.selected.size());
    record["selected_per_layer"] = per_layer;
    write_json(dir / (stem + ".run.json"), record);

    std::printf("%s: %zu dims attenuated across %zu layers in %.4f s (0 gradient ops) -> %s\n", run.method.c_str(),
                res.plan.selected_count(), res.plan.layers.size(), run.run.wall_clock_s,
                (dir / (stem + ".ckpt")).c_str());
    return 0;
}

struct BaselineFlags {
    std::string method;
    std::optional<double> lr, npo_beta, prune_fraction, prune_tau;
    std::optional<std::size_t> epochs, batch_size;
};

int cmd_baseline(const Settings& s, const RunInputs& in, const BaselineFlags& f) {
    auto lin = open_checkpoint(in.checkpoint, &s);
    auto& b = lin.config.baseline;
    b.method = baseline_from_string(f.method);
    if (f.lr) b.lr = *f.lr;
    if (f.npo_beta) b.npo_beta = *f.npo_beta;
    if (f.prune_fraction) b.prune_fraction = *f.prune_fraction;
    if (f.prune_tau) b.prune_tau = *f.prune_tau;
    if (f.epochs) b.epochs = *f.epochs;
    if (f.batch_size) b.batch_size = *f.batch_size;
    b.validate();

    const auto split = open_manifest(in.manifest, lin);
    auto ex = attach_experiment(lin.config, split, lin.ckpt.model);
    // Retraining starts from the same seeded initialization, item groups included.
    if (b.method == BaselineMethod::Retrain) ex.data.item_groups = prepare_data(lin.config).item_groups;
    const auto run = run_baseline(ex, b);

    const auto dir = output_dir(lin.config);
    const auto stem = in.name.empty() ? run.method : in.name;
    save_checkpoint(run.model, dir / (stem + ".ckpt"), lin.ckpt.meta);
    write_json(dir / (stem + ".run.json"), run_record(run, lin));
    std::printf("%s: %.4f s, %llu gradient ops -> %s\n", run.method.c_str(), run.run.wall_clock_s,
                static_cast<unsigned long long>(run.run.gradient_ops), (dir / (stem + ".ckpt")).c_str());
    if (run.extra.contains("diverged") && run.extra["diverged"].get<bool>()) {
        for (const auto& d : run.extra["diagnostics"]) std::fprintf(stderr, "warning: %s\n", d.get<std::string>().c_str());
    }
    return 0;
}

// ---- eval / sweep ----------------------------------------------------------

struct EvalInputsCli {
    std::string original;
    std::string candidate;
    std::string manifest;
    std::string name;
};

// Timing recorded next to a candidate checkpoint by unlearn/baseline.
std::optional<nlohmann::ordered_json> sidecar(const fs::path& candidate) {
    auto path = candidate;
    path.replace_extension(".run.json");
    if (!fs::exists(path)) return std::nullopt;
    std::ifstream in(path);
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_report(const fs::path& dir, const std::string& stem, const EvalReport& r) {
    write_json(dir / (stem + ".eval.json"), r.to_json());
    write_text(dir / (stem + ".eval.csv"), EvalReport::csv_header() + "\n" + r.csv_row() + "\n");
}

int cmd_eval(const Settings& s, const EvalInputsCli& in) {
    const auto original = open_checkpoint(in.original, &s);
    const auto candidate = open_checkpoint(in.candidate, nullptr);
    if (candidate.lineage != original.lineage) {
        throw DataError("lineage mismatch: " + in.candidate + " (" + candidate.lineage + ") vs " + in.original + " (" +
                        original.lineage + ")");
    }
    if (!(candidate.ckpt.model.shape == original.ckpt.model.shape)) {
        throw DataError("candidate and original checkpoints have different shapes or vocabularies");
    }
    const auto split = open_manifest(in.manifest, original);
    const auto ex = attach_experiment(original.config, split, original.ckpt.model);

    MethodRun run;
    run.model = candidate.ckpt.model;
    run.method = fs::path(in.candidate).stem().string();
    if (const auto rec = sidecar(in.candidate)) {
        run.method = rec->value("method", run.method);
        run.run.wall_clock_s = rec->value("wall_clock_s", 0.0);
        run.run.throughput = rec->value("throughput", 0.0);
        run.run.gradient_ops = rec->value("gradient_ops", std::uint64_t{0});
        if (rec->contains("extra")) run.extra = (*rec)["extra"];
    }
    const auto report = evaluate_run(ex, run);
    const auto dir = output_dir(original.config);
    const auto stem = in.name.empty() ? fs::path(in.candidate).stem().string() : in.name;
    write_report(dir, stem, report);
    print_report(report);
    return 0;
}

struct SweepFlags {
    std::string param;
    std::vector<double> values;
};

int cmd_sweep(const Settings& s, const RunInputs& in, const UcanFlags& f, SweepFlags sw) {
    if (sw.values.empty()) throw ConfigError("--values: sweep grid is empty");
    auto lin = open_checkpoint(in.checkpoint, &s);
    apply_ucan_flags(lin.config, f);
    const auto split = open_manifest(in.manifest, lin);
    const auto ex = attach_experiment(lin.config, split, lin.ckpt.model);

    std::sort(sw.values.begin(), sw.values.end());
    sw.values.erase(std::unique(sw.values.begin(), sw.values.end()), sw.values.end());
    std::ostringstream csv;
    csv << sw.param << ',' << EvalReport::csv_header() << '\n';
    for (double v : sw.values) {
        UcanConfig cfg = lin.config.ucan;
        (sw.param == "tau" ? cfg.tau_risk : cfg.lambda) = v;
        cfg.validate();
        auto run = run_ucan(ex, cfg);
        run.extra["swept"] = {{"param", sw.param}, {"value", v}};
        const auto report = evaluate_run(ex, run);
        csv << v << ',' << report.csv_row() << '\n';
        std::printf("%s=%-6g ", sw.param.c_str(), v);
        print_report(report);
    }
    const auto dir = output_dir(lin.config);
    const auto path = dir / (in.name.empty() ? "sweep_" + sw.param + ".csv" : in.name + ".csv");
    write_text(path, csv.str());
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"U-CAN: forward-only unlearning for adapter-tuned recommenders"};
    app.require_subcommand(1);

    Settings settings;
    RunInputs run_in;
    UcanFlags ucan_flags;
    BaselineFlags base_flags;
    EvalInputsCli eval_in;
    SweepFlags sweep_flags;

    auto* train = app.add_subcommand("train", "train the deployed model; writes checkpoint, split manifest, log");
    add_settings(train, settings);

    auto* split = app.add_subcommand("split", "write the forget/retain manifest only");
    add_settings(split, settings);

    auto* unlearn = app.add_subcommand("unlearn", "one-shot U-CAN unlearning of the manifest's forget side");
    add_settings(unlearn, settings);
    add_run_inputs(unlearn, run_in);
    add_ucan_flags(unlearn, ucan_flags);

    auto* baseline = app.add_subcommand("baseline", "run a comparison strategy");
    add_settings(baseline, settings);
    add_run_inputs(baseline, run_in);
    baseline->add_option("--method", base_flags.method, "retrain, ga, npo or prune")
        ->required()
        ->check(CLI::IsMember({"retrain", "ga", "npo", "prune"}));
    baseline->add_option("--lr", base_flags.lr);
    baseline->add_option("--epochs", base_flags.epochs);
    baseline->add_option("--batch-size", base_flags.batch_size);
    baseline->add_option("--npo-beta", base_flags.npo_beta);
    baseline->add_option("--prune-fraction", base_flags.prune_fraction);
    baseline->add_option("--prune-tau", base_flags.prune_tau);

    auto* eval = app.add_subcommand("eval", "compare a candidate checkpoint against the original");
    add_settings(eval, settings);
    eval->add_option("--original", eval_in.original)->required();
    eval->add_option("--candidate", eval_in.candidate)->required();
    eval->add_option("--manifest", eval_in.manifest)->required();
    eval->add_option("--name", eval_in.name, "report file stem (default: candidate stem)");

    auto* sweep = app.add_subcommand("sweep", "U-CAN over a grid of tau or lambda values; one CSV row each");
    add_settings(sweep, settings);
    add_run_inputs(sweep, run_in);
    add_ucan_flags(sweep, ucan_flags);
    sweep->add_option("--param", sweep_flags.param)->required()->check(CLI::IsMember({"tau", "lambda"}));
    sweep->add_option("--values", sweep_flags.values, "grid, comma separated")->required()->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train) return cmd_train(settings);
        if (*split) return cmd_split(settings);
        if (*unlearn) return cmd_unlearn(settings, run_in, ucan_flags);
        if (*baseline) return cmd_baseline(settings, run_in, base_flags);
        if (*eval) return cmd_eval(settings, eval_in);
        if (*sweep) return cmd_sweep(settings, run_in, ucan_flags, sweep_flags);
    } catch (const ucan::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: malformed metadata: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
    return 0;
}
