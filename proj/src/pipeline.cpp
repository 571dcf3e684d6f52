#include "ucan/pipeline.hpp"

#include "ucan/errors.hpp"
#include "ucan/rng.hpp"

namespace ucan {

WorkloadBatches batch_workload(const Workload& w, const TemplateSpec& tmpl, std::size_t batch_size) {
    WorkloadBatches b;
    b.forget_train = make_batches(w.forget_train, tmpl, batch_size);
    b.retain_train = make_batches(w.retain_train, tmpl, batch_size);
    b.forget_queries = make_batches(w.forget_queries, tmpl, batch_size);
    b.retain_queries = make_batches(w.retain_queries, tmpl, batch_size);
    return b;
}

TrainResult train_deployed(const RunConfig& config, const TemplateSpec& tmpl, const Workload& work,
                           std::int32_t n_items, std::span<const std::int32_t> item_groups) {
    TrainHyper hyper = config.train;
    hyper.seed = derive_seed(config.seed, "training");
    return train_adapter(init_model(model_shape(config, n_items), derive_seed(config.seed, "init"), item_groups),
                         work.all_train(), tmpl, hyper);
}

Experiment attach_experiment(const RunConfig& config, const Split& split, AdapterModel deployed) {
    config.validate();
    Experiment ex;
    ex.config = config;
    ex.data.split = split;
    ex.data.name = config.dataset;
    ex.tmpl = config.template_spec();
    ex.work = build_workload(split, config.max_history());
    if (ex.work.forget_train.empty() || ex.work.retain_train.empty()) {
        throw DataError("split leaves no training samples on one side");
    }
    if (ex.work.forget_queries.empty() || ex.work.retain_queries.empty()) {
        throw DataError("split leaves no evaluation queries on one side");
    }
    ex.batches = batch_workload(ex.work, ex.tmpl, config.train.batch_size);
    ex.deployed = std::move(deployed);
    return ex;
}

Experiment prepare_experiment(const RunConfig& config) {
    auto data = prepare_data(config);
    const auto tmpl = config.template_spec();
    const auto work = build_workload(data.split, config.max_history());
    auto trained = train_deployed(config, tmpl, work, data.split.retain.n_items, data.item_groups);
    auto ex = attach_experiment(config, data.split, std::move(trained.model));
    ex.data = std::move(data);
    ex.train_losses = std::move(trained.epoch_losses);
    return ex;
}

MethodRun run_ucan(const Experiment& ex, const UcanConfig& config) {
    MethodRun out;
    out.method = config.ablations == Ablations{} ? "ucan" : "ucan-wo-" + config.ablation_tag();
    std::optional<UnlearnResult> res;
    const std::size_t samples = ex.work.forget_train.size() + ex.work.retain_train.size();
    out.run = measure_run([&] { res = unlearn(ex.deployed, ex.batches.forget_train, ex.batches.retain_train, config); },
                          samples);
    out.model = res->model;
    out.extra["config"] = config.to_json();
    out.extra["selected_dims"] = res->plan.selected_count();
    out.ucan = std::move(res);
    return out;
}

MethodRun run_baseline(const Experiment& ex, const BaselineConfig& config) {
    config.validate();
    MethodRun out;
    out.method = to_string(config.method);
    out.extra["config"] = config.to_json();
    const std::uint64_t seed = derive_seed(ex.config.seed, "baseline");
    BaselineConfig cfg = config;
    cfg.seed = seed;

    switch (config.method) {
        case BaselineMethod::Retrain: {
            TrainHyper hyper = ex.config.train;
            hyper.seed = derive_seed(ex.config.seed, "training");
            out.run = measure_run(
                [&] {
                    out.model = retrain_on_remain(ex.deployed.shape, derive_seed(ex.config.seed, "init"),
                                                  ex.data.item_groups, ex.work.retain_train, ex.tmpl, hyper);
                },
                ex.work.retain_train.size() * hyper.epochs);
            break;
        }
        case BaselineMethod::GradientAscent:
        case BaselineMethod::Npo: {
            GradientRunResult res;
            const bool ga = config.method == BaselineMethod::GradientAscent;
            out.run = measure_run(
                [&] {
                    res = ga ? gradient_ascent(ex.deployed, ex.work.forget_train, ex.tmpl, cfg)
                             : npo_unlearn(ex.deployed, ex.work.forget_train, ex.tmpl, cfg);
                },
                ex.work.forget_train.size() * config.epochs);
            out.model = std::move(res.model);
            out.extra["losses"] = res.losses;
            out.extra["steps"] = res.steps;
            out.extra["diverged"] = res.diverged;
            out.extra["diagnostics"] = res.diagnostics;
            break;
        }
        case BaselineMethod::HardPrune: {
            // Stand-in for localization-pruning baselines: reuses the U-CAN risk scores.
            out.extra["note"] = "hard-prune stand-in";
            const std::size_t samples = ex.work.forget_train.size() + ex.work.retain_train.size();
            out.run = measure_run(
                [&] {
                    const auto summary = collect_summary(ex.deployed, ex.batches.forget_train, ex.batches.retain_train);
                    const auto report = score_layers(ex.deployed, summary, ex.config.ucan);
                    out.model = hard_prune(ex.deployed, report, config.prune_fraction, config.prune_tau);
                },
                samples);
            break;
        }
    }
    return out;
}

EvalReport evaluate_run(const Experiment& ex, const MethodRun& run) {
    auto report = evaluate(ex.deployed, run.model, {ex.batches.forget_queries, ex.batches.retain_queries});
    report.method = run.method;
    report.dataset = ex.data.name;
    report.seed = ex.config.seed;
    report.run = run.run;
    report.extra = run.extra;
    return report;
}

}  // namespace ucan
