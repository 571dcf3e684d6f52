#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ucan/attenuate.hpp"
#include "ucan/baselines.hpp"
#include "ucan/config.hpp"
#include "ucan/eval.hpp"

namespace ucan {

// Batched views of a workload, ready for the model.
struct WorkloadBatches {
    std::vector<TokenBatch> forget_train;
    std::vector<TokenBatch> retain_train;
    std::vector<TokenBatch> forget_queries;
    std::vector<TokenBatch> retain_queries;
};

[[nodiscard]] WorkloadBatches batch_workload(const Workload& w, const TemplateSpec& tmpl, std::size_t batch_size);

// Data, workload and a deployed (trained) model for one config.
struct Experiment {
    RunConfig config;
    PreparedData data;
    TemplateSpec tmpl;
    Workload work;
    WorkloadBatches batches;
    AdapterModel deployed;
    std::vector<double> train_losses;
};

[[nodiscard]] Experiment prepare_experiment(const RunConfig& config);
// Same, reusing an already trained model (e.g. loaded from a checkpoint).
[[nodiscard]] Experiment attach_experiment(const RunConfig& config, const Split& split, AdapterModel deployed);

[[nodiscard]] TrainResult train_deployed(const RunConfig& config, const TemplateSpec& tmpl, const Workload& work,
                                         std::int32_t n_items, std::span<const std::int32_t> item_groups = {});

struct MethodRun {
    std::string method;
    AdapterModel model;
    RunMeasure run;
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();
    std::optional<UnlearnResult> ucan;  // set for U-CAN runs
};

[[nodiscard]] MethodRun run_ucan(const Experiment& ex, const UcanConfig& config);
[[nodiscard]] MethodRun run_baseline(const Experiment& ex, const BaselineConfig& config);

[[nodiscard]] EvalReport evaluate_run(const Experiment& ex, const MethodRun& run);

}  // namespace ucan
