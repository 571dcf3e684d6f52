#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ucan/model.hpp"
#include "ucan/risk.hpp"
#include "ucan/signals.hpp"

namespace ucan {

struct LayerPlan {
    std::vector<std::size_t> selected;  // Omega: ascending input-dimension indices
    Vec alpha;                          // 1.0 outside Omega
};

struct InterventionPlan {
    std::vector<LayerPlan> layers;

    [[nodiscard]] std::size_t selected_count() const noexcept;
};

// {j : risk[j] > tau}, strict.
[[nodiscard]] std::vector<std::size_t> select_intervention(std::span<const float> risk, double tau);

// alpha_max * (1 - (risk - tau) / (1 - tau + eps))^beta; requires risk > tau.
[[nodiscard]] double retention_factor(double risk, double tau, double alpha_max, double beta, double eps = kEps);

// Column j of w scaled by alpha[j], in place.
void apply_column_scaling(Matrix& w, std::span<const float> alpha);

[[nodiscard]] InterventionPlan plan_intervention(const RiskReport& report, const UcanConfig& config);

// Folds the plan into the model. Adapter mode scales W_A columns; full mode
// replaces each layer's base by its scaled merged weight and clears the adapter.
void apply_plan(AdapterModel& model, const InterventionPlan& plan, Target target);

struct UnlearnTiming {
    double stats_s = 0.0;
    double score_s = 0.0;
    double attenuate_s = 0.0;
    [[nodiscard]] double total() const noexcept { return stats_s + score_s + attenuate_s; }
};

struct UnlearnResult {
    AdapterModel model;
    ActivationSummary summary;
    RiskReport report;
    InterventionPlan plan;
    UnlearnTiming timing;
};

// One-shot forward-only unlearning: streaming statistics, layer-wise risk
// scoring, and in-place soft attenuation.
[[nodiscard]] UnlearnResult unlearn(AdapterModel model, std::span<const TokenBatch> forget_batches,
                                    std::span<const TokenBatch> retain_batches, const UcanConfig& config);

// Stage 2 only, on a precomputed summary.
[[nodiscard]] UnlearnResult unlearn_from_summary(AdapterModel model, ActivationSummary summary,
                                                 const UcanConfig& config);

}  // namespace ucan
