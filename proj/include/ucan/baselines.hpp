#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ucan/data.hpp"
#include "ucan/model.hpp"
#include "ucan/risk.hpp"

namespace ucan {

enum class BaselineMethod { Retrain, GradientAscent, Npo, HardPrune };

[[nodiscard]] std::string to_string(BaselineMethod m);
[[nodiscard]] BaselineMethod baseline_from_string(std::string_view s);

struct BaselineConfig {
    BaselineMethod method = BaselineMethod::GradientAscent;
    double lr = 1e-2;
    std::size_t epochs = 3;  // passes over the forget set (GA/NPO)
    std::size_t batch_size = 16;
    double npo_beta = 0.1;
    double prune_fraction = 0.1;
    std::optional<double> prune_tau;  // when set, prune by threshold instead of fraction
    double divergence_factor = 5.0;
    std::uint64_t seed = 0;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

struct GradientRunResult {
    AdapterModel model;
    std::vector<double> losses;  // objective per pass (mean over forget samples)
    std::size_t steps = 0;
    bool diverged = false;
    std::vector<std::string> diagnostics;
};

// Trains a freshly initialized model on the retain samples only.
[[nodiscard]] AdapterModel retrain_on_remain(const ModelShape& shape, std::uint64_t init_seed,
                                             std::span<const std::int32_t> item_groups,
                                             std::span<const Sample> retain_samples, const TemplateSpec& tmpl,
                                             const TrainHyper& hyper);

// Ascends forget-set cross-entropy; stops early once the loss exceeds
// divergence_factor times its initial value.
[[nodiscard]] GradientRunResult gradient_ascent(AdapterModel model, std::span<const Sample> forget_samples,
                                                const TemplateSpec& tmpl, const BaselineConfig& config);

// Per-sample NPO loss (2/beta) * log(1 + exp(beta * (logp - logp_ref))).
[[nodiscard]] double npo_sample_loss(double logp, double logp_ref, double beta);

// Mean NPO loss of `model` against `reference` over the batches.
[[nodiscard]] double npo_loss(const AdapterModel& model, const AdapterModel& reference,
                              std::span<const TokenBatch> batches, double beta);

// Minimizes the NPO loss against a frozen copy of the input model.
[[nodiscard]] GradientRunResult npo_unlearn(AdapterModel model, std::span<const Sample> forget_samples,
                                            const TemplateSpec& tmpl, const BaselineConfig& config);

// Zeroes W_A columns of the top-scored dims per layer (ties by ascending
// index), or of every dim with risk > tau when `tau` is given.
[[nodiscard]] AdapterModel hard_prune(AdapterModel model, const RiskReport& report, double fraction,
                                      std::optional<double> tau = {});

}  // namespace ucan
