#include "ucan/attenuate.hpp"

#include <chrono>
#include <cmath>

#include "ucan/errors.hpp"

namespace ucan {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

std::size_t InterventionPlan::selected_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.selected.size();
    return n;
}

std::vector<std::size_t> select_intervention(std::span<const float> risk, double tau) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < risk.size(); ++j) {
        if (risk[j] > tau) out.push_back(j);
    }
    return out;
}

double retention_factor(double risk, double tau, double alpha_max, double beta, double eps) {
    if (!(risk > tau)) throw ContractError("retention_factor requires risk > tau");
    const double base = std::max(0.0, 1.0 - (risk - tau) / (1.0 - tau + eps));
    return alpha_max * std::pow(base, beta);
}

void apply_column_scaling(Matrix& w, std::span<const float> alpha) {
    check_dim(alpha.size(), w.cols, "column scaling factors");
    for (std::size_t r = 0; r < w.rows; ++r) {
        auto row = w.row(r);
        for (std::size_t c = 0; c < w.cols; ++c) row[c] *= alpha[c];
    }
}

InterventionPlan plan_intervention(const RiskReport& report, const UcanConfig& config) {
    config.validate();
    InterventionPlan plan;
    for (const auto& layer : report.layers) {
        LayerPlan lp;
        lp.selected = select_intervention(layer.risk, config.tau_risk);
        lp.alpha.assign(layer.risk.size(), 1.0f);
        for (auto j : lp.selected) {
            lp.alpha[j] = config.ablations.hard_mask
                              ? 0.0f
                              : static_cast<float>(retention_factor(layer.risk[j], config.tau_risk, config.alpha_max,
                                                                    config.beta, config.eps));
        }
        plan.layers.push_back(std::move(lp));
    }
    return plan;
}

void apply_plan(AdapterModel& model, const InterventionPlan& plan, Target target) {
    check_dim(plan.layers.size(), model.layers.size(), "plan layer count");
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& lp = plan.layers[l];
        // Untouched layers stay bit-identical in either mode.
        if (lp.selected.empty()) continue;
        auto& layer = model.layers[l];
        if (target == Target::Adapter) {
            apply_column_scaling(layer.lora_a, lp.alpha);
        } else {
            Matrix merged = layer.merged();
            apply_column_scaling(merged, lp.alpha);
            layer.base = std::move(merged);
            std::fill(layer.lora_a.data.begin(), layer.lora_a.data.end(), 0.0f);
            std::fill(layer.lora_b.data.begin(), layer.lora_b.data.end(), 0.0f);
        }
    }
}

UnlearnResult unlearn_from_summary(AdapterModel model, ActivationSummary summary, const UcanConfig& config) {
    UnlearnResult res;
    auto t0 = Clock::now();
    res.report = score_layers(model, summary, config);
    res.plan = plan_intervention(res.report, config);
    res.timing.score_s = seconds_since(t0);

    t0 = Clock::now();
    apply_plan(model, res.plan, config.target);
    res.timing.attenuate_s = seconds_since(t0);

    res.model = std::move(model);
    res.summary = std::move(summary);
    return res;
}

UnlearnResult unlearn(AdapterModel model, std::span<const TokenBatch> forget_batches,
                      std::span<const TokenBatch> retain_batches, const UcanConfig& config) {
    config.validate();
    const auto t0 = Clock::now();
    auto summary = collect_summary(model, forget_batches, retain_batches);
    for (const auto& st : summary.layers) {
        if (st.forget_count == 0 || st.retain_count == 0) throw DataError("unlearning needs samples on both sides");
    }
    const double stats_s = seconds_since(t0);
    auto res = unlearn_from_summary(std::move(model), std::move(summary), config);
    res.timing.stats_s = stats_s;
    return res;
}

}  // namespace ucan
