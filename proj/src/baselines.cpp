#include "ucan/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ucan/attenuate.hpp"
#include "ucan/errors.hpp"
#include "ucan/rng.hpp"

namespace ucan {

namespace {

constexpr double kMaxExponent = 50.0;

double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::vector<TokenBatch> shuffled_batches(std::span<const Sample> samples, const TemplateSpec& tmpl,
                                         std::size_t batch_size, std::uint64_t seed) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<Sample> shuffled;
    for (auto i : order) shuffled.push_back(samples[i]);
    return make_batches(shuffled, tmpl, batch_size);
}

std::vector<float> target_logprobs(const AdapterModel& model, const TokenBatch& batch) {
    const auto fr = forward(model, batch);
    std::vector<float> out;
    for (std::size_t b = 0; b < batch.batch; ++b) {
        out.push_back(log_softmax(fr.logits.row(b))[static_cast<std::size_t>(batch.target[b])]);
    }
    return out;
}

}  // namespace

std::string to_string(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::Retrain: return "retrain";
        case BaselineMethod::GradientAscent: return "ga";
        case BaselineMethod::Npo: return "npo";
        case BaselineMethod::HardPrune: return "prune";
    }
    return "?";
}

BaselineMethod baseline_from_string(std::string_view s) {
    if (s == "retrain") return BaselineMethod::Retrain;
    if (s == "ga") return BaselineMethod::GradientAscent;
    if (s == "npo") return BaselineMethod::Npo;
    if (s == "prune") return BaselineMethod::HardPrune;
    throw ConfigError("unknown baseline method: " + std::string(s));
}

void BaselineConfig::validate() const {
    switch (method) {
        case BaselineMethod::GradientAscent:
        case BaselineMethod::Npo:
            if (!(lr > 0.0)) throw ConfigError("baseline lr must be positive");
            if (batch_size == 0) throw ConfigError("baseline batch_size must be positive");
            if (!(divergence_factor > 1.0)) throw ConfigError("divergence_factor must exceed 1");
            if (method == BaselineMethod::Npo && !(npo_beta > 0.0)) throw ConfigError("npo_beta must be positive");
            break;
        case BaselineMethod::HardPrune:
            if (!(prune_fraction >= 0.0 && prune_fraction <= 1.0)) throw ConfigError("prune_fraction must lie in [0,1]");
            if (prune_tau && !(*prune_tau >= 0.0 && *prune_tau <= 1.0)) throw ConfigError("prune_tau must lie in [0,1]");
            break;
        case BaselineMethod::Retrain: break;
    }
}

nlohmann::json BaselineConfig::to_json() const {
    nlohmann::ordered_json j;
    j["method"] = to_string(method);
    j["lr"] = lr;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["npo_beta"] = npo_beta;
    j["prune_fraction"] = prune_fraction;
    j["prune_tau"] = prune_tau ? nlohmann::json(*prune_tau) : nlohmann::json(nullptr);
    j["divergence_factor"] = divergence_factor;
    j["seed"] = seed;
    return j;
}

AdapterModel retrain_on_remain(const ModelShape& shape, std::uint64_t init_seed,
                               std::span<const std::int32_t> item_groups, std::span<const Sample> retain_samples,
                               const TemplateSpec& tmpl, const TrainHyper& hyper) {
    if (retain_samples.empty()) throw DataError("retrain_on_remain: empty retain set");
    return train_adapter(init_model(shape, init_seed, item_groups), retain_samples, tmpl, hyper).model;
}

GradientRunResult gradient_ascent(AdapterModel model, std::span<const Sample> forget_samples, const TemplateSpec& tmpl,
                                  const BaselineConfig& config) {
    config.validate();
    GradientRunResult res;
    if (config.epochs == 0 || forget_samples.empty()) {
        res.model = std::move(model);
        return res;
    }
    const auto eval_batches = make_batches(forget_samples, tmpl, config.batch_size);
    const double initial = mean_cross_entropy(model, eval_batches);
    res.losses.push_back(initial);
    const std::uint64_t seed = derive_seed(config.seed, "ga");

    for (std::size_t epoch = 0; epoch < config.epochs && !res.diverged; ++epoch) {
        for (const auto& batch : shuffled_batches(forget_samples, tmpl, config.batch_size, derive_seed(seed, epoch))) {
            auto ce = cross_entropy_loss(batch);
            auto step = backward(model, batch, [&ce](std::size_t row, std::span<const float> logits, std::span<float> d) {
                const double l = ce(row, logits, d);
                for (auto& v : d) v = -v;
                return l;
            });
            sgd_step(model, step.grads, config.lr);
            ++res.steps;
            const double batch_loss = step.loss / static_cast<double>(batch.batch);
            if (!std::isfinite(batch_loss) || batch_loss > config.divergence_factor * initial) {
                res.diverged = true;
                res.diagnostics.push_back("stopped after step " + std::to_string(res.steps) + ": batch loss " +
                                          std::to_string(batch_loss) + " exceeds " +
                                          std::to_string(config.divergence_factor) + "x initial " +
                                          std::to_string(initial));
                break;
            }
        }
        res.losses.push_back(mean_cross_entropy(model, eval_batches));
    }
    res.model = std::move(model);
    return res;
}

double npo_sample_loss(double logp, double logp_ref, double beta) {
    const double x = std::clamp(beta * (logp - logp_ref), -kMaxExponent, kMaxExponent);
    return 2.0 / beta * log1p_exp(x);
}

double npo_loss(const AdapterModel& model, const AdapterModel& reference, std::span<const TokenBatch> batches,
                double beta) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& batch : batches) {
        const auto lp = target_logprobs(model, batch);
        const auto ref = target_logprobs(reference, batch);
        for (std::size_t b = 0; b < lp.size(); ++b) total += npo_sample_loss(lp[b], ref[b], beta);
        n += lp.size();
    }
    if (n == 0) throw DataError("npo_loss: no samples");
    return total / static_cast<double>(n);
}

GradientRunResult npo_unlearn(AdapterModel model, std::span<const Sample> forget_samples, const TemplateSpec& tmpl,
                              const BaselineConfig& config) {
    config.validate();
    GradientRunResult res;
    if (config.epochs == 0 || forget_samples.empty()) {
        res.model = std::move(model);
        return res;
    }
    const AdapterModel reference = model;
    const auto eval_batches = make_batches(forget_samples, tmpl, config.batch_size);
    const double initial = npo_loss(model, reference, eval_batches, config.npo_beta);
    res.losses.push_back(initial);
    const std::uint64_t seed = derive_seed(config.seed, "npo");
    const double beta = config.npo_beta;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& batch : shuffled_batches(forget_samples, tmpl, config.batch_size, derive_seed(seed, epoch))) {
            const auto ref = target_logprobs(reference, batch);
            const double scale = 1.0 / static_cast<double>(batch.batch);
            auto step = backward(model, batch, [&](std::size_t row, std::span<const float> logits, std::span<float> d) {
                const Vec logp = log_softmax(logits);
                const auto y = static_cast<std::size_t>(batch.target[row]);
                double x = beta * (logp[y] - ref[row]);
                if (!std::isfinite(x) || std::fabs(x) > kMaxExponent) {
                    res.diagnostics.push_back("clamped log-ratio " + std::to_string(x) + " on row " + std::to_string(row));
                    x = std::isfinite(x) ? std::clamp(x, -kMaxExponent, kMaxExponent) : kMaxExponent;
                }
                // dL/dlogp = 2 * sigmoid(x); dlogp/dlogits = onehot - p.
                const double g = 2.0 * sigmoid(x) * scale;
                for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(-g * std::exp(logp[i]));
                d[y] += static_cast<float>(g);
                return 2.0 / beta * log1p_exp(x);
            });
            sgd_step(model, step.grads, config.lr);
            ++res.steps;
        }
        res.losses.push_back(npo_loss(model, reference, eval_batches, beta));
    }
    res.model = std::move(model);
    return res;
}

AdapterModel hard_prune(AdapterModel model, const RiskReport& report, double fraction, std::optional<double> tau) {
    check_dim(report.layers.size(), model.layers.size(), "risk report layer count");
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("prune fraction must lie in [0,1]");
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& risk = report.layers[l].risk;
        auto& a = model.layers[l].lora_a;
        check_dim(risk.size(), a.cols, "risk width");
        std::vector<std::size_t> chosen;
        if (tau) {
            chosen = select_intervention(risk, *tau);
        } else {
            std::vector<std::size_t> order(risk.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return risk[x] > risk[y]; });
            const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(risk.size()) - 1e-9));
            chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(k, order.size())));
        }
        Vec alpha(risk.size(), 1.0f);
        for (auto j : chosen) alpha[j] = 0.0f;
        if (!chosen.empty()) apply_column_scaling(a, alpha);
    }
    return model;
}

}  // namespace ucan
