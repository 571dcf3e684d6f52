#include "ucan/risk.hpp"

#include <algorithm>
#include <cmath>

#include "ucan/errors.hpp"

namespace ucan {

void UcanConfig::validate() const {
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
    if (!(tau_risk >= 0.0 && tau_risk <= 1.0)) throw ConfigError("tau must lie in [0,1]");
    if (!(alpha_max > 0.0 && alpha_max <= 1.0)) throw ConfigError("alpha_max must lie in (0,1]");
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (!(eps >= 0.0)) throw ConfigError("eps must be non-negative");
    if (quant_block == 0) throw ConfigError("quant_block must be positive");
}

std::string UcanConfig::ablation_tag() const {
    std::string tag;
    auto add = [&tag](const char* t) { tag += tag.empty() ? t : std::string("+") + t; };
    if (ablations.no_utility) add("F");
    if (ablations.no_contrast) add("C");
    if (ablations.hard_mask) add("H");
    return tag.empty() ? "none" : tag;
}

nlohmann::json UcanConfig::to_json() const {
    nlohmann::ordered_json j;
    j["gamma"] = gamma;
    j["lambda"] = lambda;
    j["tau_risk"] = tau_risk;
    j["alpha_max"] = alpha_max;
    j["beta"] = beta;
    j["eps"] = eps;
    j["target"] = target == Target::Adapter ? "adapter" : "full";
    j["quant_proxy"] = quant_proxy;
    j["quant_block"] = quant_block;
    j["ablation"] = ablation_tag();
    return j;
}

Vec contrast_gap(std::span<const float> forget_mean, std::span<const float> retain_mean, double gamma) {
    check_dim(retain_mean.size(), forget_mean.size(), "contrast_gap");
    Vec out(forget_mean.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(std::max(0.0, static_cast<double>(forget_mean[i]) - gamma * retain_mean[i]));
    }
    return out;
}

Vec minmax_norm(std::span<const float> v, double eps) {
    if (v.empty()) throw DimensionError("minmax_norm of an empty vector");
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double min = *lo;
    const double denom = static_cast<double>(*hi) - min + eps;
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = denom > 0.0 ? static_cast<float>((v[i] - min) / denom) : 0.0f;
    return out;
}

Vec utility_importance(const Matrix& weight, std::span<const float> norms) {
    check_dim(norms.size(), weight.cols, "utility_importance norms");
    Vec out(weight.cols);
    for (std::size_t j = 0; j < weight.cols; ++j) {
        double l1 = 0.0;
        for (std::size_t i = 0; i < weight.rows; ++i) l1 += std::fabs(static_cast<double>(weight(i, j)));
        out[j] = static_cast<float>(l1 / static_cast<double>(weight.rows) * norms[j]);
    }
    return out;
}

Vec fuse_risk(std::span<const float> gap_norm, std::span<const float> imp_norm, double lambda, double eps) {
    check_dim(imp_norm.size(), gap_norm.size(), "fuse_risk");
    Vec pre(gap_norm.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
        pre[i] = static_cast<float>(std::max(0.0, lambda * gap_norm[i] - (1.0 - lambda) * imp_norm[i]));
    }
    return minmax_norm(pre, eps);
}

float nf4_max_gap() noexcept {
    float gap = 0.0f;
    for (std::size_t i = 1; i < kNf4Codebook.size(); ++i) gap = std::max(gap, kNf4Codebook[i] - kNf4Codebook[i - 1]);
    return gap;
}

QuantState quantize(const Matrix& w, std::size_t block_size) {
    if (w.empty()) throw DimensionError("cannot quantize an empty matrix");
    if (block_size == 0) throw ConfigError("quantization block size must be positive");
    QuantState q;
    q.rows = w.rows;
    q.cols = w.cols;
    q.block_size = block_size;
    q.codes.resize(w.size());
    for (std::size_t start = 0; start < w.size(); start += block_size) {
        const std::size_t end = std::min(w.size(), start + block_size);
        float absmax = 0.0f;
        for (std::size_t i = start; i < end; ++i) absmax = std::max(absmax, std::fabs(w.data[i]));
        q.scales.push_back(absmax);
        for (std::size_t i = start; i < end; ++i) {
            const float x = absmax > 0.0f ? w.data[i] / absmax : 0.0f;
            std::size_t best = 0;
            float best_err = std::fabs(x - kNf4Codebook[0]);
            for (std::size_t k = 1; k < kNf4Codebook.size(); ++k) {
                const float err = std::fabs(x - kNf4Codebook[k]);
                if (err < best_err) {
                    best = k;
                    best_err = err;
                }
            }
            q.codes[i] = static_cast<std::uint8_t>(best);
        }
    }
    return q;
}

Matrix dequantize(const QuantState& q) {
    Matrix w(q.rows, q.cols);
    for (std::size_t i = 0; i < w.size(); ++i) {
        w.data[i] = kNf4Codebook[q.codes[i]] * q.scales[i / q.block_size];
    }
    return w;
}

TensorFile RiskReport::to_tensor_file(const UcanConfig& config) const {
    TensorFile tf;
    tf.meta["kind"] = "risk-report";
    tf.meta["config"] = config.to_json();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto suffix = "." + std::to_string(l);
        tf.add("R_dim" + suffix, layers[l].risk);
        tf.add("r_gap" + suffix, layers[l].gap);
        tf.add("r_imp" + suffix, layers[l].importance);
    }
    return tf;
}

Matrix scoring_weight(const AdapterLayer& layer, const UcanConfig& config) {
    Matrix w = config.target == Target::Adapter ? layer.delta() : layer.merged();
    if (config.quant_proxy) w = dequantize(quantize(w, config.quant_block));
    return w;
}

LayerRisk score_layer(const AdapterLayer& layer, const LayerStats& stats, const UcanConfig& config) {
    check_dim(stats.dim(), layer.d_in(), "summary width");
    LayerRisk r;
    const Vec v_f = stats.forget_mean();
    const Vec v_r = stats.retain_mean();

    r.gap = contrast_gap(v_f, v_r, config.gamma);
    r.gap_norm = config.ablations.no_contrast ? minmax_norm(v_f, config.eps) : minmax_norm(r.gap, config.eps);

    const Vec norms = finalize_norm(stats.sq_sum, config.eps);
    r.importance = utility_importance(scoring_weight(layer, config), norms);
    r.importance_norm = config.ablations.no_utility ? Vec(r.importance.size(), 0.0f)
                                                    : minmax_norm(r.importance, config.eps);

    r.risk = fuse_risk(r.gap_norm, r.importance_norm, config.lambda, config.eps);
    return r;
}

RiskReport score_layers(const AdapterModel& model, const ActivationSummary& summary, const UcanConfig& config) {
    config.validate();
    check_dim(summary.layers.size(), model.layers.size(), "summary layer count");
    RiskReport report;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        report.layers.push_back(score_layer(model.layers[l], summary.layers[l], config));
    }
    return report;
}

}  // namespace ucan
