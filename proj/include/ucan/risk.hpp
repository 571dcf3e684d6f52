#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ucan/model.hpp"
#include "ucan/signals.hpp"
#include "ucan/tensor.hpp"

namespace ucan {

enum class Target { Adapter, Full };

struct Ablations {
    bool no_utility = false;   // "w/o F": importance term dropped
    bool no_contrast = false;  // "w/o C": gap replaced by normalized forget activations
    bool hard_mask = false;    // "w/o H": selected dims zeroed instead of decayed

    friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct UcanConfig {
    double gamma = 0.5;
    double lambda = 0.3;
    double tau_risk = 0.2;
    double alpha_max = 0.1;
    double beta = 2.0;
    double eps = kEps;
    Target target = Target::Adapter;
    bool quant_proxy = false;
    std::size_t quant_block = 64;
    Ablations ablations;

    // Throws ConfigError when a field is out of range.
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    // String tag of the active ablations, e.g. "none", "H", "F+C".
    [[nodiscard]] std::string ablation_tag() const;

    friend bool operator==(const UcanConfig&, const UcanConfig&) = default;
};

// Elementwise ReLU(v_f - gamma * v_r).
[[nodiscard]] Vec contrast_gap(std::span<const float> forget_mean, std::span<const float> retain_mean, double gamma);

// (v - min) / (max - min + eps).
[[nodiscard]] Vec minmax_norm(std::span<const float> v, double eps = kEps);

// r_imp[j] = (1/d_out) * ||W[:, j]||_1 * norms[j].
[[nodiscard]] Vec utility_importance(const Matrix& weight, std::span<const float> norms);

// Min-max renormalized ReLU(lambda * gap_norm - (1 - lambda) * imp_norm).
[[nodiscard]] Vec fuse_risk(std::span<const float> gap_norm, std::span<const float> imp_norm, double lambda,
                            double eps = kEps);

// Standard NormalFloat-4 quantile codebook on [-1, 1].
inline constexpr std::array<float, 16> kNf4Codebook = {
    -1.0f,
    -0.6961928009986877f,
    -0.5250730514526367f,
    -0.39491748809814453f,
    -0.28444138169288635f,
    -0.18477343022823334f,
    -0.09105003625154495f,
    0.0f,
    0.07958029955625534f,
    0.16093020141124725f,
    0.24611230194568634f,
    0.33791524171829224f,
    0.44070982933044434f,
    0.5626170039176941f,
    0.7229568362236023f,
    1.0f,
};

// Largest gap between adjacent codebook entries.
[[nodiscard]] float nf4_max_gap() noexcept;

struct QuantState {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t block_size = 64;
    std::vector<float> scales;        // per-block absmax
    std::vector<std::uint8_t> codes;  // one 4-bit index per element, stored unpacked
};

// Blockwise absmax quantization of the row-major flattened matrix; the final
// block may be partial. Throws DimensionError on an empty matrix.
[[nodiscard]] QuantState quantize(const Matrix& w, std::size_t block_size = 64);
[[nodiscard]] Matrix dequantize(const QuantState& q);

struct LayerRisk {
    Vec gap;       // r_gap
    Vec gap_norm;  // normalized gap fed to fusion
    Vec importance;
    Vec importance_norm;
    Vec risk;  // R_dim in [0, 1]
};

struct RiskReport {
    std::vector<LayerRisk> layers;

    // Named-tensor dump: R_dim.<l>, r_gap.<l>, r_imp.<l>, with the config echoed in meta.
    [[nodiscard]] TensorFile to_tensor_file(const UcanConfig& config) const;
};

// Weight whose columns are scored for utility: the adapter delta W_B W_A in
// adapter mode, the merged W0 + W_B W_A in full mode; passed through the
// quantization proxy when enabled.
[[nodiscard]] Matrix scoring_weight(const AdapterLayer& layer, const UcanConfig& config);

[[nodiscard]] LayerRisk score_layer(const AdapterLayer& layer, const LayerStats& stats, const UcanConfig& config);
[[nodiscard]] RiskReport score_layers(const AdapterModel& model, const ActivationSummary& summary,
                                      const UcanConfig& config);

}  // namespace ucan
