#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ucan/model.hpp"
#include "ucan/tensor.hpp"
#include "ucan/tensor_file.hpp"

namespace ucan {

inline constexpr double kEps = 1e-8;

enum class Side { Forget, Retain };

// Per-layer streaming statistics in the layer-input space. Sums are kept in
// double so that any batching or shard merge gives the same result up to
// rounding; means are read out on demand.
struct LayerStats {
    std::vector<double> forget_sum;
    std::vector<double> retain_sum;
    std::vector<double> sq_sum;  // S: accumulated squared activations over the retain side
    std::uint64_t forget_count = 0;
    std::uint64_t retain_count = 0;

    explicit LayerStats(std::size_t d_in = 0) : forget_sum(d_in), retain_sum(d_in), sq_sum(d_in) {}

    [[nodiscard]] std::size_t dim() const noexcept { return sq_sum.size(); }
    [[nodiscard]] Vec forget_mean() const;
    [[nodiscard]] Vec retain_mean() const;
    [[nodiscard]] Vec squared_sum() const;
};

struct ActivationSummary {
    std::vector<LayerStats> layers;

    ActivationSummary() = default;
    explicit ActivationSummary(std::span<const std::size_t> dims);
    [[nodiscard]] static ActivationSummary for_model(const AdapterModel& model);

    // Monoid merge of an independently accumulated shard.
    void merge(const ActivationSummary& other);

    // Named-tensor dump: v_f.<l>, v_r.<l>, S.<l>.
    [[nodiscard]] TensorFile to_tensor_file() const;
};

// Per-sample masked mean (sum_t M_t H_t) / (sum_t M_t) for every layer.
// Result[l] is batch x d_in. Throws ContractError on an all-zero mask row.
[[nodiscard]] std::vector<Matrix> masked_mean(const ActivationCapture& capture, std::span<const std::uint8_t> mask);

// Adds per-sample vectors (rows) of one layer to the running mean of `side`.
void accumulate_side(ActivationSummary& summary, std::size_t layer, const Matrix& sample_vectors, Side side);

// S += sum over rows of x (.) x for one layer.
void accumulate_sq(ActivationSummary& summary, std::size_t layer, const Matrix& vectors);

// Accumulates one captured batch: masked means into `side`, and on the retain
// side the squared activations of every mask=1 token into S.
void accumulate_batch(ActivationSummary& summary, const ActivationCapture& capture, std::span<const std::uint8_t> mask,
                      Side side);

// Elementwise sqrt(S + eps).
[[nodiscard]] Vec finalize_norm(std::span<const double> sq_sum, double eps = kEps);

// Forward-only pass over both sides filling v_f, v_r and S for every adapted
// layer. Equivalent to accumulate_batch over full captures, but each distinct
// token is pushed through the stack once. Either side may be empty, so shards
// can be collected separately and merged.
[[nodiscard]] ActivationSummary collect_summary(const AdapterModel& model, std::span<const TokenBatch> forget_batches,
                                                std::span<const TokenBatch> retain_batches);

}  // namespace ucan
