#include "ucan/signals.hpp"

#include <cmath>
#include <map>

#include "ucan/errors.hpp"

namespace ucan {

namespace {

Vec mean_of(const std::vector<double>& sum, std::uint64_t count) {
    if (count == 0) throw ContractError("activation summary side has no samples");
    Vec out(sum.size());
    for (std::size_t i = 0; i < sum.size(); ++i) out[i] = static_cast<float>(sum[i] / static_cast<double>(count));
    return out;
}

void check_layer(const ActivationSummary& s, std::size_t layer) {
    if (layer >= s.layers.size()) throw DimensionError("layer index out of range");
}

}  // namespace

Vec LayerStats::forget_mean() const { return mean_of(forget_sum, forget_count); }
Vec LayerStats::retain_mean() const { return mean_of(retain_sum, retain_count); }

Vec LayerStats::squared_sum() const {
    Vec out(sq_sum.size());
    for (std::size_t i = 0; i < sq_sum.size(); ++i) out[i] = static_cast<float>(sq_sum[i]);
    return out;
}

ActivationSummary::ActivationSummary(std::span<const std::size_t> dims) {
    for (auto d : dims) layers.emplace_back(d);
}

ActivationSummary ActivationSummary::for_model(const AdapterModel& model) {
    std::vector<std::size_t> dims;
    for (const auto& l : model.layers) dims.push_back(l.d_in());
    return ActivationSummary(dims);
}

void ActivationSummary::merge(const ActivationSummary& other) {
    check_dim(other.layers.size(), layers.size(), "summary layer count");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& a = layers[l];
        const auto& b = other.layers[l];
        check_dim(b.dim(), a.dim(), "summary layer width");
        for (std::size_t i = 0; i < a.dim(); ++i) {
            a.forget_sum[i] += b.forget_sum[i];
            a.retain_sum[i] += b.retain_sum[i];
            a.sq_sum[i] += b.sq_sum[i];
        }
        a.forget_count += b.forget_count;
        a.retain_count += b.retain_count;
    }
}

TensorFile ActivationSummary::to_tensor_file() const {
    TensorFile tf;
    tf.meta["kind"] = "activation-summary";
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto suffix = "." + std::to_string(l);
        tf.add("v_f" + suffix, layers[l].forget_mean());
        tf.add("v_r" + suffix, layers[l].retain_mean());
        tf.add("S" + suffix, layers[l].squared_sum());
        tf.meta["counts"].push_back({layers[l].forget_count, layers[l].retain_count});
    }
    return tf;
}

std::vector<Matrix> masked_mean(const ActivationCapture& capture, std::span<const std::uint8_t> mask) {
    check_dim(mask.size(), capture.batch * capture.seq_len, "mask size");
    std::vector<Matrix> out;
    for (const auto& acts : capture.inputs) {
        Matrix means(capture.batch, acts.cols);
        for (std::size_t b = 0; b < capture.batch; ++b) {
            std::vector<double> acc(acts.cols, 0.0);
            std::size_t n = 0;
            for (std::size_t t = 0; t < capture.seq_len; ++t) {
                if (mask[b * capture.seq_len + t] == 0) continue;
                ++n;
                const auto h = acts.row(b * capture.seq_len + t);
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += h[i];
            }
            if (n == 0) throw ContractError("masked_mean: row " + std::to_string(b) + " has an all-zero mask");
            for (std::size_t i = 0; i < acc.size(); ++i) means(b, i) = static_cast<float>(acc[i] / static_cast<double>(n));
        }
        out.push_back(std::move(means));
    }
    return out;
}

void accumulate_side(ActivationSummary& summary, std::size_t layer, const Matrix& sample_vectors, Side side) {
    check_layer(summary, layer);
    auto& st = summary.layers[layer];
    if (sample_vectors.rows == 0) return;
    check_dim(sample_vectors.cols, st.dim(), "sample vector width");
    auto& sum = side == Side::Forget ? st.forget_sum : st.retain_sum;
    for (std::size_t r = 0; r < sample_vectors.rows; ++r) {
        const auto v = sample_vectors.row(r);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
    }
    (side == Side::Forget ? st.forget_count : st.retain_count) += sample_vectors.rows;
}

void accumulate_sq(ActivationSummary& summary, std::size_t layer, const Matrix& vectors) {
    check_layer(summary, layer);
    auto& st = summary.layers[layer];
    if (vectors.rows == 0) return;
    check_dim(vectors.cols, st.dim(), "activation width");
    for (std::size_t r = 0; r < vectors.rows; ++r) {
        const auto v = vectors.row(r);
        for (std::size_t i = 0; i < st.dim(); ++i) st.sq_sum[i] += static_cast<double>(v[i]) * v[i];
    }
}

void accumulate_batch(ActivationSummary& summary, const ActivationCapture& capture, std::span<const std::uint8_t> mask,
                      Side side) {
    check_dim(capture.inputs.size(), summary.layers.size(), "captured layer count");
    const auto means = masked_mean(capture, mask);
    for (std::size_t l = 0; l < means.size(); ++l) accumulate_side(summary, l, means[l], side);
    if (side != Side::Retain) return;

    for (std::size_t l = 0; l < capture.inputs.size(); ++l) {
        const auto& acts = capture.inputs[l];
        auto& sq = summary.layers[l].sq_sum;
        for (std::size_t r = 0; r < acts.rows; ++r) {
            if (mask[r] == 0) continue;
            const auto v = acts.row(r);
            for (std::size_t i = 0; i < sq.size(); ++i) sq[i] += static_cast<double>(v[i]) * v[i];
        }
    }
}

Vec finalize_norm(std::span<const double> sq_sum, double eps) {
    Vec out(sq_sum.size());
    for (std::size_t i = 0; i < sq_sum.size(); ++i) out[i] = static_cast<float>(std::sqrt(sq_sum[i] + eps));
    return out;
}

namespace {

// Lazily computed layer inputs per token id, shared by every batch of one
// collect_summary call.
class TokenInputs {
public:
    explicit TokenInputs(const AdapterModel& model) : model_(model), acts_(model.shape.vocab()) {}

    const std::vector<Vec>& operator[](std::int32_t token) {
        auto& a = acts_[static_cast<std::size_t>(token)];
        if (a.empty()) a = token_activations(model_, token);
        return a;
    }

private:
    const AdapterModel& model_;
    std::vector<std::vector<Vec>> acts_;
};

// Same contribution as accumulate_batch on a full capture. Each sample adds
// its masked mean, i.e. weight 1/n to each of its n history tokens, so the
// batch reduces to a weighted sum over distinct tokens.
void accumulate_tokens(ActivationSummary& summary, TokenInputs& inputs, const TokenBatch& batch, Side side) {
    std::map<std::int32_t, std::pair<double, double>> weights;  // token -> (mean weight, occurrences)
    for (std::size_t b = 0; b < batch.batch; ++b) {
        std::size_t n = 0;
        for (std::size_t t = 0; t < batch.seq_len; ++t) n += batch.mask_at(b, t) != 0;
        if (n == 0) throw ContractError("token batch row " + std::to_string(b) + " has an all-zero mask");
        for (std::size_t t = 0; t < batch.seq_len; ++t) {
            if (batch.mask_at(b, t) == 0) continue;
            auto& w = weights[batch.token(b, t)];
            w.first += 1.0 / static_cast<double>(n);
            w.second += 1.0;
        }
    }
    for (std::size_t l = 0; l < summary.layers.size(); ++l) {
        auto& st = summary.layers[l];
        auto& sum = side == Side::Forget ? st.forget_sum : st.retain_sum;
        for (const auto& [token, w] : weights) {
            const auto& x = inputs[token][l];
            check_dim(x.size(), st.dim(), "layer input width");
            for (std::size_t i = 0; i < x.size(); ++i) {
                sum[i] += w.first * x[i];
                if (side == Side::Retain) st.sq_sum[i] += w.second * static_cast<double>(x[i]) * x[i];
            }
        }
        (side == Side::Forget ? st.forget_count : st.retain_count) += batch.batch;
    }
}

}  // namespace

ActivationSummary collect_summary(const AdapterModel& model, std::span<const TokenBatch> forget_batches,
                                  std::span<const TokenBatch> retain_batches) {
    auto summary = ActivationSummary::for_model(model);
    TokenInputs inputs(model);
    for (const auto& b : forget_batches) accumulate_tokens(summary, inputs, b, Side::Forget);
    for (const auto& b : retain_batches) accumulate_tokens(summary, inputs, b, Side::Retain);
    return summary;
}

}  // namespace ucan
