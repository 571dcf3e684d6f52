#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ucan/data.hpp"
#include "ucan/tensor.hpp"
#include "ucan/tensor_file.hpp"

namespace ucan {

enum class Activation { Tanh, Relu };

[[nodiscard]] std::string to_string(Activation a);
[[nodiscard]] Activation activation_from_string(std::string_view s);

struct ModelShape {
    std::int32_t n_reserved = 4;
    std::int32_t n_items = 0;
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t n_layers = 2;
    std::size_t rank = 4;
    Activation activation = Activation::Relu;

    [[nodiscard]] std::size_t vocab() const noexcept { return static_cast<std::size_t>(n_reserved + n_items); }

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Frozen base weight plus trainable low-rank delta: o = W0 x + B (A x).
struct AdapterLayer {
    Matrix base;    // d_out x d_in, never modified after init
    Matrix lora_b;  // d_out x r
    Matrix lora_a;  // r x d_in

    [[nodiscard]] std::size_t d_in() const noexcept { return base.cols; }
    [[nodiscard]] std::size_t d_out() const noexcept { return base.rows; }
    [[nodiscard]] std::size_t rank() const noexcept { return lora_a.rows; }
    [[nodiscard]] std::size_t trainable_params() const noexcept { return lora_b.size() + lora_a.size(); }

    // Dense W0 + B A.
    [[nodiscard]] Matrix merged() const;
    // B A only, the adapter's effective delta.
    [[nodiscard]] Matrix delta() const;

    friend bool operator==(const AdapterLayer&, const AdapterLayer&) = default;
};

[[nodiscard]] Vec adapter_forward(const AdapterLayer& layer, std::span<const float> x);

// Token embedding -> token-wise stack of adapter layers with activation ->
// mean-pool over mask=1 positions -> frozen output projection onto items.
struct AdapterModel {
    ModelShape shape;
    Matrix embedding;  // vocab x embed_dim
    std::vector<AdapterLayer> layers;
    Matrix output;  // n_items x hidden_dim

    friend bool operator==(const AdapterModel&, const AdapterModel&) = default;
};

// Seeded initialization standing in for a pretrained backbone. Embeddings are
// sparse and non-negative: a few random item-specific dims per token, plus,
// when `item_groups` (one group id per item) is given, a small block of dims
// shared by all items of the same group. Base and W_A are uniform
// +-1/sqrt(d_in); W_B = 0.
[[nodiscard]] AdapterModel init_model(const ModelShape& shape, std::uint64_t seed,
                                      std::span<const std::int32_t> item_groups = {});

// The stack is token-wise, so a layer's input depends on the token alone.
// Returns the input of every adapted layer followed by the top hidden state.
[[nodiscard]] std::vector<Vec> token_activations(const AdapterModel& model, std::int32_t token);

// Per adapted layer, the layer input at every token position.
struct ActivationCapture {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<Matrix> inputs;  // per layer: (batch * seq_len) x d_in, row = b * seq_len + t

    [[nodiscard]] std::span<const float> at(std::size_t layer, std::size_t b, std::size_t t) const {
        return inputs[layer].row(b * seq_len + t);
    }
};

struct ForwardResult {
    Matrix logits;  // batch x n_items
    std::optional<ActivationCapture> capture;
};

[[nodiscard]] ForwardResult forward(const AdapterModel& model, const TokenBatch& batch, bool capture = false);

// Process-wide count of backward passes; the forward-only pipelines must leave it untouched.
[[nodiscard]] std::uint64_t gradient_op_count() noexcept;

struct Gradients {
    std::vector<Matrix> lora_a;
    std::vector<Matrix> lora_b;
    Matrix embedding;  // empty unless embeddings are trainable
};

// Fills dlogits for one row given its logits and returns that row's loss.
using RowLossFn = std::function<double(std::size_t row, std::span<const float> logits, std::span<float> dlogits)>;

struct BackwardResult {
    double loss = 0.0;  // sum of row losses
    Gradients grads;
};

// One backward pass over the batch; increments gradient_op_count().
[[nodiscard]] BackwardResult backward(const AdapterModel& model, const TokenBatch& batch, const RowLossFn& loss,
                                      bool embedding_grads = false);

// Mean next-item cross-entropy loss hook.
[[nodiscard]] RowLossFn cross_entropy_loss(const TokenBatch& batch);

void sgd_step(AdapterModel& model, const Gradients& grads, double lr);

[[nodiscard]] Vec softmax(std::span<const float> logits);
[[nodiscard]] Vec log_softmax(std::span<const float> logits);

struct TrainHyper {
    double lr = 0.1;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    bool train_embeddings = false;
};

struct TrainResult {
    AdapterModel model;
    std::vector<double> epoch_losses;  // mean cross-entropy seen during each epoch
};

// SGD on the adapter matrices (and embeddings when enabled). Throws NumericError on NaN loss.
[[nodiscard]] TrainResult train_adapter(AdapterModel model, std::span<const Sample> samples, const TemplateSpec& tmpl,
                                        const TrainHyper& hyper);

[[nodiscard]] double mean_cross_entropy(const AdapterModel& model, std::span<const TokenBatch> batches);

[[nodiscard]] nlohmann::json shape_to_json(const ModelShape& shape);
[[nodiscard]] ModelShape shape_from_json(const nlohmann::json& j);

[[nodiscard]] TensorFile to_tensor_file(const AdapterModel& model, const nlohmann::json& meta = nlohmann::json::object());

struct Checkpoint {
    AdapterModel model;
    nlohmann::json meta;  // includes "model" (shape) plus caller metadata
};

[[nodiscard]] Checkpoint from_tensor_file(const TensorFile& tf);

void save_checkpoint(const AdapterModel& model, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ucan
