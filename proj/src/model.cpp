#include "ucan/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "ucan/errors.hpp"
#include "ucan/rng.hpp"

namespace ucan {

namespace {

std::atomic<std::uint64_t> g_gradient_ops{0};

// Non-zero embedding dims per token, on top of the shared group block.
constexpr std::size_t kActiveEmbeddingDims = 4;
constexpr std::size_t kGroupDims = 2;
// The output projection is frozen, so it needs enough gain for the adapters
// to move logits far from uniform.
constexpr double kOutputScale = 3.0;

float activate(Activation a, float z) {
    return a == Activation::Tanh ? std::tanh(z) : std::max(0.0f, z);
}

// Derivative expressed through the activation output.
float activate_grad(Activation a, float h) {
    return a == Activation::Tanh ? 1.0f - h * h : (h > 0.0f ? 1.0f : 0.0f);
}

void fill_uniform(Matrix& m, Rng& rng, double bound) {
    for (auto& v : m.data) v = static_cast<float>(rng.uniform(-bound, bound));
}

void check_tokens(const AdapterModel& model, const TokenBatch& batch) {
    const auto vocab = static_cast<std::int32_t>(model.shape.vocab());
    if (batch.tokens.size() != batch.batch * batch.seq_len || batch.mask.size() != batch.tokens.size()) {
        throw DimensionError("token batch buffers do not match batch x seq_len");
    }
    for (auto tok : batch.tokens) {
        if (tok < 0 || tok >= vocab) {
            throw DataError("token id " + std::to_string(tok) + " outside vocabulary of " + std::to_string(vocab));
        }
    }
}

// Activations of the token-wise adapter stack, computed once per distinct
// token: acts(tok)[l] is the input of layer l, acts(tok)[n_layers] the output.
class TokenTable {
public:
    explicit TokenTable(const AdapterModel& model) : model_(model), slot_(model.shape.vocab(), -1) {}

    const std::vector<Vec>& acts(std::int32_t token) {
        auto& s = slot_[static_cast<std::size_t>(token)];
        if (s < 0) {
            s = static_cast<std::int32_t>(tokens_.size());
            tokens_.push_back(token);
            acts_.push_back(compute(token));
        }
        return acts_[static_cast<std::size_t>(s)];
    }

    [[nodiscard]] std::int32_t slot(std::int32_t token) const { return slot_[static_cast<std::size_t>(token)]; }
    [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
    [[nodiscard]] std::int32_t token_at(std::size_t i) const { return tokens_[i]; }
    [[nodiscard]] const std::vector<Vec>& acts_at(std::size_t i) const { return acts_[i]; }

private:
    std::vector<Vec> compute(std::int32_t token) const { return token_activations(model_, token); }

    const AdapterModel& model_;
    std::vector<std::int32_t> slot_;
    std::vector<std::int32_t> tokens_;
    std::vector<std::vector<Vec>> acts_;
};

}  // namespace

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(std::string_view s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ConfigError("unknown activation: " + std::string(s));
}

Matrix AdapterLayer::delta() const { return matmul(lora_b, lora_a); }

Matrix AdapterLayer::merged() const {
    Matrix m = delta();
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] += base.data[i];
    return m;
}

Vec adapter_forward(const AdapterLayer& layer, std::span<const float> x) {
    check_dim(x.size(), layer.d_in(), "adapter input");
    Vec out(layer.d_out());
    matvec(layer.base, x, out);
    Vec ax(layer.rank());
    matvec(layer.lora_a, x, ax);
    for (std::size_t o = 0; o < layer.d_out(); ++o) {
        const auto b = layer.lora_b.row(o);
        double acc = 0.0;
        for (std::size_t k = 0; k < ax.size(); ++k) acc += static_cast<double>(b[k]) * ax[k];
        out[o] = static_cast<float>(out[o] + acc);
    }
    return out;
}

std::vector<Vec> token_activations(const AdapterModel& model, std::int32_t token) {
    if (token < 0 || static_cast<std::size_t>(token) >= model.shape.vocab()) {
        throw DimensionError("token id " + std::to_string(token) + " outside the vocabulary");
    }
    std::vector<Vec> per_layer(model.layers.size() + 1);
    const auto emb = model.embedding.row(static_cast<std::size_t>(token));
    per_layer[0].assign(emb.begin(), emb.end());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        Vec z = adapter_forward(model.layers[l], per_layer[l]);
        for (auto& v : z) v = activate(model.shape.activation, v);
        per_layer[l + 1] = std::move(z);
    }
    return per_layer;
}

AdapterModel init_model(const ModelShape& shape, std::uint64_t seed, std::span<const std::int32_t> item_groups) {
    if (shape.n_items <= 0 || shape.n_layers == 0 || shape.rank == 0 || shape.embed_dim == 0 ||
        shape.hidden_dim == 0) {
        throw ConfigError("model shape has a zero dimension");
    }
    if (shape.rank > std::min(shape.embed_dim, shape.hidden_dim)) throw ConfigError("adapter rank exceeds layer width");
    if (!item_groups.empty()) check_dim(item_groups.size(), static_cast<std::size_t>(shape.n_items), "item groups");

    AdapterModel m;
    m.shape = shape;

    std::int32_t n_groups = 0;
    for (auto g : item_groups) {
        if (g < 0) throw ConfigError("item group ids must be non-negative");
        n_groups = std::max(n_groups, g + 1);
    }
    const std::size_t group_width =
        n_groups > 0 ? std::min(kGroupDims, shape.embed_dim / (2 * static_cast<std::size_t>(n_groups))) : 0;
    const std::size_t shared = group_width * static_cast<std::size_t>(n_groups);

    Rng emb_rng(derive_seed(seed, "init.embedding"));
    m.embedding = Matrix(shape.vocab(), shape.embed_dim);
    const std::size_t active = std::min(kActiveEmbeddingDims, shape.embed_dim - shared);
    std::vector<std::size_t> dims(shape.embed_dim - shared);
    for (std::size_t tok = 0; tok < shape.vocab(); ++tok) {
        const auto item = static_cast<std::int64_t>(tok) - shape.n_reserved;
        if (group_width > 0 && item >= 0) {
            const auto g = static_cast<std::size_t>(item_groups[static_cast<std::size_t>(item)]);
            for (std::size_t k = 0; k < group_width; ++k) {
                m.embedding(tok, g * group_width + k) = static_cast<float>(emb_rng.uniform(0.5, 1.5));
            }
        }
        std::iota(dims.begin(), dims.end(), shared);
        emb_rng.shuffle(dims);
        for (std::size_t k = 0; k < active; ++k) m.embedding(tok, dims[k]) = static_cast<float>(emb_rng.uniform(0.5, 1.5));
    }

    Rng rng(derive_seed(seed, "init.layers"));
    for (std::size_t l = 0; l < shape.n_layers; ++l) {
        const std::size_t d_in = l == 0 ? shape.embed_dim : shape.hidden_dim;
        AdapterLayer layer;
        layer.base = Matrix(shape.hidden_dim, d_in);
        fill_uniform(layer.base, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
        layer.lora_a = Matrix(shape.rank, d_in);
        fill_uniform(layer.lora_a, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
        layer.lora_b = Matrix(shape.hidden_dim, shape.rank);
        m.layers.push_back(std::move(layer));
    }
    m.output = Matrix(static_cast<std::size_t>(shape.n_items), shape.hidden_dim);
    fill_uniform(m.output, rng, kOutputScale / std::sqrt(static_cast<double>(shape.hidden_dim)));
    return m;
}

ForwardResult forward(const AdapterModel& model, const TokenBatch& batch, bool capture) {
    check_tokens(model, batch);
    const std::size_t n_layers = model.layers.size();
    ForwardResult res;
    res.logits = Matrix(batch.batch, static_cast<std::size_t>(model.shape.n_items));
    if (capture) {
        ActivationCapture cap;
        cap.batch = batch.batch;
        cap.seq_len = batch.seq_len;
        for (const auto& layer : model.layers) cap.inputs.emplace_back(batch.batch * batch.seq_len, layer.d_in());
        res.capture = std::move(cap);
    }

    TokenTable table(model);
    Vec pooled(model.shape.hidden_dim);
    for (std::size_t b = 0; b < batch.batch; ++b) {
        std::fill(pooled.begin(), pooled.end(), 0.0f);
        std::size_t count = 0;
        for (std::size_t t = 0; t < batch.seq_len; ++t) {
            const bool on = batch.mask_at(b, t) != 0;
            if (!on && !capture) continue;
            const auto& acts = table.acts(batch.token(b, t));
            if (capture) {
                for (std::size_t l = 0; l < n_layers; ++l) {
                    std::copy(acts[l].begin(), acts[l].end(), res.capture->inputs[l].row(b * batch.seq_len + t).begin());
                }
            }
            if (on) {
                ++count;
                const auto& h = acts[n_layers];
                for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += h[k];
            }
        }
        if (count == 0) throw ContractError("token batch row " + std::to_string(b) + " has an all-zero mask");
        for (auto& v : pooled) v /= static_cast<float>(count);
        matvec(model.output, pooled, res.logits.row(b));
    }
    return res;
}

std::uint64_t gradient_op_count() noexcept { return g_gradient_ops.load(); }

Vec softmax(std::span<const float> logits) {
    Vec p(logits.size());
    const float mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = static_cast<float>(std::exp(static_cast<double>(logits[i]) - mx) / sum);
    }
    return p;
}

Vec log_softmax(std::span<const float> logits) {
    Vec out(logits.size());
    const float mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(logits[i] - lse);
    return out;
}

RowLossFn cross_entropy_loss(const TokenBatch& batch) {
    const double scale = 1.0 / static_cast<double>(std::max<std::size_t>(1, batch.batch));
    return [&batch, scale](std::size_t row, std::span<const float> logits, std::span<float> dlogits) {
        const Vec p = softmax(logits);
        const auto y = static_cast<std::size_t>(batch.target[row]);
        for (std::size_t i = 0; i < p.size(); ++i) dlogits[i] = static_cast<float>(p[i] * scale);
        dlogits[y] -= static_cast<float>(scale);
        return -log_softmax(logits)[y];
    };
}

BackwardResult backward(const AdapterModel& model, const TokenBatch& batch, const RowLossFn& loss,
                        bool embedding_grads) {
    check_tokens(model, batch);
    g_gradient_ops.fetch_add(1);
    const std::size_t n_layers = model.layers.size();
    const auto act = model.shape.activation;

    BackwardResult res;
    for (const auto& layer : model.layers) {
        res.grads.lora_a.emplace_back(layer.lora_a.rows, layer.lora_a.cols);
        res.grads.lora_b.emplace_back(layer.lora_b.rows, layer.lora_b.cols);
    }
    if (embedding_grads) res.grads.embedding = Matrix(model.embedding.rows, model.embedding.cols);

    // The stack is token-wise and backprop is linear in the upstream gradient,
    // so gradients of the final hidden state are summed per distinct token first.
    TokenTable table(model);
    std::vector<Vec> dh_token;
    Vec pooled(model.shape.hidden_dim);
    Vec logits(static_cast<std::size_t>(model.shape.n_items));
    Vec dlogits(logits.size());
    Vec dpooled(model.shape.hidden_dim);

    for (std::size_t b = 0; b < batch.batch; ++b) {
        std::fill(pooled.begin(), pooled.end(), 0.0f);
        std::size_t count = 0;
        for (std::size_t t = 0; t < batch.seq_len; ++t) {
            if (batch.mask_at(b, t) == 0) continue;
            ++count;
            const auto& h = table.acts(batch.token(b, t))[n_layers];
            for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += h[k];
        }
        if (count == 0) throw ContractError("token batch row " + std::to_string(b) + " has an all-zero mask");
        const float inv_count = 1.0f / static_cast<float>(count);
        for (auto& v : pooled) v *= inv_count;
        matvec(model.output, pooled, logits);

        std::fill(dlogits.begin(), dlogits.end(), 0.0f);
        res.loss += loss(b, logits, dlogits);

        std::fill(dpooled.begin(), dpooled.end(), 0.0f);
        matvec_t_add(model.output, dlogits, dpooled);
        for (auto& v : dpooled) v *= inv_count;

        dh_token.resize(table.size(), Vec(model.shape.hidden_dim, 0.0f));
        for (std::size_t t = 0; t < batch.seq_len; ++t) {
            if (batch.mask_at(b, t) == 0) continue;
            auto& dh = dh_token[static_cast<std::size_t>(table.slot(batch.token(b, t)))];
            for (std::size_t k = 0; k < dh.size(); ++k) dh[k] += dpooled[k];
        }
    }

    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& acts = table.acts_at(i);
        Vec dh = dh_token[i];
        for (std::size_t l = n_layers; l-- > 0;) {
            const auto& layer = model.layers[l];
            const Vec& in = acts[l];
            const Vec& out = acts[l + 1];
            Vec dz(dh.size());
            for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = dh[k] * activate_grad(act, out[k]);

            Vec ax(layer.rank());
            matvec(layer.lora_a, in, ax);
            Vec bdz(layer.rank(), 0.0f);
            matvec_t_add(layer.lora_b, dz, bdz);

            auto& gb = res.grads.lora_b[l];
            for (std::size_t o = 0; o < gb.rows; ++o) {
                if (dz[o] == 0.0f) continue;
                for (std::size_t k = 0; k < gb.cols; ++k) gb(o, k) += dz[o] * ax[k];
            }
            auto& ga = res.grads.lora_a[l];
            for (std::size_t k = 0; k < ga.rows; ++k) {
                for (std::size_t j = 0; j < ga.cols; ++j) ga(k, j) += bdz[k] * in[j];
            }
            if (l == 0 && !embedding_grads) break;

            Vec din(in.size(), 0.0f);
            matvec_t_add(layer.base, dz, din);
            matvec_t_add(layer.lora_a, bdz, din);
            dh = std::move(din);
        }
        if (embedding_grads) {
            auto row = res.grads.embedding.row(static_cast<std::size_t>(table.token_at(i)));
            for (std::size_t k = 0; k < row.size(); ++k) row[k] += dh[k];
        }
    }
    return res;
}

void sgd_step(AdapterModel& model, const Gradients& grads, double lr) {
    const auto f = static_cast<float>(lr);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& a = model.layers[l].lora_a.data;
        auto& b = model.layers[l].lora_b.data;
        for (std::size_t i = 0; i < a.size(); ++i) a[i] -= f * grads.lora_a[l].data[i];
        for (std::size_t i = 0; i < b.size(); ++i) b[i] -= f * grads.lora_b[l].data[i];
    }
    if (!grads.embedding.empty()) {
        for (std::size_t i = 0; i < model.embedding.data.size(); ++i) model.embedding.data[i] -= f * grads.embedding.data[i];
    }
}

TrainResult train_adapter(AdapterModel model, std::span<const Sample> samples, const TemplateSpec& tmpl,
                          const TrainHyper& hyper) {
    if (hyper.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(hyper.lr > 0.0)) throw ConfigError("learning rate must be positive");
    TrainResult res;
    if (hyper.epochs > 0 && samples.empty()) throw DataError("no training samples");

    std::vector<std::size_t> order(samples.size());
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(derive_seed(hyper.seed, "train"), epoch));
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t i = 0; i < order.size(); i += hyper.batch_size) {
            std::vector<Sample> chunk;
            for (std::size_t j = i; j < std::min(order.size(), i + hyper.batch_size); ++j) chunk.push_back(samples[order[j]]);
            const TokenBatch batch = templatize(chunk, tmpl);
            auto step = backward(model, batch, cross_entropy_loss(batch), hyper.train_embeddings);
            if (!std::isfinite(step.loss)) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(i / hyper.batch_size) + " (lr " + std::to_string(hyper.lr) + ")");
            }
            total += step.loss;
            sgd_step(model, step.grads, hyper.lr);
        }
        res.epoch_losses.push_back(total / static_cast<double>(samples.size()));
    }
    res.model = std::move(model);
    return res;
}

double mean_cross_entropy(const AdapterModel& model, std::span<const TokenBatch> batches) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& batch : batches) {
        const auto fr = forward(model, batch);
        for (std::size_t b = 0; b < batch.batch; ++b) {
            total -= log_softmax(fr.logits.row(b))[static_cast<std::size_t>(batch.target[b])];
            ++n;
        }
    }
    if (n == 0) throw DataError("mean_cross_entropy: no samples");
    return total / static_cast<double>(n);
}

nlohmann::json shape_to_json(const ModelShape& s) {
    return {{"n_reserved", s.n_reserved}, {"n_items", s.n_items},     {"embed_dim", s.embed_dim},
            {"hidden_dim", s.hidden_dim}, {"n_layers", s.n_layers},   {"rank", s.rank},
            {"activation", to_string(s.activation)}};
}

ModelShape shape_from_json(const nlohmann::json& j) {
    try {
        ModelShape s;
        s.n_reserved = j.at("n_reserved").get<std::int32_t>();
        s.n_items = j.at("n_items").get<std::int32_t>();
        s.embed_dim = j.at("embed_dim").get<std::size_t>();
        s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        s.n_layers = j.at("n_layers").get<std::size_t>();
        s.rank = j.at("rank").get<std::size_t>();
        s.activation = activation_from_string(j.at("activation").get<std::string>());
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad model shape metadata: ") + e.what());
    }
}

TensorFile to_tensor_file(const AdapterModel& model, const nlohmann::json& meta) {
    TensorFile tf;
    tf.meta = meta;
    tf.meta["model"] = shape_to_json(model.shape);
    tf.add("embedding", model.embedding);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto p = "layer." + std::to_string(l) + ".";
        tf.add(p + "base", model.layers[l].base);
        tf.add(p + "lora_b", model.layers[l].lora_b);
        tf.add(p + "lora_a", model.layers[l].lora_a);
    }
    tf.add("output", model.output);
    return tf;
}

Checkpoint from_tensor_file(const TensorFile& tf) {
    if (!tf.meta.contains("model")) throw FormatError("checkpoint lacks model metadata");
    Checkpoint ck;
    ck.meta = tf.meta;
    ck.model.shape = shape_from_json(tf.meta.at("model"));
    const auto& s = ck.model.shape;
    auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const std::string& name) {
        if (m.rows != r || m.cols != c) throw FormatError("tensor " + name + " has unexpected shape");
    };
    ck.model.embedding = tf.matrix("embedding");
    expect(ck.model.embedding, s.vocab(), s.embed_dim, "embedding");
    for (std::size_t l = 0; l < s.n_layers; ++l) {
        const auto p = "layer." + std::to_string(l) + ".";
        const std::size_t d_in = l == 0 ? s.embed_dim : s.hidden_dim;
        AdapterLayer layer{tf.matrix(p + "base"), tf.matrix(p + "lora_b"), tf.matrix(p + "lora_a")};
        expect(layer.base, s.hidden_dim, d_in, p + "base");
        expect(layer.lora_b, s.hidden_dim, s.rank, p + "lora_b");
        expect(layer.lora_a, s.rank, d_in, p + "lora_a");
        ck.model.layers.push_back(std::move(layer));
    }
    ck.model.output = tf.matrix("output");
    expect(ck.model.output, static_cast<std::size_t>(s.n_items), s.hidden_dim, "output");
    return ck;
}

void save_checkpoint(const AdapterModel& model, const std::filesystem::path& path, const nlohmann::json& meta) {
    to_tensor_file(model, meta).save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return from_tensor_file(TensorFile::load(path)); }

}  // namespace ucan
