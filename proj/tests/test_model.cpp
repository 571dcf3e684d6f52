#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "ucan/errors.hpp"
#include "ucan/model.hpp"
#include "ucan/tensor_file.hpp"

using namespace ucan;

namespace {

// Mean cross-entropy of the batch from the double-precision reference forward.
double reference_loss(const AdapterModel& m, const TokenBatch& batch) {
    const auto logits = oracle::logits(m, batch);
    double total = 0.0;
    for (std::size_t b = 0; b < batch.batch; ++b) {
        const auto& z = logits[b];
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double s = 0.0;
        for (double v : z) s += std::exp(v - mx);
        total += mx + std::log(s) - z[static_cast<std::size_t>(batch.target[b])];
    }
    return total / static_cast<double>(batch.batch);
}

// Central difference in the weight actually stored (float), measured in double.
double numeric_grad(AdapterModel m, float& (*pick)(AdapterModel&), const TokenBatch& batch, float h) {
    float& w = pick(m);
    const float orig = w;
    w = orig + h;
    const double up = static_cast<double>(w);
    const double lp = reference_loss(m, batch);
    float& w2 = pick(m);
    w2 = orig - h;
    const double down = static_cast<double>(w2);
    const double lm = reference_loss(m, batch);
    return (lp - lm) / (up - down);
}

}  // namespace

TEST_CASE("forward agrees with the position-by-position reference") {
    for (auto act : {Activation::Relu, Activation::Tanh}) {
        const auto m = fixture::small_model(11, act);
        const auto batch = templatize(fixture::samples(1, 9, 0, 12), fixture::small_template());
        const auto got = forward(m, batch).logits;
        const auto want = oracle::logits(m, batch);
        for (std::size_t b = 0; b < batch.batch; ++b)
            for (std::size_t i = 0; i < got.cols; ++i) CHECK(got(b, i) == doctest::Approx(want[b][i]).epsilon(1e-5));
    }
}

TEST_CASE("capture is observational and records exact layer inputs") {
    const auto m = fixture::small_model(12);
    const auto batch = templatize(fixture::samples(2, 5, 0, 12), fixture::small_template());
    const auto plain = forward(m, batch);
    const auto captured = forward(m, batch, true);
    CHECK(plain.logits == captured.logits);
    REQUIRE(captured.capture);
    const auto& cap = *captured.capture;
    REQUIRE(cap.inputs.size() == 2);
    CHECK(cap.inputs[0].cols == 6);
    CHECK(cap.inputs[1].cols == 8);
    for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t t = 0; t < batch.seq_len; ++t) {
            const auto path = oracle::token_path(m, batch.token(b, t));
            for (std::size_t l = 0; l < 2; ++l) {
                const auto x = cap.at(l, b, t);
                for (std::size_t j = 0; j < x.size(); ++j) CHECK(x[j] == doctest::Approx(path[l][j]).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("single-token batch captures (1, 1, d_in) per layer") {
    const auto m = fixture::small_model(13);
    TemplateSpec bare = fixture::small_template();
    bare.tokens.clear();
    const std::vector<Sample> one = {{{3}, 0}};
    const auto cap = *forward(m, templatize(one, bare), true).capture;
    CHECK(cap.batch == 1);
    CHECK(cap.seq_len == 1);
    CHECK(cap.inputs[0].rows == 1);
    CHECK(cap.inputs[0].cols == m.layers[0].d_in());
    CHECK(cap.inputs[1].cols == m.layers[1].d_in());
}

TEST_CASE("adapter equivalence: W0 x + B(A x) equals the merged weight") {
    const auto m = fixture::small_model(14);
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto& layer = m.layers[trial % 2];
        Vec x(layer.d_in());
        for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
        const auto got = adapter_forward(layer, x);
        Vec want(layer.d_out());
        matvec(layer.merged(), x, want);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
    }
}

TEST_CASE("fresh model has W_B = 0, so the adapter is inert") {
    ModelShape s;
    s.n_items = 10;
    const auto m = init_model(s, 3);
    for (const auto& l : m.layers) {
        for (float v : l.lora_b.data) CHECK(v == 0.0f);
        for (float v : l.delta().data) CHECK(v == 0.0f);
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.embed_dim));
    for (float v : m.layers[0].lora_a.data) CHECK(std::fabs(v) <= bound);
    CHECK(init_model(s, 3) == m);
    CHECK_FALSE(init_model(s, 4) == m);
    CHECK_THROWS_AS((void)init_model(ModelShape{}, 1), ConfigError);
}

TEST_CASE("item groups share embedding dims") {
    ModelShape s;
    s.n_items = 6;
    const std::vector<std::int32_t> groups = {0, 0, 1, 1, 2, 2};
    const auto m = init_model(s, 9, groups);
    const auto row = [&](std::int32_t item) { return m.embedding.row(static_cast<std::size_t>(s.n_reserved + item)); };
    // Items 0 and 1 share group 0's leading block; item 2 does not use it.
    CHECK(row(0)[0] > 0.0f);
    CHECK(row(1)[0] > 0.0f);
    CHECK(row(2)[0] == 0.0f);
    CHECK_THROWS_AS((void)init_model(s, 9, std::vector<std::int32_t>{0, 1}), DimensionError);
}

TEST_CASE("backward matches finite differences") {
    const auto m = fixture::small_model(21, Activation::Tanh);
    const auto batch = templatize(fixture::samples(3, 6, 0, 12, 2, 5), fixture::small_template());
    const auto res = backward(m, batch, cross_entropy_loss(batch));
    CHECK(res.loss / static_cast<double>(batch.batch) == doctest::Approx(reference_loss(m, batch)).epsilon(1e-5));

    using Pick = float& (*)(AdapterModel&);
    struct Probe {
        Pick pick;
        float grad;
    };
    const std::vector<Probe> probes = {
        {[](AdapterModel& x) -> float& { return x.layers[0].lora_a(0, 1); }, res.grads.lora_a[0](0, 1)},
        {[](AdapterModel& x) -> float& { return x.layers[0].lora_a(1, 4); }, res.grads.lora_a[0](1, 4)},
        {[](AdapterModel& x) -> float& { return x.layers[0].lora_b(3, 0); }, res.grads.lora_b[0](3, 0)},
        {[](AdapterModel& x) -> float& { return x.layers[1].lora_a(0, 7); }, res.grads.lora_a[1](0, 7)},
        {[](AdapterModel& x) -> float& { return x.layers[1].lora_b(5, 1); }, res.grads.lora_b[1](5, 1)},
        {[](AdapterModel& x) -> float& { return x.layers[1].lora_b(0, 0); }, res.grads.lora_b[1](0, 0)},
    };
    for (const auto& p : probes) {
        const double num = numeric_grad(m, p.pick, batch, 1e-3f);
        CHECK(std::fabs(num - p.grad) <= 1e-4);
    }

    // Full sweep over layer-1 W_A.
    for (std::size_t k = 0; k < m.layers[1].lora_a.size(); ++k) {
        AdapterModel up = m, down = m;
        up.layers[1].lora_a.data[k] += 1e-3f;
        down.layers[1].lora_a.data[k] -= 1e-3f;
        const double h = static_cast<double>(up.layers[1].lora_a.data[k]) - down.layers[1].lora_a.data[k];
        const double num = (reference_loss(up, batch) - reference_loss(down, batch)) / h;
        CHECK(std::fabs(num - res.grads.lora_a[1].data[k]) <= 1e-4);
    }
}

TEST_CASE("backward increments the gradient-op counter; forward does not") {
    const auto m = fixture::small_model(22);
    const auto batch = templatize(fixture::samples(3, 4, 0, 12), fixture::small_template());
    const auto before = gradient_op_count();
    (void)forward(m, batch, true);
    CHECK(gradient_op_count() == before);
    (void)backward(m, batch, cross_entropy_loss(batch));
    CHECK(gradient_op_count() == before + 1);
}

TEST_CASE("training") {
    const auto tmpl = fixture::small_template();
    const auto data = fixture::samples(8, 64, 0, 12, 1, 6);
    auto m = fixture::small_model(30);
    SUBCASE("0 epochs leaves weights unchanged") {
        TrainHyper h;
        h.epochs = 0;
        CHECK(train_adapter(m, data, tmpl, h).model == m);
    }
    SUBCASE("loss falls and only adapter matrices move") {
        TrainHyper h;
        h.epochs = 20;
        const auto res = train_adapter(m, data, tmpl, h);
        CHECK(res.epoch_losses.back() < res.epoch_losses.front());
        CHECK(res.model.embedding == m.embedding);
        CHECK(res.model.output == m.output);
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            CHECK(res.model.layers[l].base == m.layers[l].base);
            CHECK_FALSE(res.model.layers[l].lora_a == m.layers[l].lora_a);
        }
        CHECK(train_adapter(m, data, tmpl, h).model == res.model);
    }
    SUBCASE("non-finite loss is a numeric error") {
        TrainHyper h;
        h.epochs = 1;
        m.output(0, 0) = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS((void)train_adapter(m, data, tmpl, h), NumericError);
    }
}

TEST_CASE("checkpoint round trip is byte-stable") {
    const auto dir = fixture::scratch("ckpt");
    const auto m = fixture::small_model(40);
    save_checkpoint(m, dir / "a.ckpt", {{"note", "x"}});
    const auto ck = load_checkpoint(dir / "a.ckpt");
    CHECK(ck.model == m);
    CHECK(ck.meta["note"] == "x");
    save_checkpoint(ck.model, dir / "b.ckpt", {{"note", "x"}});
    CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
}

TEST_CASE("tensor file rejects corrupt input") {
    TensorFile tf;
    tf.add("v", Vec{1.0f, 2.0f});
    auto bytes = tf.serialize();
    CHECK(TensorFile::deserialize(bytes).get("v").values == Vec{1.0f, 2.0f});

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS((void)TensorFile::deserialize(bad_magic), FormatError);

    auto bad_version = bytes;
    bad_version[8] = 9;
    CHECK_THROWS_AS((void)TensorFile::deserialize(bad_version), FormatError);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS((void)TensorFile::deserialize(truncated), FormatError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS((void)TensorFile::deserialize(trailing), FormatError);

    CHECK_THROWS_AS((void)tf.get("missing"), FormatError);
}

TEST_CASE("out-of-vocabulary tokens are rejected") {
    const auto m = fixture::small_model(41);
    const std::vector<Sample> s = {{{50}, 0}};
    CHECK_THROWS_AS((void)forward(m, templatize(s, fixture::small_template())), DataError);
}
