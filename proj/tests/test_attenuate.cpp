#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "ucan/attenuate.hpp"
#include "ucan/errors.hpp"

using namespace ucan;

namespace {

struct Workload {
    AdapterModel model;
    std::vector<TokenBatch> forget, retain;
};

Workload workload(std::uint64_t seed) {
    const auto tmpl = fixture::small_template();
    return {fixture::small_model(seed), make_batches(fixture::samples(seed + 1, 12, 0, 6), tmpl, 4),
            make_batches(fixture::samples(seed + 2, 24, 4, 12), tmpl, 4)};
}

}  // namespace

TEST_CASE("selection is strict") {
    // 0.25 is exact in float, so the boundary case is a true tie.
    const Vec risk = {0.0f, 0.25f, std::nextafter(0.25f, 1.0f), 1.0f, 0.5f};
    CHECK(select_intervention(risk, 0.25) == std::vector<std::size_t>{2, 3, 4});
    CHECK(select_intervention(risk, 1.0).empty());
    CHECK(select_intervention(risk, 0.0) == std::vector<std::size_t>{1, 2, 3, 4});
}

TEST_CASE("decay law") {
    // Just above tau the factor approaches alpha_max; at R = 1 it is ~0.
    CHECK(retention_factor(0.2 + 1e-9, 0.2, 0.1, 2.0) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(retention_factor(1.0, 0.2, 0.1, 2.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(retention_factor(0.6, 0.2, 0.1, 2.0) == doctest::Approx(0.1 * 0.25).epsilon(1e-6));
    CHECK(retention_factor(0.6, 0.2, 0.1, 1.0) == doctest::Approx(0.05).epsilon(1e-6));
    CHECK(retention_factor(0.6, 0.2, 0.1, 0.0) == doctest::Approx(0.1));
    CHECK_THROWS_AS((void)retention_factor(0.2, 0.2, 0.1, 2.0), ContractError);
    CHECK_THROWS_AS((void)retention_factor(0.1, 0.2, 0.1, 2.0), ContractError);

    // Monotone non-increasing in risk.
    double prev = 1.0;
    for (int i = 1; i <= 100; ++i) {
        const double a = retention_factor(0.2 + 0.8 * i / 100.0, 0.2, 0.1, 2.0);
        CHECK(a <= prev);
        CHECK(a >= 0.0);
        prev = a;
    }
}

TEST_CASE("scaling W_A columns equals scaling the input") {
    const auto m = fixture::small_model(3);
    Rng rng(8);
    for (int trial = 0; trial < 40; ++trial) {
        auto layer = m.layers[trial % 2];
        Vec alpha(layer.d_in()), x(layer.d_in());
        for (auto& a : alpha) a = static_cast<float>(rng.uniform());
        for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));

        const auto delta = oracle::to_dense(layer.delta());
        std::vector<double> ax(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) ax[j] = static_cast<double>(alpha[j]) * x[j];
        const auto want = oracle::mul(delta, ax);

        apply_column_scaling(layer.lora_a, alpha);
        const auto got = oracle::mul(oracle::to_dense(layer.delta()), std::vector<double>(x.begin(), x.end()));
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
    }
    Matrix w(2, 3);
    CHECK_THROWS_AS(apply_column_scaling(w, Vec{1.0f}), DimensionError);
}

TEST_CASE("unlearning reproduces the hand-computed spreadsheet") {
    const auto w = workload(30);
    const auto want = oracle::spreadsheet(w.model, w.forget, w.retain, oracle::Params{});
    const auto res = unlearn(w.model, w.forget, w.retain, UcanConfig{});
    for (std::size_t l = 0; l < w.model.layers.size(); ++l) {
        const auto& got = res.model.layers[l].lora_a;
        for (std::size_t r = 0; r < got.rows; ++r)
            for (std::size_t c = 0; c < got.cols; ++c) CHECK(std::fabs(got(r, c) - want[l].lora_a[r][c]) <= 1e-6);
        for (std::size_t j = 0; j < res.plan.layers[l].alpha.size(); ++j)
            CHECK(std::fabs(res.plan.layers[l].alpha[j] - want[l].alpha[j]) <= 1e-6);
    }
    CHECK(res.plan.selected_count() > 0);
}

TEST_CASE("freeze contract: only W_A columns in Omega change") {
    const auto w = workload(31);
    const auto before = gradient_op_count();
    const auto res = unlearn(w.model, w.forget, w.retain, UcanConfig{});
    CHECK(gradient_op_count() == before);
    CHECK(res.model.embedding == w.model.embedding);
    CHECK(res.model.output == w.model.output);
    for (std::size_t l = 0; l < w.model.layers.size(); ++l) {
        const auto& a0 = w.model.layers[l];
        const auto& a1 = res.model.layers[l];
        CHECK(a1.base == a0.base);
        CHECK(a1.lora_b == a0.lora_b);
        const auto& sel = res.plan.layers[l].selected;
        for (std::size_t c = 0; c < a0.lora_a.cols; ++c) {
            const bool in_omega = std::find(sel.begin(), sel.end(), c) != sel.end();
            for (std::size_t r = 0; r < a0.lora_a.rows; ++r) {
                if (!in_omega) CHECK(a1.lora_a(r, c) == a0.lora_a(r, c));
            }
        }
    }
}

TEST_CASE("tau = 1 is an exact no-op") {
    const auto w = workload(32);
    UcanConfig cfg;
    cfg.tau_risk = 1.0;
    const auto res = unlearn(w.model, w.forget, w.retain, cfg);
    CHECK(res.plan.selected_count() == 0);
    CHECK(res.model == w.model);
    CHECK(to_tensor_file(res.model).serialize() == to_tensor_file(w.model).serialize());
}

TEST_CASE("hard mask zeroes the selected columns") {
    const auto w = workload(33);
    UcanConfig cfg;
    cfg.ablations.hard_mask = true;
    const auto res = unlearn(w.model, w.forget, w.retain, cfg);
    REQUIRE(res.plan.selected_count() > 0);
    for (std::size_t l = 0; l < w.model.layers.size(); ++l)
        for (auto j : res.plan.layers[l].selected)
            for (std::size_t r = 0; r < res.model.layers[l].lora_a.rows; ++r) CHECK(res.model.layers[l].lora_a(r, j) == 0.0f);
}

TEST_CASE("full target folds the scaled merge into the base weight") {
    const auto w = workload(34);
    UcanConfig cfg;
    cfg.target = Target::Full;
    const auto res = unlearn(w.model, w.forget, w.retain, cfg);
    for (std::size_t l = 0; l < w.model.layers.size(); ++l) {
        const auto& lp = res.plan.layers[l];
        const auto& layer = res.model.layers[l];
        if (lp.selected.empty()) {
            CHECK(layer == w.model.layers[l]);
            continue;
        }
        auto expect = w.model.layers[l].merged();
        apply_column_scaling(expect, lp.alpha);
        CHECK(layer.base == expect);
        for (float v : layer.lora_a.data) CHECK(v == 0.0f);
        for (float v : layer.lora_b.data) CHECK(v == 0.0f);
        CHECK(layer.merged() == expect);
    }
}

TEST_CASE("unlearn_from_summary equals the one-shot path") {
    const auto w = workload(35);
    const auto one = unlearn(w.model, w.forget, w.retain, UcanConfig{});
    const auto two = unlearn_from_summary(w.model, collect_summary(w.model, w.forget, w.retain), UcanConfig{});
    CHECK(one.model == two.model);
    CHECK(one.timing.total() >= 0.0);
}

TEST_CASE("invalid config is rejected before any work") {
    const auto w = workload(36);
    UcanConfig cfg;
    cfg.alpha_max = -0.5;
    CHECK_THROWS_AS((void)unlearn(w.model, w.forget, w.retain, cfg), ConfigError);
}

TEST_CASE("unlearning needs both sides") {
    const auto w = workload(37);
    CHECK_THROWS_AS((void)unlearn(w.model, w.forget, std::vector<TokenBatch>{}, UcanConfig{}), DataError);
    CHECK_THROWS_AS((void)unlearn(w.model, std::vector<TokenBatch>{}, w.retain, UcanConfig{}), DataError);
}
