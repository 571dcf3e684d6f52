#pragma once

// Reference computations used to check the library. They work in double with
// plain loops and share no code with src/, so a bug has to be made twice to
// go unnoticed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "ucan/data.hpp"
#include "ucan/model.hpp"

namespace oracle {

using Dense = std::vector<std::vector<double>>;

inline Dense to_dense(const ucan::Matrix& m) {
    Dense d(m.rows, std::vector<double>(m.cols));
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) d[r][c] = m(r, c);
    return d;
}

inline std::vector<double> mul(const Dense& m, const std::vector<double>& x) {
    std::vector<double> y(m.size(), 0.0);
    for (std::size_t r = 0; r < m.size(); ++r)
        for (std::size_t c = 0; c < x.size(); ++c) y[r] += m[r][c] * x[c];
    return y;
}

inline Dense mul(const Dense& a, const Dense& b) {
    Dense out(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

// Layer inputs of one token: [x_0 = embedding, x_1, ..., x_L].
inline std::vector<std::vector<double>> token_path(const ucan::AdapterModel& m, std::int32_t token) {
    std::vector<std::vector<double>> xs;
    std::vector<double> x(m.embedding.cols);
    for (std::size_t c = 0; c < x.size(); ++c) x[c] = m.embedding(static_cast<std::size_t>(token), c);
    xs.push_back(x);
    for (const auto& layer : m.layers) {
        const auto base = mul(to_dense(layer.base), x);
        const auto ax = mul(to_dense(layer.lora_a), x);
        const auto bax = mul(to_dense(layer.lora_b), ax);
        std::vector<double> h(base.size());
        for (std::size_t i = 0; i < h.size(); ++i) {
            const double z = base[i] + bax[i];
            h[i] = m.shape.activation == ucan::Activation::Tanh ? std::tanh(z) : std::max(0.0, z);
        }
        x = h;
        xs.push_back(x);
    }
    return xs;
}

// Logits of every row, recomputed position by position.
inline Dense logits(const ucan::AdapterModel& m, const ucan::TokenBatch& batch) {
    Dense out;
    const auto out_w = to_dense(m.output);
    for (std::size_t b = 0; b < batch.batch; ++b) {
        std::vector<double> pooled(m.shape.hidden_dim, 0.0);
        double n = 0.0;
        for (std::size_t t = 0; t < batch.seq_len; ++t) {
            if (!batch.mask[b * batch.seq_len + t]) continue;
            const auto h = token_path(m, batch.tokens[b * batch.seq_len + t]).back();
            for (std::size_t i = 0; i < h.size(); ++i) pooled[i] += h[i];
            n += 1.0;
        }
        for (auto& v : pooled) v /= n;
        out.push_back(mul(out_w, pooled));
    }
    return out;
}

struct Stats {
    Dense v_f, v_r, S;  // per layer
};

// v = mean over samples of the per-sample masked mean; S = sum over retain
// history tokens of x*x.
inline Stats stats(const ucan::AdapterModel& m, const std::vector<ucan::TokenBatch>& forget,
                   const std::vector<ucan::TokenBatch>& retain) {
    const std::size_t L = m.layers.size();
    Stats s;
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t d = m.layers[l].base.cols;
        s.v_f.emplace_back(d, 0.0);
        s.v_r.emplace_back(d, 0.0);
        s.S.emplace_back(d, 0.0);
    }
    auto run = [&](const std::vector<ucan::TokenBatch>& batches, Dense& v, bool retain_side) {
        double samples = 0.0;
        for (const auto& batch : batches) {
            for (std::size_t b = 0; b < batch.batch; ++b) {
                Dense acc;
                for (std::size_t l = 0; l < L; ++l) acc.emplace_back(v[l].size(), 0.0);
                double n = 0.0;
                for (std::size_t t = 0; t < batch.seq_len; ++t) {
                    if (!batch.mask[b * batch.seq_len + t]) continue;
                    const auto xs = token_path(m, batch.tokens[b * batch.seq_len + t]);
                    for (std::size_t l = 0; l < L; ++l) {
                        for (std::size_t j = 0; j < xs[l].size(); ++j) {
                            acc[l][j] += xs[l][j];
                            if (retain_side) s.S[l][j] += xs[l][j] * xs[l][j];
                        }
                    }
                    n += 1.0;
                }
                for (std::size_t l = 0; l < L; ++l)
                    for (std::size_t j = 0; j < acc[l].size(); ++j) v[l][j] += acc[l][j] / n;
                samples += 1.0;
            }
        }
        for (auto& layer : v)
            for (auto& x : layer) x /= samples;
    };
    run(forget, s.v_f, false);
    run(retain, s.v_r, true);
    return s;
}

inline std::vector<double> minmax(const std::vector<double>& v, double eps) {
    const double lo = *std::min_element(v.begin(), v.end());
    const double hi = *std::max_element(v.begin(), v.end());
    std::vector<double> out;
    for (double x : v) out.push_back((x - lo) / (hi - lo + eps));
    return out;
}

struct Params {
    double gamma = 0.5, lambda = 0.3, tau = 0.2, alpha_max = 0.1, beta = 2.0, eps = 1e-8;
};

struct LayerOut {
    std::vector<double> gap, importance, risk, alpha;
    Dense lora_a;  // after attenuation
};

// The whole adapter-mode pipeline worked out by hand: contrast gap,
// normalization, delta-weight importance, fusion, strict threshold, decay
// law, column scaling of W_A.
inline std::vector<LayerOut> spreadsheet(const ucan::AdapterModel& m, const std::vector<ucan::TokenBatch>& forget,
                                         const std::vector<ucan::TokenBatch>& retain, const Params& p) {
    const auto st = stats(m, forget, retain);
    std::vector<LayerOut> out;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& layer = m.layers[l];
        const std::size_t d = layer.base.cols;
        LayerOut o;
        for (std::size_t j = 0; j < d; ++j) o.gap.push_back(std::max(0.0, st.v_f[l][j] - p.gamma * st.v_r[l][j]));
        const auto gap_n = minmax(o.gap, p.eps);

        const auto delta = mul(to_dense(layer.lora_b), to_dense(layer.lora_a));
        for (std::size_t j = 0; j < d; ++j) {
            double l1 = 0.0;
            for (std::size_t i = 0; i < delta.size(); ++i) l1 += std::fabs(delta[i][j]);
            o.importance.push_back(l1 / static_cast<double>(delta.size()) * std::sqrt(st.S[l][j] + p.eps));
        }
        const auto imp_n = minmax(o.importance, p.eps);

        std::vector<double> pre;
        for (std::size_t j = 0; j < d; ++j) pre.push_back(std::max(0.0, p.lambda * gap_n[j] - (1 - p.lambda) * imp_n[j]));
        o.risk = minmax(pre, p.eps);

        o.lora_a = to_dense(layer.lora_a);
        for (std::size_t j = 0; j < d; ++j) {
            double a = 1.0;
            if (o.risk[j] > p.tau) a = p.alpha_max * std::pow(1.0 - (o.risk[j] - p.tau) / (1.0 - p.tau + p.eps), p.beta);
            o.alpha.push_back(a);
            for (auto& row : o.lora_a) row[j] *= a;
        }
        out.push_back(std::move(o));
    }
    return out;
}

// k-core by repeated full recount on raw ids, then dense re-indexing by
// ascending raw id. Events come back ordered by (user, timestamp, item).
inline std::vector<std::tuple<std::int32_t, std::int64_t, std::int32_t>> brute_force_core(
    std::vector<ucan::Event> events, std::size_t k) {
    bool changed = true;
    while (changed) {
        changed = false;
        std::map<std::int32_t, std::size_t> uc, ic;
        for (const auto& e : events) {
            ++uc[e.user];
            ++ic[e.item];
        }
        std::vector<ucan::Event> kept;
        for (const auto& e : events) {
            if (uc[e.user] >= k && ic[e.item] >= k) kept.push_back(e);
        }
        if (kept.size() != events.size()) changed = true;
        events = kept;
    }
    std::set<std::int32_t> users, items;
    for (const auto& e : events) {
        users.insert(e.user);
        items.insert(e.item);
    }
    auto dense = [](const std::set<std::int32_t>& s, std::int32_t raw) {
        return static_cast<std::int32_t>(std::distance(s.begin(), s.find(raw)));
    };
    std::vector<std::tuple<std::int32_t, std::int64_t, std::int32_t>> out;
    for (const auto& e : events) out.emplace_back(dense(users, e.user), e.timestamp, dense(items, e.item));
    std::sort(out.begin(), out.end());
    return out;
}

// DCG with a single relevant item at 1-based rank r (0 outside the top k).
inline double ndcg_single(std::size_t r, std::size_t k) { return r <= k ? 1.0 / std::log2(static_cast<double>(r) + 1.0) : 0.0; }

}  // namespace oracle
