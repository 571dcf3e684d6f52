#include "ucan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ucan/errors.hpp"

namespace ucan {

namespace {

bool ranks_before(std::span<const float> s, std::size_t a, std::size_t b) {
    return s[a] > s[b] || (s[a] == s[b] && a < b);
}

void require_queries(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) throw DataError("ranking metric over an empty query set");
    if (k == 0) throw ConfigError("K must be at least 1");
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

RankedList rank_items(std::span<const float> scores, std::int32_t truth, std::size_t k) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t n = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                      [&](std::size_t a, std::size_t b) { return ranks_before(scores, a, b); });
    RankedList out;
    out.truth = truth;
    for (std::size_t i = 0; i < n; ++i) out.items.push_back(static_cast<std::int32_t>(idx[i]));
    return out;
}

std::size_t rank_of(std::span<const float> scores, std::int32_t truth) {
    const auto t = static_cast<std::size_t>(truth);
    if (t >= scores.size()) throw DimensionError("truth item outside score vector");
    std::size_t rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i != t && ranks_before(scores, i, t)) ++rank;
    }
    return rank;
}

std::size_t rank_in(const RankedList& list) {
    const auto it = std::find(list.items.begin(), list.items.end(), list.truth);
    return static_cast<std::size_t>(it - list.items.begin()) + 1;
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    require_queries(ranks, k);
    double s = 0.0;
    for (auto r : ranks) s += r <= k ? 1.0 : 0.0;
    return s / static_cast<double>(ranks.size());
}

double mrr_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    require_queries(ranks, k);
    double s = 0.0;
    for (auto r : ranks) s += r <= k ? 1.0 / static_cast<double>(r) : 0.0;
    return s / static_cast<double>(ranks.size());
}

double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    require_queries(ranks, k);
    double s = 0.0;
    for (auto r : ranks) s += r <= k ? 1.0 / std::log2(static_cast<double>(r) + 1.0) : 0.0;
    return s / static_cast<double>(ranks.size());
}

RankingMetrics ranking_metrics(std::span<const std::size_t> ranks) {
    RankingMetrics m;
    m.queries = ranks.size();
    m.recall5 = recall_at_k(ranks, 5);
    m.recall10 = recall_at_k(ranks, 10);
    m.mrr5 = mrr_at_k(ranks, 5);
    m.mrr10 = mrr_at_k(ranks, 10);
    m.ndcg5 = ndcg_at_k(ranks, 5);
    m.ndcg10 = ndcg_at_k(ranks, 10);
    return m;
}

std::vector<std::size_t> truth_ranks(const AdapterModel& model, std::span<const TokenBatch> batches) {
    std::vector<std::size_t> ranks;
    for (const auto& batch : batches) {
        const auto fr = forward(model, batch);
        for (std::size_t b = 0; b < batch.batch; ++b) ranks.push_back(rank_of(fr.logits.row(b), batch.target[b]));
    }
    return ranks;
}

RankingMetrics evaluate_ranking(const AdapterModel& model, std::span<const TokenBatch> batches) {
    return ranking_metrics(truth_ranks(model, batches));
}

double tradeoff_at_10(const At10& forget_original, const At10& retain_original, const At10& forget_unlearned,
                      const At10& retain_unlearned) {
    const double e_o = forget_original.mean();
    const double u_o = retain_original.mean();
    if (e_o == 0.0 || u_o == 0.0) throw NumericError("Trade-off@10 undefined: original-model @10 mean is zero");
    const double forget_gain = (e_o - forget_unlearned.mean()) / e_o;
    const double retain_loss = (u_o - retain_unlearned.mean()) / u_o;
    return 100.0 * (forget_gain - retain_loss);
}

double kl_divergence(std::span<const float> p, std::span<const float> q) {
    check_dim(q.size(), p.size(), "kl_divergence");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = std::max<double>(p[i], kProbFloor);
        const double qi = std::max<double>(q[i], kProbFloor);
        kl += pi * std::log(pi / qi);
    }
    if (!std::isfinite(kl)) throw NumericError("non-finite KL divergence");
    // Flooring can leave a tiny negative residue when p == q.
    return std::max(0.0, kl);
}

double kl_divergence(const AdapterModel& original, const AdapterModel& unlearned, std::span<const TokenBatch> batches) {
    if (original.shape.n_items != unlearned.shape.n_items) throw DataError("models do not share an item vocabulary");
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& batch : batches) {
        const auto po = forward(original, batch);
        const auto pu = forward(unlearned, batch);
        for (std::size_t b = 0; b < batch.batch; ++b) {
            total += kl_divergence(softmax(po.logits.row(b)), softmax(pu.logits.row(b)));
            ++n;
        }
    }
    if (n == 0) throw DataError("kl_divergence: no queries");
    return total / static_cast<double>(n);
}

std::size_t argmax(std::span<const float> scores) {
    if (scores.empty()) throw DimensionError("argmax of empty scores");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

double prediction_shift(std::span<const std::size_t> top_original, std::span<const std::size_t> top_unlearned) {
    check_dim(top_unlearned.size(), top_original.size(), "prediction_shift");
    if (top_original.empty()) throw DataError("prediction_shift: no queries");
    std::size_t changed = 0;
    for (std::size_t i = 0; i < top_original.size(); ++i) changed += top_original[i] != top_unlearned[i] ? 1 : 0;
    return 100.0 * static_cast<double>(changed) / static_cast<double>(top_original.size());
}

double prediction_shift(const AdapterModel& original, const AdapterModel& unlearned,
                        std::span<const TokenBatch> batches) {
    std::vector<std::size_t> a, b;
    for (const auto& batch : batches) {
        const auto fo = forward(original, batch);
        const auto fu = forward(unlearned, batch);
        for (std::size_t r = 0; r < batch.batch; ++r) {
            a.push_back(argmax(fo.logits.row(r)));
            b.push_back(argmax(fu.logits.row(r)));
        }
    }
    return prediction_shift(a, b);
}

double perplexity(std::span<const double> truth_probs) {
    if (truth_probs.empty()) throw DataError("perplexity: no queries");
    double nll = 0.0;
    for (double p : truth_probs) nll -= std::log(std::max(p, kProbFloor));
    return std::exp(nll / static_cast<double>(truth_probs.size()));
}

double perplexity(const AdapterModel& model, std::span<const TokenBatch> batches) {
    // Log-sum-exp in double, so a uniform model lands on the vocabulary size
    // up to double rounding.
    const double max_nll = -std::log(kProbFloor);
    double nll = 0.0;
    std::size_t n = 0;
    for (const auto& batch : batches) {
        const auto fr = forward(model, batch);
        for (std::size_t b = 0; b < batch.batch; ++b) {
            const auto z = fr.logits.row(b);
            double mx = z[0];
            for (float v : z) mx = std::max(mx, static_cast<double>(v));
            double sum = 0.0;
            for (float v : z) sum += std::exp(static_cast<double>(v) - mx);
            const double logp = static_cast<double>(z[static_cast<std::size_t>(batch.target[b])]) - mx - std::log(sum);
            nll += std::min(-logp, max_nll);
            ++n;
        }
    }
    if (n == 0) throw DataError("perplexity: no queries");
    return std::exp(nll / static_cast<double>(n));
}

RunMeasure measure_run(const std::function<void()>& fn, std::size_t samples) {
    const auto ops0 = gradient_op_count();
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    RunMeasure m;
    m.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m.gradient_ops = gradient_op_count() - ops0;
    m.throughput = throughput(samples, m.wall_clock_s);
    return m;
}

EvalReport evaluate(const AdapterModel& original, const AdapterModel& candidate, const EvalInputs& inputs) {
    if (original.shape.n_items != candidate.shape.n_items) throw DataError("models do not share an item vocabulary");
    EvalReport r;
    r.forget_original = evaluate_ranking(original, inputs.forget_queries);
    r.retain_original = evaluate_ranking(original, inputs.retain_queries);
    r.forget = evaluate_ranking(candidate, inputs.forget_queries);
    r.retain = evaluate_ranking(candidate, inputs.retain_queries);
    r.tradeoff_at_10 = tradeoff_at_10(r.forget_original.at10(), r.retain_original.at10(), r.forget.at10(), r.retain.at10());
    r.kl = kl_divergence(original, candidate, inputs.forget_queries);
    r.pred_shift_pct = prediction_shift(original, candidate, inputs.forget_queries);
    r.ppl = perplexity(candidate, inputs.forget_queries);
    r.ppl_original = perplexity(original, inputs.forget_queries);
    return r;
}

namespace {
nlohmann::ordered_json metrics_json(const RankingMetrics& m) {
    nlohmann::ordered_json j;
    j["recall@5"] = m.recall5;
    j["recall@10"] = m.recall10;
    j["mrr@5"] = m.mrr5;
    j["mrr@10"] = m.mrr10;
    j["ndcg@5"] = m.ndcg5;
    j["ndcg@10"] = m.ndcg10;
    j["queries"] = m.queries;
    return j;
}
}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["method"] = method;
    j["dataset"] = dataset;
    j["seed"] = seed;
    j["forget"] = metrics_json(forget);
    j["retain"] = metrics_json(retain);
    j["forget_original"] = metrics_json(forget_original);
    j["retain_original"] = metrics_json(retain_original);
    j["tradeoff@10"] = tradeoff_at_10;
    j["kl"] = kl;
    j["pred_shift_pct"] = pred_shift_pct;
    j["ppl"] = ppl;
    j["ppl_original"] = ppl_original;
    j["wall_clock_s"] = run.wall_clock_s;
    j["throughput_samples_per_s"] = run.throughput;
    j["gradient_op_count"] = run.gradient_ops;
    j["extra"] = extra;
    return j;
}

std::string EvalReport::csv_header() {
    return "schema_version,method,dataset,seed,"
           "forget_r5,forget_r10,forget_m5,forget_m10,forget_n5,forget_n10,"
           "retain_r5,retain_r10,retain_m5,retain_m10,retain_n5,retain_n10,"
           "tradeoff_at_10,kl,pred_shift_pct,ppl,wall_clock_s,throughput_samples_per_s,gradient_op_count";
}

std::string EvalReport::csv_row() const {
    std::ostringstream os;
    os << kSchemaVersion << ',' << method << ',' << dataset << ',' << seed;
    for (const auto* m : {&forget, &retain}) {
        for (double v : {m->recall5, m->recall10, m->mrr5, m->mrr10, m->ndcg5, m->ndcg10}) os << ',' << fmt(v);
    }
    for (double v : {tradeoff_at_10, kl, pred_shift_pct, ppl, run.wall_clock_s, run.throughput}) os << ',' << fmt(v);
    os << ',' << run.gradient_ops;
    return os.str();
}

}  // namespace ucan
