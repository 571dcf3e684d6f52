#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ucan/data.hpp"
#include "ucan/model.hpp"

namespace ucan {

inline constexpr double kProbFloor = 1e-12;

// Descending-score item ids for one query; ties broken by ascending item id.
struct RankedList {
    std::vector<std::int32_t> items;
    std::int32_t truth = 0;
};

[[nodiscard]] RankedList rank_items(std::span<const float> scores, std::int32_t truth, std::size_t k);

// 1-based rank of `truth` under the same ordering, without sorting.
[[nodiscard]] std::size_t rank_of(std::span<const float> scores, std::int32_t truth);

// 1-based rank of the truth in a ranked list; list.size() + 1 when absent.
[[nodiscard]] std::size_t rank_in(const RankedList& list);

// Single-ground-truth metrics averaged over queries, given 1-based truth ranks.
[[nodiscard]] double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);
[[nodiscard]] double mrr_at_k(std::span<const std::size_t> ranks, std::size_t k);
[[nodiscard]] double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k);

struct At10 {
    double recall = 0.0;
    double mrr = 0.0;
    double ndcg = 0.0;
    [[nodiscard]] double mean() const noexcept { return (recall + mrr + ndcg) / 3.0; }
};

struct RankingMetrics {
    double recall5 = 0.0, recall10 = 0.0;
    double mrr5 = 0.0, mrr10 = 0.0;
    double ndcg5 = 0.0, ndcg10 = 0.0;
    std::size_t queries = 0;

    [[nodiscard]] At10 at10() const noexcept { return {recall10, mrr10, ndcg10}; }
};

[[nodiscard]] RankingMetrics ranking_metrics(std::span<const std::size_t> ranks);
[[nodiscard]] std::vector<std::size_t> truth_ranks(const AdapterModel& model, std::span<const TokenBatch> batches);
[[nodiscard]] RankingMetrics evaluate_ranking(const AdapterModel& model, std::span<const TokenBatch> batches);

// 100 * [ (E10_o - E10_u) / E10_o - (U10_o - U10_u) / U10_o ]; E and U are the
// means of Recall/MRR/NDCG@10 on the forget and retain sides.
[[nodiscard]] double tradeoff_at_10(const At10& forget_original, const At10& retain_original,
                                    const At10& forget_unlearned, const At10& retain_unlearned);

// sum_y p(y) log(p(y) / q(y)) with both sides floored at kProbFloor.
[[nodiscard]] double kl_divergence(std::span<const float> p, std::span<const float> q);

// Mean KL(P_original || P_unlearned) over the queries in `batches`.
[[nodiscard]] double kl_divergence(const AdapterModel& original, const AdapterModel& unlearned,
                                   std::span<const TokenBatch> batches);

// Argmax with ties broken by the smallest index.
[[nodiscard]] std::size_t argmax(std::span<const float> scores);

[[nodiscard]] double prediction_shift(std::span<const std::size_t> top_original, std::span<const std::size_t> top_unlearned);
[[nodiscard]] double prediction_shift(const AdapterModel& original, const AdapterModel& unlearned,
                                      std::span<const TokenBatch> batches);

// exp(mean -log p(truth)), probabilities floored at kProbFloor.
[[nodiscard]] double perplexity(std::span<const double> truth_probs);
[[nodiscard]] double perplexity(const AdapterModel& model, std::span<const TokenBatch> batches);

struct RunMeasure {
    double wall_clock_s = 0.0;
    double throughput = 0.0;  // samples per second
    std::uint64_t gradient_ops = 0;
};

[[nodiscard]] inline double throughput(std::size_t samples, double seconds) {
    return seconds > 0.0 ? static_cast<double>(samples) / seconds : 0.0;
}

// Times `fn` and records the change in gradient_op_count() around it.
[[nodiscard]] RunMeasure measure_run(const std::function<void()>& fn, std::size_t samples);

struct EvalReport {
    static constexpr int kSchemaVersion = 1;

    std::string method;
    std::string dataset;
    std::uint64_t seed = 0;
    RankingMetrics forget;
    RankingMetrics retain;
    RankingMetrics forget_original;
    RankingMetrics retain_original;
    double tradeoff_at_10 = 0.0;
    double kl = 0.0;
    double pred_shift_pct = 0.0;
    double ppl = 0.0;
    double ppl_original = 0.0;
    RunMeasure run;
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    [[nodiscard]] static std::string csv_header();
    [[nodiscard]] std::string csv_row() const;
};

struct EvalInputs {
    std::span<const TokenBatch> forget_queries;  // held-out forget-side targets
    std::span<const TokenBatch> retain_queries;  // leave-one-out retain targets
};

// Full comparison of `candidate` against `original` on both sides.
[[nodiscard]] EvalReport evaluate(const AdapterModel& original, const AdapterModel& candidate, const EvalInputs& inputs);

}  // namespace ucan
