#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace ucan {

struct Event {
    std::int32_t user = 0;
    std::int32_t item = 0;
    std::int64_t timestamp = 0;

    friend auto operator<=>(const Event&, const Event&) = default;
};

// Interaction events with dense ids in [0, n_users) and [0, n_items).
struct InteractionLog {
    std::vector<Event> events;
    std::int32_t n_users = 0;
    std::int32_t n_items = 0;

    [[nodiscard]] bool empty() const noexcept { return events.empty(); }
};

struct SplitSpec {
    double forget_fraction = 0.25;
    std::uint64_t seed = 0;
};

struct Split {
    InteractionLog forget;
    InteractionLog retain;
};

// Loads a tab-separated `user item rating timestamp` file. When `titles_path`
// names a `u.item`-style file (`id|title|...`), items without a title are dropped.
// Ids are re-indexed densely in ascending order of the raw ids.
[[nodiscard]] InteractionLog load_ml100k(const std::filesystem::path& path,
                                         const std::optional<std::filesystem::path>& titles_path = {});

// Orders events by (user, timestamp, item).
void sort_chronological(InteractionLog& log);

// Re-indexes user and item ids densely, preserving relative order of raw ids.
[[nodiscard]] InteractionLog reindex(InteractionLog log);

// Drops users and items with fewer than `k` interactions until nothing changes.
[[nodiscard]] InteractionLog k_core_filter(const InteractionLog& log, std::size_t k);
[[nodiscard]] inline InteractionLog five_core_filter(const InteractionLog& log) { return k_core_filter(log, 5); }

// Positions (into the user's chronological event list) that go to the forget side.
// Depends only on (seed, user, n, fraction), so the synthetic generator can plant
// data at exactly the positions the split will later select.
[[nodiscard]] std::vector<std::size_t> forget_positions(std::uint64_t seed, std::int32_t user, std::size_t n,
                                                        double fraction);

// Per-user seeded sample of floor(fraction * n_u) events forms the forget side.
[[nodiscard]] Split forget_retain_split(const InteractionLog& log, const SplitSpec& spec);

struct SyntheticSpec {
    std::int32_t n_users = 50;
    std::int32_t n_items = 100;
    std::uint64_t seed = 7;
    double planted_cluster_fraction = 0.25;
    std::int32_t min_events = 16;
    std::int32_t max_events = 24;
    std::int32_t n_genres = 4;
};

struct SyntheticData {
    InteractionLog log;
    SplitSpec split;
    // First item id of the planted cluster; the cluster is [cluster_begin, n_items).
    std::int32_t cluster_begin = 0;
    // Per item: genre index, or n_genres for cluster items.
    std::vector<std::int32_t> item_groups;
};

// Emits a log where the events the returned split will put on the forget side
// are drawn from a disjoint item cluster (the last fifth of the catalogue).
// With planted_cluster_fraction == 0 nothing is planted: the split uses the
// default fraction and forget items are whatever the uniform draw produced.
[[nodiscard]] SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Template prefix standing in for the system prompt. Token ids below
// n_reserved are reserved; 0 is the pad token.
struct TemplateSpec {
    std::vector<std::int32_t> tokens{1, 2, 3};
    std::int32_t n_reserved = 4;
    std::size_t max_len = 16;

    [[nodiscard]] std::int32_t item_token(std::int32_t item) const noexcept { return n_reserved + item; }
};

inline constexpr std::int32_t kPadToken = 0;

struct Sample {
    std::vector<std::int32_t> history;
    std::int32_t target = 0;
};

struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<std::int32_t> tokens;  // batch x seq_len
    std::vector<std::uint8_t> mask;    // 1 on history positions
    std::vector<std::int32_t> target;  // item id per row

    [[nodiscard]] std::int32_t token(std::size_t b, std::size_t t) const { return tokens[b * seq_len + t]; }
    [[nodiscard]] std::uint8_t mask_at(std::size_t b, std::size_t t) const { return mask[b * seq_len + t]; }
};

// Rows are [template tokens (mask 0)] + [history item tokens (mask 1)], right-padded.
// Histories longer than max_len - template length keep their most recent items.
[[nodiscard]] TokenBatch templatize(std::span<const Sample> samples, const TemplateSpec& tmpl);

[[nodiscard]] std::vector<TokenBatch> make_batches(std::span<const Sample> samples, const TemplateSpec& tmpl,
                                                   std::size_t batch_size);

// Chronological item list per user (index = user id).
[[nodiscard]] std::vector<std::vector<std::int32_t>> user_sequences(const InteractionLog& log);

// Training pairs from every prefix of each sequence, with the last `holdout`
// items of every sequence withheld from targets.
[[nodiscard]] std::vector<Sample> prefix_samples(const std::vector<std::vector<std::int32_t>>& seqs,
                                                 std::size_t max_history, std::size_t holdout = 1);

// Leave-one-out query per sequence with at least two items: last item as target.
[[nodiscard]] std::vector<Sample> leave_one_out(const std::vector<std::vector<std::int32_t>>& seqs,
                                                std::size_t max_history);

// Split manifest: a `# n_users N n_items M` header, then `user item timestamp F|R` lines.
void write_manifest(const std::filesystem::path& path, const Split& split);
[[nodiscard]] Split read_manifest(const std::filesystem::path& path);

}  // namespace ucan
