#include "ucan/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>

#include "ucan/errors.hpp"
#include "ucan/rng.hpp"

namespace ucan {

namespace {

template <class T>
bool parse_int(std::string_view s, T& out) {
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) fields.push_back(line.substr(start, i - start));
    }
    return fields;
}

std::set<std::int64_t> load_titled_items(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open titles file " + path.string());
    std::set<std::int64_t> titled;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto bar = line.find('|');
        if (bar == std::string::npos) throw ParseError(lineno, "expected `id|title|...`");
        std::int64_t id = 0;
        if (!parse_int(std::string_view(line).substr(0, bar), id)) throw ParseError(lineno, "bad item id");
        const auto next = line.find('|', bar + 1);
        const auto title = line.substr(bar + 1, next == std::string::npos ? std::string::npos : next - bar - 1);
        if (title.find_first_not_of(" \t") != std::string::npos) titled.insert(id);
    }
    return titled;
}

}  // namespace

InteractionLog load_ml100k(const std::filesystem::path& path, const std::optional<std::filesystem::path>& titles_path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());

    std::optional<std::set<std::int64_t>> titled;
    if (titles_path) titled = load_titled_items(*titles_path);

    InteractionLog raw;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto fields = split_ws(line);
        if (fields.empty()) continue;
        if (fields.size() != 4) {
            throw ParseError(lineno, "expected 4 fields `user item rating timestamp`, got " +
                                         std::to_string(fields.size()));
        }
        Event e;
        double rating = 0.0;
        std::int64_t user = 0, item = 0;
        if (!parse_int(fields[0], user) || !parse_int(fields[1], item) || !parse_int(fields[3], e.timestamp)) {
            throw ParseError(lineno, "non-integer user/item/timestamp");
        }
        if (auto [p, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), rating);
            ec != std::errc{}) {
            throw ParseError(lineno, "bad rating");
        }
        if (titled && !titled->contains(item)) continue;
        e.user = static_cast<std::int32_t>(user);
        e.item = static_cast<std::int32_t>(item);
        raw.events.push_back(e);
    }
    if (raw.events.empty()) throw DataError("empty interaction log: " + path.string());
    return reindex(std::move(raw));
}

void sort_chronological(InteractionLog& log) {
    std::sort(log.events.begin(), log.events.end(), [](const Event& a, const Event& b) {
        if (a.user != b.user) return a.user < b.user;
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        return a.item < b.item;
    });
}

InteractionLog reindex(InteractionLog log) {
    std::map<std::int32_t, std::int32_t> users, items;
    for (const auto& e : log.events) {
        users.emplace(e.user, 0);
        items.emplace(e.item, 0);
    }
    std::int32_t next = 0;
    for (auto& [raw, id] : users) id = next++;
    next = 0;
    for (auto& [raw, id] : items) id = next++;
    for (auto& e : log.events) {
        e.user = users[e.user];
        e.item = items[e.item];
    }
    log.n_users = static_cast<std::int32_t>(users.size());
    log.n_items = static_cast<std::int32_t>(items.size());
    sort_chronological(log);
    return log;
}

InteractionLog k_core_filter(const InteractionLog& log, std::size_t k) {
    std::vector<Event> events = log.events;
    for (;;) {
        std::unordered_map<std::int32_t, std::size_t> user_count, item_count;
        for (const auto& e : events) {
            ++user_count[e.user];
            ++item_count[e.item];
        }
        const auto before = events.size();
        std::erase_if(events, [&](const Event& e) { return user_count[e.user] < k || item_count[e.item] < k; });
        if (events.size() == before) break;
    }
    InteractionLog out;
    out.events = std::move(events);
    return reindex(std::move(out));
}

std::vector<std::size_t> forget_positions(std::uint64_t seed, std::int32_t user, std::size_t n, double fraction) {
    const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(user)));
    rng.shuffle(order);
    order.resize(std::min(take, n));
    std::sort(order.begin(), order.end());
    return order;
}

Split forget_retain_split(const InteractionLog& log, const SplitSpec& spec) {
    if (log.empty()) throw DataError("cannot split an empty log");
    if (!(spec.forget_fraction >= 0.0 && spec.forget_fraction <= 1.0)) {
        throw ConfigError("forget_fraction must lie in [0,1]");
    }
    InteractionLog sorted = log;
    sort_chronological(sorted);

    Split out;
    out.forget.n_users = out.retain.n_users = log.n_users;
    out.forget.n_items = out.retain.n_items = log.n_items;

    std::size_t begin = 0;
    while (begin < sorted.events.size()) {
        std::size_t end = begin;
        const auto user = sorted.events[begin].user;
        while (end < sorted.events.size() && sorted.events[end].user == user) ++end;
        const auto picked = forget_positions(spec.seed, user, end - begin, spec.forget_fraction);
        std::size_t p = 0;
        for (std::size_t i = begin; i < end; ++i) {
            if (p < picked.size() && picked[p] == i - begin) {
                out.forget.events.push_back(sorted.events[i]);
                ++p;
            } else {
                out.retain.events.push_back(sorted.events[i]);
            }
        }
        begin = end;
    }
    return out;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_users <= 0) throw ConfigError("synthetic n_users must be positive");
    if (spec.n_items < 20) throw ConfigError("synthetic n_items must be at least 20");
    if (spec.min_events < 2 || spec.max_events < spec.min_events) throw ConfigError("synthetic event range invalid");
    if (spec.n_genres <= 0) throw ConfigError("synthetic n_genres must be positive");
    if (!(spec.planted_cluster_fraction >= 0.0 && spec.planted_cluster_fraction <= 1.0)) {
        throw ConfigError("planted_cluster_fraction must lie in [0,1]");
    }

    SyntheticData out;
    out.cluster_begin = spec.n_items - spec.n_items / 5;
    const bool planted = spec.planted_cluster_fraction > 0.0;
    out.split.forget_fraction = planted ? spec.planted_cluster_fraction : SplitSpec{}.forget_fraction;
    out.split.seed = derive_seed(spec.seed, "split");

    const std::int32_t genre_items = out.cluster_begin;
    const std::int32_t genre_width = std::max<std::int32_t>(1, genre_items / spec.n_genres);
    const std::int32_t cluster_width = spec.n_items - out.cluster_begin;

    // Popularity-skewed draw from a contiguous range.
    auto skewed = [](Rng& rng, std::int32_t lo, std::int32_t width) {
        const double u = rng.uniform();
        return lo + std::min(width - 1, static_cast<std::int32_t>(u * u * width));
    };

    for (std::int32_t i = 0; i < spec.n_items; ++i) {
        out.item_groups.push_back(i >= out.cluster_begin ? spec.n_genres : std::min(i / genre_width, spec.n_genres - 1));
    }

    Rng rng(derive_seed(spec.seed, "synthetic"));
    out.log.n_users = spec.n_users;
    out.log.n_items = spec.n_items;
    for (std::int32_t u = 0; u < spec.n_users; ++u) {
        const auto genre = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(spec.n_genres)));
        const auto genre_lo = std::min(genre * genre_width, genre_items - genre_width);
        const auto n = static_cast<std::size_t>(
            spec.min_events + static_cast<std::int32_t>(rng.below(spec.max_events - spec.min_events + 1)));
        const auto forget = forget_positions(out.split.seed, u, n, out.split.forget_fraction);
        std::int64_t ts = 880000000 + static_cast<std::int64_t>(u) * 1000000;
        std::size_t p = 0;
        for (std::size_t k = 0; k < n; ++k) {
            ts += 3600 + static_cast<std::int64_t>(rng.below(600));
            std::int32_t item = 0;
            if (p < forget.size() && forget[p] == k) {
                ++p;
                item = planted ? skewed(rng, out.cluster_begin, cluster_width)
                               : static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(spec.n_items)));
            } else {
                item = skewed(rng, genre_lo, genre_width);
            }
            out.log.events.push_back({u, item, ts});
        }
    }
    sort_chronological(out.log);
    return out;
}

TokenBatch templatize(std::span<const Sample> samples, const TemplateSpec& tmpl) {
    const std::size_t tlen = tmpl.tokens.size();
    if (tmpl.max_len <= tlen) throw ConfigError("max_len must exceed the template length");
    const std::size_t max_hist = tmpl.max_len - tlen;

    TokenBatch batch;
    batch.batch = samples.size();
    for (const auto& s : samples) {
        if (s.history.empty()) throw ContractError("templatize: empty history");
        batch.seq_len = std::max(batch.seq_len, tlen + std::min(max_hist, s.history.size()));
    }
    batch.tokens.assign(batch.batch * batch.seq_len, kPadToken);
    batch.mask.assign(batch.batch * batch.seq_len, 0);
    batch.target.reserve(batch.batch);
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const auto& hist = samples[b].history;
        auto* row = batch.tokens.data() + b * batch.seq_len;
        auto* mrow = batch.mask.data() + b * batch.seq_len;
        std::copy(tmpl.tokens.begin(), tmpl.tokens.end(), row);
        const std::size_t keep = std::min(max_hist, hist.size());
        const std::size_t skip = hist.size() - keep;
        for (std::size_t i = 0; i < keep; ++i) {
            row[tlen + i] = tmpl.item_token(hist[skip + i]);
            mrow[tlen + i] = 1;
        }
        batch.target.push_back(samples[b].target);
    }
    return batch;
}

std::vector<TokenBatch> make_batches(std::span<const Sample> samples, const TemplateSpec& tmpl,
                                     std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<TokenBatch> out;
    for (std::size_t i = 0; i < samples.size(); i += batch_size) {
        out.push_back(templatize(samples.subspan(i, std::min(batch_size, samples.size() - i)), tmpl));
    }
    return out;
}

std::vector<std::vector<std::int32_t>> user_sequences(const InteractionLog& log) {
    InteractionLog sorted = log;
    sort_chronological(sorted);
    std::vector<std::vector<std::int32_t>> seqs(static_cast<std::size_t>(log.n_users));
    for (const auto& e : sorted.events) {
        if (e.user < 0 || e.user >= log.n_users) throw DataError("user id out of range");
        seqs[static_cast<std::size_t>(e.user)].push_back(e.item);
    }
    return seqs;
}

namespace {
std::vector<std::int32_t> tail(const std::vector<std::int32_t>& s, std::size_t end, std::size_t max_history) {
    const std::size_t begin = end > max_history ? end - max_history : 0;
    return {s.begin() + static_cast<std::ptrdiff_t>(begin), s.begin() + static_cast<std::ptrdiff_t>(end)};
}
}  // namespace

std::vector<Sample> prefix_samples(const std::vector<std::vector<std::int32_t>>& seqs, std::size_t max_history,
                                   std::size_t holdout) {
    std::vector<Sample> out;
    for (const auto& s : seqs) {
        if (s.size() <= holdout) continue;
        const std::size_t usable = s.size() - holdout;
        for (std::size_t t = 1; t < usable; ++t) out.push_back({tail(s, t, max_history), s[t]});
    }
    return out;
}

std::vector<Sample> leave_one_out(const std::vector<std::vector<std::int32_t>>& seqs, std::size_t max_history) {
    std::vector<Sample> out;
    for (const auto& s : seqs) {
        if (s.size() < 2) continue;
        out.push_back({tail(s, s.size() - 1, max_history), s.back()});
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, const Split& split) {
    std::vector<std::pair<Event, char>> rows;
    for (const auto& e : split.forget.events) rows.emplace_back(e, 'F');
    for (const auto& e : split.retain.events) rows.emplace_back(e, 'R');
    std::sort(rows.begin(), rows.end());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << "# n_users " << split.retain.n_users << " n_items " << split.retain.n_items << '\n';
    for (const auto& [e, side] : rows) out << e.user << ' ' << e.item << ' ' << e.timestamp << ' ' << side << '\n';
    if (!out) throw DataError("failed writing manifest " + path.string());
}

Split read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest " + path.string());
    Split out;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto fields = split_ws(line);
        if (fields.empty()) continue;
        if (fields[0] == "#") {
            if (fields.size() != 5 || fields[1] != "n_users" || fields[3] != "n_items" ||
                !parse_int(fields[2], out.forget.n_users) || !parse_int(fields[4], out.forget.n_items)) {
                throw ParseError(lineno, "bad manifest header");
            }
            out.retain.n_users = out.forget.n_users;
            out.retain.n_items = out.forget.n_items;
            have_header = true;
            continue;
        }
        if (fields.size() != 4) throw ParseError(lineno, "expected `user item timestamp side`");
        Event e;
        if (!parse_int(fields[0], e.user) || !parse_int(fields[1], e.item) || !parse_int(fields[2], e.timestamp)) {
            throw ParseError(lineno, "non-integer field");
        }
        if (!have_header) throw ParseError(lineno, "missing `# n_users N n_items M` header");
        if (e.user < 0 || e.user >= out.forget.n_users || e.item < 0 || e.item >= out.forget.n_items) {
            throw ParseError(lineno, "id out of range");
        }
        if (fields[3] == "F") {
            out.forget.events.push_back(e);
        } else if (fields[3] == "R") {
            out.retain.events.push_back(e);
        } else {
            throw ParseError(lineno, "side must be F or R");
        }
    }
    if (!have_header) throw DataError("empty manifest " + path.string());
    return out;
}

}  // namespace ucan
