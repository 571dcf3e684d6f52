#include "ucan/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ucan/errors.hpp"
#include "ucan/rng.hpp"
#include "ucan/tensor_file.hpp"

namespace ucan {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got `" + v + "`");
    return out;
}

template <class T>
T to_int(const std::string& key, const std::string& v) {
    T out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got `" + v + "`");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true/false, got `" + v + "`");
}

std::string num(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

template <class T>
std::string num_int(T v) {
    return std::to_string(v);
}

std::string boolstr(bool b) { return b ? "true" : "false"; }

Ablations parse_ablation(const std::string& key, const std::string& v) {
    Ablations a;
    if (v == "none" || v.empty()) return a;
    for (char c : v) {
        switch (c) {
            case 'F': a.no_utility = true; break;
            case 'C': a.no_contrast = true; break;
            case 'H': a.hard_mask = true; break;
            case '+':
            case ',': break;
            default: throw ConfigError(key + ": ablation must be a combination of F, C, H or `none`");
        }
    }
    return a;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define UCAN_DOUBLE(expr) \
    Field { [](const RunConfig& c) { return num(c.expr); }, [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_double(k, v); } }
#define UCAN_INT(type, expr) \
    Field { [](const RunConfig& c) { return num_int(c.expr); }, [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_int<type>(k, v); } }
#define UCAN_BOOL(expr) \
    Field { [](const RunConfig& c) { return boolstr(c.expr); }, [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_bool(k, v); } }
#define UCAN_STR(expr) \
    Field { [](const RunConfig& c) { return c.expr; }, [](RunConfig& c, const std::string&, const std::string& v) { c.expr = v; } }

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        {"dataset", UCAN_STR(dataset)},
        {"data.path", UCAN_STR(data_path)},
        {"data.titles", UCAN_STR(titles_path)},
        {"data.five_core", UCAN_BOOL(five_core)},
        {"data.forget_fraction", UCAN_DOUBLE(forget_fraction)},
        {"synthetic.n_users", UCAN_INT(std::int32_t, synthetic.n_users)},
        {"synthetic.n_items", UCAN_INT(std::int32_t, synthetic.n_items)},
        {"synthetic.planted_fraction", UCAN_DOUBLE(synthetic.planted_cluster_fraction)},
        {"synthetic.min_events", UCAN_INT(std::int32_t, synthetic.min_events)},
        {"synthetic.max_events", UCAN_INT(std::int32_t, synthetic.max_events)},
        {"synthetic.genres", UCAN_INT(std::int32_t, synthetic.n_genres)},
        {"model.embed_dim", UCAN_INT(std::size_t, shape.embed_dim)},
        {"model.hidden_dim", UCAN_INT(std::size_t, shape.hidden_dim)},
        {"model.layers", UCAN_INT(std::size_t, shape.n_layers)},
        {"model.rank", UCAN_INT(std::size_t, shape.rank)},
        {"model.activation",
         Field{[](const RunConfig& c) { return to_string(c.shape.activation); },
               [](RunConfig& c, const std::string&, const std::string& v) { c.shape.activation = activation_from_string(v); }}},
        {"model.template_len", UCAN_INT(std::size_t, template_len)},
        {"model.max_len", UCAN_INT(std::size_t, max_len)},
        {"train.lr", UCAN_DOUBLE(train.lr)},
        {"train.epochs", UCAN_INT(std::size_t, train.epochs)},
        {"train.batch_size", UCAN_INT(std::size_t, train.batch_size)},
        {"train.train_embeddings", UCAN_BOOL(train.train_embeddings)},
        {"ucan.gamma", UCAN_DOUBLE(ucan.gamma)},
        {"ucan.lambda", UCAN_DOUBLE(ucan.lambda)},
        {"ucan.tau", UCAN_DOUBLE(ucan.tau_risk)},
        {"ucan.alpha_max", UCAN_DOUBLE(ucan.alpha_max)},
        {"ucan.beta", UCAN_DOUBLE(ucan.beta)},
        {"ucan.eps", UCAN_DOUBLE(ucan.eps)},
        {"ucan.target",
         Field{[](const RunConfig& c) { return std::string(c.ucan.target == Target::Adapter ? "adapter" : "full"); },
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "adapter") {
                       c.ucan.target = Target::Adapter;
                   } else if (v == "full") {
                       c.ucan.target = Target::Full;
                   } else {
                       throw ConfigError(k + ": expected adapter or full");
                   }
               }}},
        {"ucan.quant_proxy", UCAN_BOOL(ucan.quant_proxy)},
        {"ucan.quant_block", UCAN_INT(std::size_t, ucan.quant_block)},
        {"ucan.ablation",
         Field{[](const RunConfig& c) { return c.ucan.ablation_tag(); },
               [](RunConfig& c, const std::string& k, const std::string& v) { c.ucan.ablations = parse_ablation(k, v); }}},
        {"baseline.method",
         Field{[](const RunConfig& c) { return to_string(c.baseline.method); },
               [](RunConfig& c, const std::string&, const std::string& v) { c.baseline.method = baseline_from_string(v); }}},
        {"baseline.lr", UCAN_DOUBLE(baseline.lr)},
        {"baseline.epochs", UCAN_INT(std::size_t, baseline.epochs)},
        {"baseline.batch_size", UCAN_INT(std::size_t, baseline.batch_size)},
        {"baseline.npo_beta", UCAN_DOUBLE(baseline.npo_beta)},
        {"baseline.prune_fraction", UCAN_DOUBLE(baseline.prune_fraction)},
        {"baseline.prune_tau",
         Field{[](const RunConfig& c) { return c.baseline.prune_tau ? num(*c.baseline.prune_tau) : std::string("none"); },
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "none") {
                       c.baseline.prune_tau.reset();
                   } else {
                       c.baseline.prune_tau = to_double(k, v);
                   }
               }}},
        {"baseline.divergence_factor", UCAN_DOUBLE(baseline.divergence_factor)},
        {"output_dir", UCAN_STR(output_dir)},
        {"seed", UCAN_INT(std::uint64_t, seed)},
    };
    return table;
}

#undef UCAN_DOUBLE
#undef UCAN_INT
#undef UCAN_BOOL
#undef UCAN_STR

bool in_lineage(const std::string& key) {
    return key == "dataset" || key == "seed" || key.starts_with("data.") || key.starts_with("synthetic.") ||
           key.starts_with("model.") || key.starts_with("train.");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto& table = fields();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key: " + key);
    it->second.set(*this, key, value);
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    load_text(text.str(), path.string());
}

void RunConfig::load_text(std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad section header");
            section = trim(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
        auto key = trim(std::string_view(t).substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        set(key, unquote(trim(std::string_view(t).substr(eq + 1))));
    }
}

void RunConfig::validate() const {
    if (dataset == "ml100k") {
        if (data_path.empty()) throw ConfigError("data.path: required when dataset = ml100k");
    } else if (dataset != "synthetic") {
        throw ConfigError("dataset: expected synthetic or ml100k, got `" + dataset + "`");
    }
    if (!(forget_fraction >= 0.0 && forget_fraction <= 1.0)) throw ConfigError("data.forget_fraction: must lie in [0,1]");
    if (template_len + 1 >= max_len + 1 || max_len <= template_len) {
        throw ConfigError("model.max_len: must exceed model.template_len");
    }
    if (template_len + 1 > static_cast<std::size_t>(shape.n_reserved)) {
        throw ConfigError("model.template_len: at most n_reserved - 1 template tokens are available");
    }
    if (train.batch_size == 0) throw ConfigError("train.batch_size: must be positive");
    if (!(train.lr > 0.0)) throw ConfigError("train.lr: must be positive");
    if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
    ucan.validate();
    baseline.validate();
}

std::map<std::string, std::string> RunConfig::to_map() const {
    std::map<std::string, std::string> out;
    for (const auto& [key, f] : fields()) out[key] = f.get(*this);
    return out;
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : to_map()) os << k << " = " << v << '\n';
    return os.str();
}

std::uint64_t RunConfig::lineage_hash() const {
    std::uint64_t h = fnv1a("ucan-lineage-v1");
    for (const auto& [k, v] : to_map()) {
        if (in_lineage(k)) h = fnv1a(k + "=" + v + "\n", h);
    }
    return h;
}

TemplateSpec RunConfig::template_spec() const {
    TemplateSpec t;
    t.n_reserved = shape.n_reserved;
    t.max_len = max_len;
    t.tokens.clear();
    for (std::size_t i = 0; i < template_len; ++i) t.tokens.push_back(static_cast<std::int32_t>(i + 1));
    return t;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    static constexpr char digits[] = "0123456789abcdef";
    for (int i = 15; i >= 0; --i) {
        buf[i] = digits[v & 0xf];
        v >>= 4;
    }
    buf[16] = '\0';
    return buf;
}

std::uint64_t content_hash(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    return fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::vector<Sample> Workload::all_train() const {
    std::vector<Sample> out = retain_train;
    out.insert(out.end(), forget_train.begin(), forget_train.end());
    return out;
}

Workload build_workload(const Split& split, std::size_t max_history) {
    const auto forget_seqs = user_sequences(split.forget);
    const auto retain_seqs = user_sequences(split.retain);
    Workload w;
    w.forget_train = prefix_samples(forget_seqs, max_history, 1);
    w.retain_train = prefix_samples(retain_seqs, max_history, 1);
    w.forget_queries = leave_one_out(forget_seqs, max_history);
    w.retain_queries = leave_one_out(retain_seqs, max_history);
    return w;
}

PreparedData prepare_data(const RunConfig& config) {
    config.validate();
    PreparedData out;
    if (config.dataset == "synthetic") {
        SyntheticSpec spec = config.synthetic;
        spec.seed = derive_seed(config.seed, "data");
        auto syn = generate_synthetic(spec);
        out.log = std::move(syn.log);
        out.split = forget_retain_split(out.log, syn.split);
        out.item_groups = std::move(syn.item_groups);
        out.name = "synthetic";
    } else {
        std::optional<std::filesystem::path> titles;
        if (!config.titles_path.empty()) titles = config.titles_path;
        out.log = load_ml100k(config.data_path, titles);
        if (config.five_core) out.log = five_core_filter(out.log);
        if (out.log.empty()) throw DataError("five-core filter left no interactions");
        out.split = forget_retain_split(out.log, {config.forget_fraction, derive_seed(config.seed, "split")});
        out.name = "ml100k";
    }
    return out;
}

ModelShape model_shape(const RunConfig& config, std::int32_t n_items) {
    ModelShape s = config.shape;
    s.n_items = n_items;
    return s;
}

}  // namespace ucan
