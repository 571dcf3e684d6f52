#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ucan/baselines.hpp"
#include "ucan/data.hpp"
#include "ucan/model.hpp"
#include "ucan/risk.hpp"

namespace ucan {

// Everything a run needs. Serializes to `key = value` lines; the same keys
// are accepted from config files (optionally grouped under `[section]`
// headers, which prefix the key with `section.`) and from `--set key=value`.
struct RunConfig {
    // dataset
    std::string dataset = "synthetic";  // "synthetic" or "ml100k"
    std::string data_path;              // u.data when dataset = ml100k
    std::string titles_path;            // optional u.item
    bool five_core = true;
    double forget_fraction = 0.25;
    SyntheticSpec synthetic;

    // model + template
    ModelShape shape;
    std::size_t template_len = 3;
    std::size_t max_len = 16;

    TrainHyper train;
    UcanConfig ucan;
    BaselineConfig baseline;

    std::string output_dir = "out";
    std::uint64_t seed = 7;

    // Applies one `key = value` setting; throws ConfigError naming the key.
    void set(const std::string& key, const std::string& value);
    void load_file(const std::filesystem::path& path);
    // Same format as a config file; `origin` prefixes error messages.
    void load_text(std::string_view text, const std::string& origin = "<text>");
    // Checks cross-field constraints; throws ConfigError naming the offending field.
    void validate() const;

    [[nodiscard]] std::map<std::string, std::string> to_map() const;
    [[nodiscard]] std::string to_text() const;

    // Hash of the settings that determine the deployed model (dataset, split,
    // model, training, seed). Artifacts of one lineage share it.
    [[nodiscard]] std::uint64_t lineage_hash() const;

    [[nodiscard]] TemplateSpec template_spec() const;
    [[nodiscard]] std::size_t max_history() const { return max_len - template_len; }
};

[[nodiscard]] std::string hex64(std::uint64_t v);
[[nodiscard]] std::uint64_t content_hash(const std::filesystem::path& path);

struct Workload {
    std::vector<Sample> forget_train;
    std::vector<Sample> retain_train;
    std::vector<Sample> forget_queries;
    std::vector<Sample> retain_queries;

    [[nodiscard]] std::vector<Sample> all_train() const;
};

// Training prefixes and leave-one-out queries of both sides; the last event
// of every per-user sequence is held out as its query target.
[[nodiscard]] Workload build_workload(const Split& split, std::size_t max_history);

struct PreparedData {
    InteractionLog log;
    Split split;
    std::string name;
    std::vector<std::int32_t> item_groups;  // empty when the dataset carries no item categories
};

// Loads or generates the dataset named by the config and splits it.
[[nodiscard]] PreparedData prepare_data(const RunConfig& config);

// Model shape with n_items filled from the data.
[[nodiscard]] ModelShape model_shape(const RunConfig& config, std::int32_t n_items);

}  // namespace ucan
