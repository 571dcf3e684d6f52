#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ucan/data.hpp"
#include "ucan/model.hpp"
#include "ucan/rng.hpp"

namespace fixture {

// Tiny two-layer model with a non-zero W_B, so the adapter delta is live.
inline ucan::AdapterModel small_model(std::uint64_t seed, ucan::Activation act = ucan::Activation::Relu,
                                      std::int32_t n_items = 12) {
    ucan::ModelShape s;
    s.n_items = n_items;
    s.embed_dim = 6;
    s.hidden_dim = 8;
    s.n_layers = 2;
    s.rank = 2;
    s.activation = act;
    auto m = ucan::init_model(s, seed);
    ucan::Rng rng(ucan::derive_seed(seed, "fixture.lora_b"));
    for (auto& layer : m.layers)
        for (auto& v : layer.lora_b.data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    return m;
}

// Histories drawn from [lo, hi); lengths in [min_len, max_len].
inline std::vector<ucan::Sample> samples(std::uint64_t seed, std::size_t n, std::int32_t lo, std::int32_t hi,
                                         std::size_t min_len = 1, std::size_t max_len = 6) {
    ucan::Rng rng(seed);
    std::vector<ucan::Sample> out(n);
    for (auto& s : out) {
        const auto len = min_len + rng.below(max_len - min_len + 1);
        for (std::size_t i = 0; i < len; ++i) s.history.push_back(lo + static_cast<std::int32_t>(rng.below(hi - lo)));
        s.target = lo + static_cast<std::int32_t>(rng.below(hi - lo));
    }
    return out;
}

inline ucan::TemplateSpec small_template() {
    ucan::TemplateSpec t;
    t.tokens = {1, 2};
    t.n_reserved = 4;
    t.max_len = 10;
    return t;
}

// Scratch directory unique to the running test binary.
inline std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("ucan_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace fixture
