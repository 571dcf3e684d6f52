#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ucan/tensor.hpp"

namespace ucan {

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Layout:
//   8 bytes  magic "UCANTNSR"
//   u32 LE   format version
//   u64 LE   header byte length
//   header   UTF-8 JSON {"meta": {...}, "tensors": [{"name","shape","dtype":"f32"}, ...]}
//   payload  little-endian f32 values of each tensor, in header order
struct TensorFile {
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    void add(std::string name, const Matrix& m);
    void add(std::string name, std::vector<float> v);

    [[nodiscard]] const NamedTensor& get(std::string_view name) const;
    [[nodiscard]] Matrix matrix(std::string_view name) const;

    [[nodiscard]] std::vector<std::uint8_t> serialize() const;
    [[nodiscard]] static TensorFile deserialize(const std::vector<std::uint8_t>& bytes);

    void save(const std::filesystem::path& path) const;
    [[nodiscard]] static TensorFile load(const std::filesystem::path& path);
};

[[nodiscard]] std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace ucan
