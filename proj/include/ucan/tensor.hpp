#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ucan/errors.hpp"

namespace ucan {

using Vec = std::vector<float>;

// Dense row-major float matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}

    [[nodiscard]] float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    [[nodiscard]] float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    [[nodiscard]] std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    [[nodiscard]] std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    [[nodiscard]] bool empty() const noexcept { return data.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

// y = M x
void matvec(const Matrix& m, std::span<const float> x, std::span<float> y);
// y += M^T x
void matvec_t_add(const Matrix& m, std::span<const float> x, std::span<float> y);
// A (rows x k) * B (k x cols)
[[nodiscard]] Matrix matmul(const Matrix& a, const Matrix& b);

[[nodiscard]] double l2_norm(std::span<const float> v);

inline void check_dim(std::size_t got, std::size_t want, const char* what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": expected " + std::to_string(want) + ", got " +
                             std::to_string(got));
    }
}

}  // namespace ucan
