#include "ucan/tensor.hpp"

#include <cmath>

namespace ucan {

void matvec(const Matrix& m, std::span<const float> x, std::span<float> y) {
    check_dim(x.size(), m.cols, "matvec input");
    check_dim(y.size(), m.rows, "matvec output");
    for (std::size_t r = 0; r < m.rows; ++r) {
        const float* w = m.data.data() + r * m.cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) acc += static_cast<double>(w[c]) * x[c];
        y[r] = static_cast<float>(acc);
    }
}

void matvec_t_add(const Matrix& m, std::span<const float> x, std::span<float> y) {
    check_dim(x.size(), m.rows, "matvec_t input");
    check_dim(y.size(), m.cols, "matvec_t output");
    for (std::size_t r = 0; r < m.rows; ++r) {
        const float xr = x[r];
        if (xr == 0.0f) continue;
        const float* w = m.data.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += w[c] * xr;
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_dim(b.rows, a.cols, "matmul inner");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                out(i, j) = static_cast<float>(out(i, j) + aik * b(k, j));
            }
        }
    }
    return out;
}

double l2_norm(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

}  // namespace ucan
