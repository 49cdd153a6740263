#include "zorn/numerics.hpp"

#include <vector>

namespace zorn {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: dimension mismatch (" + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()) + ") * (" +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     ")");
  }
  Matrix c(a.rows(), b.cols());
  // Row of float64 accumulators; the inner j-loop vectorizes while each
  // element still sums its k-terms in ascending order.
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (auto& v : acc) v = 0.0;
    const float* arow = a.data() + i * a.cols();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = static_cast<double>(arow[k]);
      const float* brow = b.data() + k * b.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) {
        acc[j] += aik * static_cast<double>(brow[j]);
      }
    }
    float* crow = c.data() + i * c.cols();
    for (std::size_t j = 0; j < b.cols(); ++j) {
      crow[j] = static_cast<float>(acc[j]);
    }
  }
  return c;
}

double reduce_sum_f64(std::span<const float> xs) {
  double sum = 0.0;
  for (const float x : xs) sum += static_cast<double>(x);
  return sum;
}

}  // namespace zorn
