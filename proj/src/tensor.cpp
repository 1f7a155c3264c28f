#include "rdd/tensor.hpp"

#include "rdd/error.hpp"
#include "rdd/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rdd {

std::string Shape::str() const {
    std::ostringstream os;
    os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    RDD_REQUIRE(data_.size() == shape_.numel(), "data size does not match shape " + shape_.str());
}

Tensor Tensor::slice(int first, int count) const {
    RDD_REQUIRE(first >= 0 && count >= 0 && first + count <= shape_.n, "slice out of range");
    Shape s = shape_;
    s.n = count;
    const auto begin = data_.begin() + std::ptrdiff_t(first * shape_.per_item());
    return Tensor(s, std::vector<float>(begin, begin + std::ptrdiff_t(count * shape_.per_item())));
}

Tensor Tensor::gather(std::span<const int> indices) const {
    Shape s = shape_;
    s.n = int(indices.size());
    Tensor out(s);
    const std::size_t stride = shape_.per_item();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        RDD_REQUIRE(indices[i] >= 0 && indices[i] < shape_.n, "gather index out of range");
        std::copy_n(item(indices[i]), stride, out.item(int(i)));
    }
    return out;
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
    RDD_REQUIRE(shape_ == other.shape_, "shape mismatch " + shape_.str() + " vs " + other.shape_.str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(float s) {
    for (float& v : data_) v *= s;
    return *this;
}

Tensor Tensor::reshaped(Shape shape) const {
    RDD_REQUIRE(shape.numel() == shape_.numel(), "reshape changes element count");
    return Tensor(shape, data_);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    RDD_REQUIRE(a.shape() == b.shape(), "shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.vec().begin(), t.vec().end(), [](float v) { return std::isfinite(v); });
}

Matrix::Matrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    RDD_REQUIRE(data_.size() == std::size_t(rows) * cols, "data size does not match shape");
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (int r = 0; r < rows_; ++r) {
        for (int c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    }
    return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    RDD_REQUIRE(same_shape(other), "shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    RDD_REQUIRE(a.same_shape(b), "shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.vec()[i] - b.vec()[i]));
    return m;
}

SingularTarget::SingularTarget(double t_, double t_target_, double denominator_)
    : Error("singular progressive-distillation target at t=" + std::to_string(t_) +
            " -> t''=" + std::to_string(t_target_) +
            " (denominator " + std::to_string(denominator_) + ")"),
      t(t_), t_target(t_target_), denominator(denominator_) {}

} // namespace rdd
