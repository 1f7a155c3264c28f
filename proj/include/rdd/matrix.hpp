#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rdd {

/// Row-major dense double matrix used on the loss side of the pipeline.
class Matrix {
  public:
    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(std::size_t(rows) * cols, fill) {}
    Matrix(int rows, int cols, std::vector<double> data);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(int r, int c) { return data_[std::size_t(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[std::size_t(r) * cols_ + c]; }

    std::span<double> row(int r) { return {data_.data() + std::size_t(r) * cols_, std::size_t(cols_)}; }
    std::span<const double> row(int r) const {
        return {data_.data() + std::size_t(r) * cols_, std::size_t(cols_)};
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    Matrix transposed() const;
    Matrix& operator+=(const Matrix& other);
    Matrix& operator*=(double s);

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

double max_abs_diff(const Matrix& a, const Matrix& b);

} // namespace rdd
