#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rdd {

/// NCHW extents. Matrices are stored as [rows, cols, 1, 1].
struct Shape {
    int n = 0;
    int c = 0;
    int h = 1;
    int w = 1;

    std::size_t numel() const { return std::size_t(n) * c * h * w; }
    std::size_t per_item() const { return std::size_t(c) * h * w; }
    int spatial() const { return h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense float32 tensor in NCHW layout with value semantics.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> span() { return data_; }
    std::span<const float> span() const { return data_; }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    float at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

    /// Pointer to the start of batch item `n`.
    float* item(int n) { return data_.data() + std::size_t(n) * shape_.per_item(); }
    const float* item(int n) const { return data_.data() + std::size_t(n) * shape_.per_item(); }

    /// Copy of batch items [first, first + count).
    Tensor slice(int first, int count) const;
    /// Gather batch items by index.
    Tensor gather(std::span<const int> indices) const;

    void fill(float v);
    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(float s);

    Tensor reshaped(Shape shape) const;

  private:
    std::size_t offset(int n, int c, int h, int w) const {
        return ((std::size_t(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    Shape shape_{};
    std::vector<float> data_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

} // namespace rdd
