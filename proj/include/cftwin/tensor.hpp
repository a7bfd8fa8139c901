#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cftwin/error.hpp"

namespace cftwin {

// Buffers start on the SIMD boundary so vectorised kernels take the same
// code path (and round identically) on every run.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

// Dense NCHW tensor. Vectors are stored as n x c x 1 x 1.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    Tensor(int n, int c, int h, int w, T fill = T(0))
        : shape_{n, c, h, w}, data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

    int n() const { return shape_[0]; }
    int c() const { return shape_[1]; }
    int h() const { return shape_[2]; }
    int w() const { return shape_[3]; }
    const std::array<int, 4>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Elements per batch entry.
    std::size_t sample_size() const { return static_cast<std::size_t>(shape_[1]) * shape_[2] * shape_[3]; }
    std::size_t plane_size() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T* sample(int i) { return data_.data() + i * sample_size(); }
    const T* sample(int i) const { return data_.data() + i * sample_size(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    AlignedVector<T>& storage() { return data_; }
    const AlignedVector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int in, int ic, int ih, int iw) {
        return data_[((static_cast<std::size_t>(in) * shape_[1] + ic) * shape_[2] + ih) * shape_[3] + iw];
    }
    const T& at(int in, int ic, int ih, int iw) const {
        return data_[((static_cast<std::size_t>(in) * shape_[1] + ic) * shape_[2] + ih) * shape_[3] + iw];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "tensor +=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    void require_same_shape(const Tensor& other, const char* where) const {
        if (!same_shape(other)) throw DomainError(std::string(where) + ": shape mismatch " + shape_string() + " vs " + other.shape_string());
    }

    std::string shape_string() const {
        return "[" + std::to_string(shape_[0]) + "," + std::to_string(shape_[1]) + "," + std::to_string(shape_[2]) + "," + std::to_string(shape_[3]) + "]";
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_[0], shape_[1], shape_[2], shape_[3]);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

private:
    std::array<int, 4> shape_{0, 0, 0, 0};
    AlignedVector<T> data_;
};

// Batch entries [first, first + count) as a new tensor.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, int first, int count) {
    Tensor<T> out(count, x.c(), x.h(), x.w());
    std::copy_n(x.sample(first), out.size(), out.data());
    return out;
}

// Channel-axis concatenation of two tensors with equal n, h, w.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
        throw DomainError("concat_channels: incompatible shapes " + a.shape_string() + " and " + b.shape_string());
    Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
    for (int i = 0; i < a.n(); ++i) {
        T* dst = out.sample(i);
        dst = std::copy_n(a.sample(i), a.sample_size(), dst);
        std::copy_n(b.sample(i), b.sample_size(), dst);
    }
    return out;
}

// Inverse of concat_channels for gradients: splits off the first `c_first` channels.
template <typename T>
void split_channels(const Tensor<T>& x, int c_first, Tensor<T>& first, Tensor<T>& second) {
    first = Tensor<T>(x.n(), c_first, x.h(), x.w());
    second = Tensor<T>(x.n(), x.c() - c_first, x.h(), x.w());
    for (int i = 0; i < x.n(); ++i) {
        const T* src = x.sample(i);
        std::copy_n(src, first.sample_size(), first.sample(i));
        std::copy_n(src + first.sample_size(), second.sample_size(), second.sample(i));
    }
}

}  // namespace cftwin
