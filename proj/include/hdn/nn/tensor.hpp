#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hdn::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream oss;
    oss << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) oss << " x ";
        oss << shape[i];
    }
    oss << ']';
    return oss.str();
}

// Dense row-major tensor. Rank-2 tensors are laid out [channels x time] throughout
// the library, so a channel's time series is contiguous.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    std::vector<T>& vec() noexcept { return data_; }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    T& at(std::size_t a, std::size_t b, std::size_t c) noexcept {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }
    const T& at(std::size_t a, std::size_t b, std::size_t c) const noexcept {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }

    T* row(std::size_t r) noexcept { return data_.data() + r * shape_.back(); }
    const T* row(std::size_t r) const noexcept { return data_.data() + r * shape_.back(); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void reshape(Shape shape) {
        if (shape_numel(shape) != data_.size()) {
            throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        shape_ = std::move(shape);
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    Tensor& operator+=(const Tensor& o) {
        check_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    void check_same(const Tensor& o, const char* what) const {
        if (shape_ != o.shape_) {
            throw std::invalid_argument(std::string("shape mismatch in ") + what + ": " + shape_str(shape_) +
                                        " vs " + shape_str(o.shape_));
        }
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t) {
    return Tensor<T>(t.shape());
}

}  // namespace hdn::nn
