#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "wlas/common.hpp"

namespace wlas {

// Dense row-major array. Values are treated as immutable once an operation
// has produced them; mutation is reserved for owners (parameter updates,
// gradient accumulation).
template <typename Real>
class NDArray {
  public:
    NDArray() = default;

    explicit NDArray(std::vector<int> shape, Real fill = Real(0)) : shape_(std::move(shape)) {
        data_.assign(static_cast<std::size_t>(checked_size(shape_)), fill);
    }

    static NDArray from_data(std::vector<int> shape, std::vector<Real> data) {
        NDArray a;
        a.shape_ = std::move(shape);
        check(checked_size(a.shape_) == static_cast<std::int64_t>(data.size()),
              "NDArray: data length does not match shape product");
        a.data_ = std::move(data);
        return a;
    }

    static NDArray scalar(Real v) { return from_data({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::vector<Real>& vec() { return data_; }
    const std::vector<Real>& vec() const { return data_; }

    Real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    Real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    Real& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    Real at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }

    bool same_shape(const NDArray& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (Real v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    void add_in_place(const NDArray& o) {
        check(same_shape(o), "NDArray::add_in_place: shape mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    }

    template <typename Other>
    NDArray<Other> cast() const {
        std::vector<Other> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return NDArray<Other>::from_data(shape_, std::move(out));
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::string r = "(";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) r += ",";
            r += std::to_string(s[i]);
        }
        return r + ")";
    }
    std::string shape_str() const { return shape_str(shape_); }

  private:
    static std::int64_t checked_size(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            check(d > 0, "NDArray: extents must be positive, got shape " + shape_str(shape));
            n *= d;
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<Real> data_;
};

}  // namespace wlas
