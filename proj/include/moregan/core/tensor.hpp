#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "moregan/core/error.hpp"

namespace moregan {

/// NCHW extents. Matrices are stored as [n, 1, rows, cols].
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
        return os.str();
    }
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* where) {
    if (!(a == b)) {
        throw InvalidArgument(std::string(where) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

/// Allocator handing out cache-line aligned blocks. The GEMM kernels pick their
/// vector peeling from the buffer address, so a fixed alignment is what keeps
/// two runs with the same seed bit-identical.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t alignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t count) {
        return static_cast<T*>(::operator new(count * sizeof(T), std::align_val_t{alignment}));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{alignment}); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major NCHW buffer with value semantics.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {
        if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0) {
            throw InvalidArgument("tensor extents must be positive, got " + shape.str());
        }
    }
    Tensor(Shape shape, AlignedVector<T> values) : shape_(shape), data_(std::move(values)) {
        if (data_.size() != shape.numel()) {
            throw InvalidArgument("tensor buffer size does not match " + shape.str());
        }
    }
    Tensor(Shape shape, const std::vector<T>& values) : shape_(shape), data_(values.begin(), values.end()) {
        if (data_.size() != shape.numel()) {
            throw InvalidArgument("tensor buffer size does not match " + shape.str());
        }
    }

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    AlignedVector<T>& storage() { return data_; }
    const AlignedVector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t offset(int in, int ic, int ih, int iw) const {
        return ((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + ih) * shape_.w + iw;
    }
    T& at(int in, int ic, int ih, int iw) { return data_[offset(in, ic, ih, iw)]; }
    const T& at(int in, int ic, int ih, int iw) const { return data_[offset(in, ic, ih, iw)]; }

    /// Pointer to the (n, c) plane.
    T* plane(int in, int ic) { return data_.data() + offset(in, ic, 0, 0); }
    const T* plane(int in, int ic) const { return data_.data() + offset(in, ic, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Reinterpret the extents; element count must match.
    Tensor reshaped(Shape s) const {
        if (s.numel() != data_.size()) {
            throw InvalidArgument("reshape " + shape_.str() + " -> " + s.str());
        }
        Tensor out;
        out.shape_ = s;
        out.data_ = data_;
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        AlignedVector<U> v(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(v));
    }

    T max() const { return *std::max_element(data_.begin(), data_.end()); }
    T min() const { return *std::min_element(data_.begin(), data_.end()); }
    double mean() const {
        double s = 0.0;
        for (T v : data_) s += static_cast<double>(v);
        return data_.empty() ? 0.0 : s / static_cast<double>(data_.size());
    }
    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
    }

    /// Sample `in` of a batch as a standalone [1,C,H,W] tensor.
    Tensor slice_batch(int in) const {
        Shape s{1, shape_.c, shape_.h, shape_.w};
        auto first = data_.begin() + static_cast<std::ptrdiff_t>(in * s.numel());
        return Tensor(s, AlignedVector<T>(first, first + static_cast<std::ptrdiff_t>(s.numel())));
    }

private:
    Shape shape_{0, 0, 0, 0};
    AlignedVector<T> data_;
};

/// Stack [1,C,H,W] tensors into one batch.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw InvalidArgument("stack_batch: empty list");
    Shape s = items.front().shape();
    for (const auto& t : items) {
        if (t.n() != 1 || t.c() != s.c || t.h() != s.h || t.w() != s.w) {
            throw InvalidArgument("stack_batch: inconsistent item shape " + t.shape().str());
        }
    }
    Shape out_shape{static_cast<int>(items.size()), s.c, s.h, s.w};
    AlignedVector<T> data;
    data.reserve(out_shape.numel());
    for (const auto& t : items) data.insert(data.end(), t.storage().begin(), t.storage().end());
    return Tensor<T>(out_shape, std::move(data));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

}  // namespace moregan
