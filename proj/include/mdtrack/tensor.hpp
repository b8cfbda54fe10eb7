#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mdtrack/common.hpp"

namespace mdtrack {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

inline std::size_t dtype_size(Dtype dt) { return dt == Dtype::F32 ? 4 : 8; }
inline const char* dtype_name(Dtype dt) { return dt == Dtype::F32 ? "f32" : "f64"; }

// Dense row-major n-d array. Copies are cheap (the element buffer is
// shared); operations always allocate fresh buffers, so a tensor is
// immutable once it has left the function that produced it. In-place
// mutation through data<T>() is reserved for owners of freshly created
// or exclusively held tensors (initialization, the optimizer, IO).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, Dtype dt);
    static Tensor full(std::vector<int> shape, double value, Dtype dt);
    static Tensor from(std::vector<int> shape, const std::vector<double>& values, Dtype dt);

    bool defined() const { return buf_ != nullptr; }
    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const { return numel_; }
    Dtype dtype() const { return dtype_; }

    template <typename T>
    T* data() {
        check_type<T>();
        return reinterpret_cast<T*>(buf_->data());
    }
    template <typename T>
    const T* data() const {
        check_type<T>();
        return reinterpret_cast<const T*>(buf_->data());
    }

    // Dtype-erased scalar access; slow path for tests and IO.
    double at(std::int64_t i) const;
    void set(std::int64_t i, double v);

    Tensor clone() const;
    Tensor astype(Dtype dt) const;
    // Shares the buffer; element count must match.
    Tensor reshaped(std::vector<int> new_shape) const;

    bool all_finite() const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    const void* raw() const { return buf_ ? buf_->data() : nullptr; }
    void* raw() { return buf_ ? buf_->data() : nullptr; }
    std::size_t byte_size() const { return static_cast<std::size_t>(numel_) * dtype_size(dtype_); }

private:
    template <typename T>
    void check_type() const {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        if (!buf_) throw ContractError("access to undefined tensor");
        if ((std::is_same_v<T, float> && dtype_ != Dtype::F32) ||
            (std::is_same_v<T, double> && dtype_ != Dtype::F64))
            throw ContractError("tensor dtype mismatch");
    }

    std::vector<int> shape_;
    Dtype dtype_ = Dtype::F32;
    std::int64_t numel_ = 0;
    std::shared_ptr<std::vector<std::byte>> buf_;
};

std::string shape_str(const std::vector<int>& shape);

// Invokes f with a value of the tensor's element type as a tag:
// dispatch(dt, [&](auto tag) { using T = decltype(tag); ... });
template <typename F>
decltype(auto) dispatch(Dtype dt, F&& f) {
    if (dt == Dtype::F32) return f(float{});
    return f(double{});
}

}  // namespace mdtrack
