#include "mdtrack/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace mdtrack {

static std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

std::string Tensor::shape_str() const { return mdtrack::shape_str(shape_); }

Tensor Tensor::zeros(std::vector<int> shape, Dtype dt) {
    Tensor t;
    t.numel_ = shape_numel(shape);
    t.shape_ = std::move(shape);
    t.dtype_ = dt;
    t.buf_ = std::make_shared<std::vector<std::byte>>(
        static_cast<std::size_t>(t.numel_) * dtype_size(dt), std::byte{0});
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        T* p = t.data<T>();
        for (std::int64_t i = 0; i < t.numel_; ++i) p[i] = static_cast<T>(value);
    });
    return t;
}

Tensor Tensor::from(std::vector<int> shape, const std::vector<double>& values, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    if (static_cast<std::int64_t>(values.size()) != t.numel_)
        throw ShapeError("value count " + std::to_string(values.size()) + " does not fill " +
                         t.shape_str());
    for (std::int64_t i = 0; i < t.numel_; ++i) t.set(i, values[static_cast<std::size_t>(i)]);
    return t;
}

double Tensor::at(std::int64_t i) const {
    if (!buf_ || i < 0 || i >= numel_) throw ContractError("tensor index out of range");
    if (dtype_ == Dtype::F32) return static_cast<double>(reinterpret_cast<const float*>(buf_->data())[i]);
    return reinterpret_cast<const double*>(buf_->data())[i];
}

void Tensor::set(std::int64_t i, double v) {
    if (!buf_ || i < 0 || i >= numel_) throw ContractError("tensor index out of range");
    if (dtype_ == Dtype::F32)
        reinterpret_cast<float*>(buf_->data())[i] = static_cast<float>(v);
    else
        reinterpret_cast<double*>(buf_->data())[i] = v;
}

Tensor Tensor::clone() const {
    if (!buf_) return Tensor();
    Tensor t = zeros(shape_, dtype_);
    std::memcpy(t.buf_->data(), buf_->data(), buf_->size());
    return t;
}

Tensor Tensor::astype(Dtype dt) const {
    if (dt == dtype_) return clone();
    Tensor t = zeros(shape_, dt);
    for (std::int64_t i = 0; i < numel_; ++i) t.set(i, at(i));
    return t;
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    if (shape_numel(new_shape) != numel_)
        throw ShapeError("reshape " + shape_str() + " -> " + mdtrack::shape_str(new_shape) +
                         " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
}

bool Tensor::all_finite() const {
    if (!buf_) return true;
    bool ok = true;
    dispatch(dtype_, [&](auto tag) {
        using T = decltype(tag);
        const T* p = data<T>();
        for (std::int64_t i = 0; i < numel_; ++i)
            if (!std::isfinite(static_cast<double>(p[i]))) {
                ok = false;
                return;
            }
    });
    return ok;
}

}  // namespace mdtrack
