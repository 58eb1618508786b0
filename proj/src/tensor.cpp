#include "s4v/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace s4v {

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::vector<int64_t> row_major_strides(const std::vector<int64_t>& shape) {
    std::vector<int64_t> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        strides[i] = strides[i + 1] * shape[i + 1];
    return strides;
}

Tensor Tensor::empty(std::vector<int64_t> shape, DType dt) {
    auto impl = std::make_shared<TensorImpl>();
    int64_t n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->dtype = dt;
    impl->storage = std::make_shared<Storage>();
    impl->storage->bytes.resize(static_cast<size_t>(n) * dtype_size(dt));
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<int64_t> shape, DType dt) {
    Tensor t = empty(std::move(shape), dt);
    std::memset(t.raw(), 0, t.nbytes());
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, DType dt) {
    Tensor t = empty(std::move(shape), dt);
    int64_t n = t.numel();
    if (dt == DType::F32) {
        float v = static_cast<float>(value);
        float* p = t.f32();
        for (int64_t i = 0; i < n; ++i) p[i] = v;
    } else {
        double* p = t.f64();
        for (int64_t i = 0; i < n; ++i) p[i] = value;
    }
    return t;
}

Tensor Tensor::from_values(std::vector<int64_t> shape, std::span<const double> values, DType dt) {
    Tensor t = empty(std::move(shape), dt);
    if (t.numel() != static_cast<int64_t>(values.size()))
        throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(t.shape()));
    for (int64_t i = 0; i < t.numel(); ++i) t.write(i, values[static_cast<size_t>(i)]);
    return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

int64_t Tensor::dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("axis out of range for shape " + shape_str(shape()));
    return impl_->shape[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const { return shape_numel(impl_->shape); }

float* Tensor::f32() {
    if (dtype() != DType::F32) throw ShapeError("tensor is not f32");
    return reinterpret_cast<float*>(impl_->storage->bytes.data());
}
const float* Tensor::f32() const {
    if (dtype() != DType::F32) throw ShapeError("tensor is not f32");
    return reinterpret_cast<const float*>(impl_->storage->bytes.data());
}
double* Tensor::f64() {
    if (dtype() != DType::F64) throw ShapeError("tensor is not f64");
    return reinterpret_cast<double*>(impl_->storage->bytes.data());
}
const double* Tensor::f64() const {
    if (dtype() != DType::F64) throw ShapeError("tensor is not f64");
    return reinterpret_cast<const double*>(impl_->storage->bytes.data());
}

double Tensor::read(int64_t i) const {
    return dtype() == DType::F32 ? static_cast<double>(f32()[i]) : f64()[i];
}

void Tensor::write(int64_t i, double v) {
    if (dtype() == DType::F32)
        f32()[i] = static_cast<float>(v);
    else
        f64()[i] = v;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    return read(0);
}

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}

Tensor Tensor::grad() const {
    if (!impl_->grad) return {};
    auto g = std::make_shared<TensorImpl>();
    g->shape = impl_->shape;
    g->dtype = impl_->dtype;
    g->storage = impl_->grad;
    return Tensor(std::move(g));
}

void Tensor::accumulate_grad(const Tensor& g) {
    if (g.shape() != shape() || g.dtype() != dtype())
        throw ShapeError("gradient shape/dtype mismatch: " + shape_str(g.shape()) + " vs " +
                         shape_str(shape()));
    if (!impl_->grad) {
        impl_->grad = std::make_shared<Storage>();
        impl_->grad->bytes.assign(nbytes(), std::byte{0});
    }
    int64_t n = numel();
    if (dtype() == DType::F32) {
        auto* dst = reinterpret_cast<float*>(impl_->grad->bytes.data());
        const float* src = g.f32();
        for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
    } else {
        auto* dst = reinterpret_cast<double*>(impl_->grad->bytes.data());
        const double* src = g.f64();
        for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }
}

Tensor Tensor::clone() const {
    Tensor t = empty(impl_->shape, impl_->dtype);
    std::memcpy(t.raw(), raw(), nbytes());
    return t;
}

Tensor Tensor::detach() const {
    auto d = std::make_shared<TensorImpl>();
    d->shape = impl_->shape;
    d->dtype = impl_->dtype;
    d->storage = impl_->storage;
    return Tensor(std::move(d));
}

Tensor Tensor::to(DType dt) const {
    if (dt == dtype()) return clone();
    Tensor t = empty(impl_->shape, dt);
    for (int64_t i = 0; i < numel(); ++i) t.write(i, read(i));
    return t;
}

bool all_finite(const Tensor& t) {
    int64_t n = t.numel();
    if (t.dtype() == DType::F32) {
        const float* p = t.f32();
        for (int64_t i = 0; i < n; ++i)
            if (!std::isfinite(p[i])) return false;
    } else {
        const double* p = t.f64();
        for (int64_t i = 0; i < n; ++i)
            if (!std::isfinite(p[i])) return false;
    }
    return true;
}

}  // namespace s4v
