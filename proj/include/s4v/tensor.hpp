#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "s4v/common.hpp"

namespace s4v {

enum class DType : uint8_t { F32 = 0, F64 = 1 };

inline size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }
inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

int64_t shape_numel(const std::vector<int64_t>& shape);
std::vector<int64_t> row_major_strides(const std::vector<int64_t>& shape);

// One contiguous buffer. Tensors produced by reshape share the storage of
// their source; the tape deduplicates saved-for-backward accounting by
// storage identity. `persistent` marks parameter/state buffers that live
// across steps and therefore do not count as activation memory.
struct Storage {
    std::vector<std::byte> bytes;
    bool persistent = false;
};

struct TensorImpl {
    std::vector<int64_t> shape;
    DType dtype = DType::F32;
    std::shared_ptr<Storage> storage;
    bool requires_grad = false;
    // index of the producing tape node in the currently bound tape, -1 for
    // leaves and constants
    int64_t producer = -1;
    std::shared_ptr<Storage> grad;  // materialized lazily, same shape/dtype
};

// Dense multi-dimensional array. Values are immutable once they enter the
// tape; the exceptions are gradient accumulation and explicit parameter
// updates between steps.
class Tensor {
public:
    Tensor() = default;

    static Tensor empty(std::vector<int64_t> shape, DType dt);
    static Tensor zeros(std::vector<int64_t> shape, DType dt);
    static Tensor full(std::vector<int64_t> shape, double value, DType dt);
    static Tensor from_values(std::vector<int64_t> shape, std::span<const double> values, DType dt);
    static Tensor from_values(std::vector<int64_t> shape, std::initializer_list<double> values,
                              DType dt) {
        return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                           dt);
    }
    static Tensor scalar(double value, DType dt);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int64_t>& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t dim(int i) const;  // supports negative indices
    int64_t numel() const;
    DType dtype() const { return impl_->dtype; }
    size_t nbytes() const { return impl_->storage->bytes.size(); }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool v);
    bool persistent() const { return impl_->storage->persistent; }
    void set_persistent(bool v) { impl_->storage->persistent = v; }
    int64_t producer() const { return impl_->producer; }

    float* f32();
    const float* f32() const;
    double* f64();
    const double* f64() const;
    void* raw() { return impl_->storage->bytes.data(); }
    const void* raw() const { return impl_->storage->bytes.data(); }

    double read(int64_t flat_index) const;
    void write(int64_t flat_index, double value);
    double item() const;

    // gradient buffer, shared with this tensor's impl; undefined Tensor if absent
    Tensor grad() const;
    void accumulate_grad(const Tensor& g);
    void reset_grad() { impl_->grad.reset(); }

    Tensor clone() const;
    Tensor detach() const;  // shares storage, drops grad linkage
    Tensor to(DType dt) const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    const Storage* storage_key() const { return impl_->storage.get(); }
    bool same_storage(const Tensor& other) const { return storage_key() == other.storage_key(); }

    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

bool all_finite(const Tensor& t);

}  // namespace s4v
