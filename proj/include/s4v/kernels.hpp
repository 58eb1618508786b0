#pragma once

#include <cstdint>
#include <vector>

// Low-level dense kernels. Every kernel exists twice: kernels::par (OpenMP)
// and kernels::ref (plain serial loops, kept as the reference the tests and
// the benchmark compare against). Both backends are required to produce
// bit-identical results: parallel loops only partition independent output
// elements, and every floating-point reduction runs in one fixed order that
// does not depend on the thread count. Scalar full reductions use a fixed
// 8192-element chunk tree; the chunk partials are combined in ascending
// chunk order by both backends.
namespace s4v::kernels {

bool parallel_enabled();
void set_parallel(bool on);
int max_threads();

enum class MM {
    NN,  // C[m,n] = A[m,k] * B[k,n]
    NT,  // C[m,n] = A[m,k] * B[n,k]^T
    TN,  // C[m,n] = A[k,m]^T * B[k,n]
};

constexpr int64_t kReduceChunk = 8192;

namespace ref {

// Batched matmul. a_bs/b_bs are per-batch element strides (0 broadcasts the
// operand across the batch). c_bs == 0 sums the batch into a single m*n
// output; each output element is then a flat running sum over (batch, p).
template <typename T>
void matmul(MM mode, int64_t batch, int64_t m, int64_t n, int64_t k, const T* a, int64_t a_bs,
            const T* b, int64_t b_bs, T* c, int64_t c_bs);

template <typename T>
void add(const T* a, const T* b, T* out, int64_t n);
template <typename T>
void mul(const T* a, const T* b, T* out, int64_t n);
// broadcast variants: element i of out reads a[a_index(i)], b[b_index(i)]
// where the index maps are given by per-axis strides over the out shape
template <typename T>
void binary_broadcast(const T* a, const T* b, T* out, const int64_t* out_shape,
                      const int64_t* a_strides, const int64_t* b_strides, int rank, bool is_mul);
template <typename T>
void scale(const T* x, double s, T* out, int64_t n);
template <typename T>
void axpy(const T* x, double s, T* out, int64_t n);  // out += s*x

template <typename T>
void gelu_fwd(const T* x, T* out, int64_t n);
template <typename T>
void gelu_bwd(const T* x, const T* gout, T* gx, int64_t n);
template <typename T>
void exp_fwd(const T* x, T* out, int64_t n);

template <typename T>
void softmax_rows(const T* x, T* out, int64_t rows, int64_t cols);
template <typename T>
void softmax_bwd_rows(const T* y, const T* gout, T* gx, int64_t rows, int64_t cols);
template <typename T>
void log_softmax_rows(const T* x, T* out, int64_t rows, int64_t cols);
template <typename T>
void log_softmax_bwd_rows(const T* y, const T* gout, T* gx, int64_t rows, int64_t cols);

template <typename T>
void layernorm_rows(const T* x, const T* gamma, const T* beta, double eps, T* out, T* xhat,
                    T* rstd, int64_t rows, int64_t cols);
template <typename T>
void layernorm_bwd_rows(const T* xhat, const T* rstd, const T* gamma, const T* gout, T* gx,
                        T* ggamma, T* gbeta, int64_t rows, int64_t cols);

template <typename T>
void l2norm_rows(const T* x, double eps, T* out, T* inv_norm, int64_t rows, int64_t cols);
template <typename T>
void l2norm_bwd_rows(const T* y, const T* inv_norm, const T* gout, T* gx, int64_t rows,
                     int64_t cols);

// channel statistics over an [m, c] view (m = pooled positions)
template <typename T>
void channel_stats(const T* x, int64_t m, int64_t c, T* mean, T* var);
template <typename T>
void batchnorm_fwd(const T* x, const T* mean, const T* var, const T* gamma, const T* beta,
                   double eps, T* out, T* xhat, T* rstd, int64_t m, int64_t c);
template <typename T>
void batchnorm_bwd(const T* xhat, const T* rstd, const T* gamma, const T* gout, bool batch_stats,
                   T* gx, T* ggamma, T* gbeta, int64_t m, int64_t c);

// depthwise temporal convolution, kernel 3, zero padding; x,out: [b,t,n,c], w: [c,3]
template <typename T>
void conv_temporal_fwd(const T* x, const T* w, T* out, int64_t b, int64_t t, int64_t n, int64_t c);
template <typename T>
void conv_temporal_bwd_x(const T* gout, const T* w, T* gx, int64_t b, int64_t t, int64_t n,
                         int64_t c);
template <typename T>
void conv_temporal_bwd_w(const T* gout, const T* x, T* gw, int64_t b, int64_t t, int64_t n,
                         int64_t c);

template <typename T>
T sum_all(const T* x, int64_t n);
// sum over one axis: x viewed as [outer, axis, inner]
template <typename T>
void sum_axis(const T* x, T* out, int64_t outer, int64_t axis, int64_t inner);
// sum x (out_shape-sized) down to target described by per-axis strides
template <typename T>
void reduce_to(const T* x, T* out, const int64_t* x_shape, const int64_t* out_strides, int rank,
               int64_t out_numel);

// gather-style copy: out[i] = x[index_map(i)] with index map given by strides
template <typename T>
void permute_copy(const T* x, T* out, const int64_t* out_shape, const int64_t* src_strides,
                  int rank);

// AdamW fused update (decoupled weight decay, bias-corrected moments)
template <typename T>
void adamw_update(T* p, const T* g, T* m, T* v, int64_t n, double lr, double beta1, double beta2,
                  double eps, double weight_decay, int64_t step);

}  // namespace ref

namespace par {

template <typename T>
void matmul(MM mode, int64_t batch, int64_t m, int64_t n, int64_t k, const T* a, int64_t a_bs,
            const T* b, int64_t b_bs, T* c, int64_t c_bs);
template <typename T>
void add(const T* a, const T* b, T* out, int64_t n);
template <typename T>
void mul(const T* a, const T* b, T* out, int64_t n);
template <typename T>
void binary_broadcast(const T* a, const T* b, T* out, const int64_t* out_shape,
                      const int64_t* a_strides, const int64_t* b_strides, int rank, bool is_mul);
template <typename T>
void scale(const T* x, double s, T* out, int64_t n);
template <typename T>
void axpy(const T* x, double s, T* out, int64_t n);
template <typename T>
void gelu_fwd(const T* x, T* out, int64_t n);
template <typename T>
void gelu_bwd(const T* x, const T* gout, T* gx, int64_t n);
template <typename T>
void exp_fwd(const T* x, T* out, int64_t n);
template <typename T>
void softmax_rows(const T* x, T* out, int64_t rows, int64_t cols);
template <typename T>
void softmax_bwd_rows(const T* y, const T* gout, T* gx, int64_t rows, int64_t cols);
template <typename T>
void log_softmax_rows(const T* x, T* out, int64_t rows, int64_t cols);
template <typename T>
void log_softmax_bwd_rows(const T* y, const T* gout, T* gx, int64_t rows, int64_t cols);
template <typename T>
void layernorm_rows(const T* x, const T* gamma, const T* beta, double eps, T* out, T* xhat,
                    T* rstd, int64_t rows, int64_t cols);
template <typename T>
void layernorm_bwd_rows(const T* xhat, const T* rstd, const T* gamma, const T* gout, T* gx,
                        T* ggamma, T* gbeta, int64_t rows, int64_t cols);
template <typename T>
void l2norm_rows(const T* x, double eps, T* out, T* inv_norm, int64_t rows, int64_t cols);
template <typename T>
void l2norm_bwd_rows(const T* y, const T* inv_norm, const T* gout, T* gx, int64_t rows,
                     int64_t cols);
template <typename T>
void channel_stats(const T* x, int64_t m, int64_t c, T* mean, T* var);
template <typename T>
void batchnorm_fwd(const T* x, const T* mean, const T* var, const T* gamma, const T* beta,
                   double eps, T* out, T* xhat, T* rstd, int64_t m, int64_t c);
template <typename T>
void batchnorm_bwd(const T* xhat, const T* rstd, const T* gamma, const T* gout, bool batch_stats,
                   T* gx, T* ggamma, T* gbeta, int64_t m, int64_t c);
template <typename T>
void conv_temporal_fwd(const T* x, const T* w, T* out, int64_t b, int64_t t, int64_t n, int64_t c);
template <typename T>
void conv_temporal_bwd_x(const T* gout, const T* w, T* gx, int64_t b, int64_t t, int64_t n,
                         int64_t c);
template <typename T>
void conv_temporal_bwd_w(const T* gout, const T* x, T* gw, int64_t b, int64_t t, int64_t n,
                         int64_t c);
template <typename T>
T sum_all(const T* x, int64_t n);
template <typename T>
void sum_axis(const T* x, T* out, int64_t outer, int64_t axis, int64_t inner);
template <typename T>
void reduce_to(const T* x, T* out, const int64_t* x_shape, const int64_t* out_strides, int rank,
               int64_t out_numel);
template <typename T>
void permute_copy(const T* x, T* out, const int64_t* out_shape, const int64_t* src_strides,
                  int rank);
template <typename T>
void adamw_update(T* p, const T* g, T* m, T* v, int64_t n, double lr, double beta1, double beta2,
                  double eps, double weight_decay, int64_t step);

}  // namespace par

// Dispatchers: par when parallel_enabled(), ref otherwise.
#define S4V_KERNEL_DISPATCH(name, ...) \
    (::s4v::kernels::parallel_enabled() ? ::s4v::kernels::par::name(__VA_ARGS__) \
                                        : ::s4v::kernels::ref::name(__VA_ARGS__))

}  // namespace s4v::kernels
