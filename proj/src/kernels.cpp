#include "s4v/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace s4v::kernels {

namespace {
std::atomic<bool> g_parallel{
#ifdef _OPENMP
    true
#else
    false
#endif
};
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace detail {

// per-element / per-row bodies shared by both backends; the backends differ
// only in how they partition the independent outer loops
template <typename T>
inline T gelu_scalar(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440L)));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
    const T phi = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794L);  // 1/sqrt(2*pi)
    return T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440L))) + x * phi;
}

template <typename T>
inline void softmax_row(const T* x, T* out, int64_t c) {
    T mx = x[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int64_t j = 0; j < c; ++j) {
        out[j] = std::exp(x[j] - mx);
        sum += out[j];
    }
    const T inv = T(1) / sum;
    for (int64_t j = 0; j < c; ++j) out[j] *= inv;
}

template <typename T>
inline void softmax_bwd_row(const T* y, const T* g, T* gx, int64_t c) {
    T dot = T(0);
    for (int64_t j = 0; j < c; ++j) dot += y[j] * g[j];
    for (int64_t j = 0; j < c; ++j) gx[j] = y[j] * (g[j] - dot);
}

template <typename T>
inline void log_softmax_row(const T* x, T* out, int64_t c) {
    T mx = x[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int64_t j = 0; j < c; ++j) sum += std::exp(x[j] - mx);
    const T lse = mx + std::log(sum);
    for (int64_t j = 0; j < c; ++j) out[j] = x[j] - lse;
}

template <typename T>
inline void log_softmax_bwd_row(const T* y, const T* g, T* gx, int64_t c) {
    T gsum = T(0);
    for (int64_t j = 0; j < c; ++j) gsum += g[j];
    for (int64_t j = 0; j < c; ++j) gx[j] = g[j] - std::exp(y[j]) * gsum;
}

template <typename T>
inline void layernorm_row(const T* x, const T* gamma, const T* beta, double eps, T* out, T* xhat,
                          T* rstd, int64_t c) {
    T mean = T(0);
    for (int64_t j = 0; j < c; ++j) mean += x[j];
    mean /= T(c);
    T var = T(0);
    for (int64_t j = 0; j < c; ++j) {
        const T d = x[j] - mean;
        var += d * d;
    }
    var /= T(c);
    const T rs = T(1) / std::sqrt(var + T(eps));
    *rstd = rs;
    for (int64_t j = 0; j < c; ++j) {
        xhat[j] = (x[j] - mean) * rs;
        out[j] = gamma[j] * xhat[j] + beta[j];
    }
}

template <typename T>
inline void layernorm_bwd_row(const T* xhat, T rstd, const T* gamma, const T* g, T* gx,
                              int64_t c) {
    T m1 = T(0), m2 = T(0);
    for (int64_t j = 0; j < c; ++j) {
        const T gg = g[j] * gamma[j];
        m1 += gg;
        m2 += gg * xhat[j];
    }
    m1 /= T(c);
    m2 /= T(c);
    for (int64_t j = 0; j < c; ++j) gx[j] = rstd * (g[j] * gamma[j] - m1 - xhat[j] * m2);
}

template <typename T>
inline void l2norm_row(const T* x, double eps, T* out, T* inv_norm, int64_t c) {
    T ss = T(0);
    for (int64_t j = 0; j < c; ++j) ss += x[j] * x[j];
    const T inv = T(1) / std::sqrt(ss + T(eps));
    *inv_norm = inv;
    for (int64_t j = 0; j < c; ++j) out[j] = x[j] * inv;
}

template <typename T>
inline void l2norm_bwd_row(const T* y, T inv, const T* g, T* gx, int64_t c) {
    T dot = T(0);
    for (int64_t j = 0; j < c; ++j) dot += y[j] * g[j];
    for (int64_t j = 0; j < c; ++j) gx[j] = inv * (g[j] - y[j] * dot);
}

template <typename T>
inline void adamw_scalar(T& p, T g, T& m, T& v, T lr, T beta1, T beta2, T eps, T wd, T bc1,
                         T bc2) {
    m = beta1 * m + (T(1) - beta1) * g;
    v = beta2 * v + (T(1) - beta2) * g * g;
    const T mhat = m * bc1;
    const T vhat = v * bc2;
    p -= lr * wd * p;
    p -= lr * mhat / (std::sqrt(vhat) + eps);
}

inline int64_t offset_of(int64_t flat, const int64_t* shape, const int64_t* strides, int rank) {
    int64_t off = 0;
    for (int i = rank - 1; i >= 0; --i) {
        const int64_t coord = flat % shape[i];
        flat /= shape[i];
        off += coord * strides[i];
    }
    return off;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// serial reference backend
// ---------------------------------------------------------------------------
namespace ref {

template <typename T>
void matmul(MM mode, int64_t batch, int64_t m, int64_t n, int64_t k, const T* a, int64_t a_bs,
            const T* b, int64_t b_bs, T* c, int64_t c_bs) {
    // c_bs == 0 sums the batch into one m*n output; every output element is a
    // flat running sum over (batch, p) ascending
    const int64_t out_batches = (c_bs == 0) ? 1 : batch;
    const int64_t red_batches = (c_bs == 0) ? batch : 1;
    for (int64_t ob = 0; ob < out_batches; ++ob) {
        T* C = c + ob * c_bs;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                T acc = T(0);
                for (int64_t r = 0; r < red_batches; ++r) {
                    const int64_t bi = (c_bs == 0) ? r : ob;
                    const T* A = a + bi * a_bs;
                    const T* B = b + bi * b_bs;
                    switch (mode) {
                        case MM::NN:
                            for (int64_t p = 0; p < k; ++p) acc += A[i * k + p] * B[p * n + j];
                            break;
                        case MM::NT:
                            for (int64_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
                            break;
                        case MM::TN:
                            for (int64_t p = 0; p < k; ++p) acc += A[p * m + i] * B[p * n + j];
                            break;
                    }
                }
                C[i * n + j] = acc;
            }
    }
}

template <typename T>
void add(const T* a, const T* b, T* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void binary_broadcast(const T* a, const T* b, T* out, const int64_t* out_shape,
                      const int64_t* a_strides, const int64_t* b_strides, int rank, bool is_mul) {
    int64_t total = 1;
    for (int i = 0; i < rank; ++i) total *= out_shape[i];
    for (int64_t e = 0; e < total; ++e) {
        const int64_t ao = detail::offset_of(e, out_shape, a_strides, rank);
        const int64_t bo = detail::offset_of(e, out_shape, b_strides, rank);
        out[e] = is_mul ? a[ao] * b[bo] : a[ao] + b[bo];
    }
}

template <typename T>
void scale(const T* x, double s, T* out, int64_t n) {
    const T sv = T(s);
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] * sv;
}

template <typename T>
void axpy(const T* x, double s, T* out, int64_t n) {
    const T sv = T(s);
    for (int64_t i = 0; i < n; ++i) out[i] += x[i] * sv;
}

template <typename T>
void gelu_fwd(const T* x, T* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = detail::gelu_scalar(x[i]);
}

template <typename T>
void gelu_bwd(const T* x, const T* gout, T* gx, int64_t n) {
    for (int64_t i = 0; i < n; ++i) gx[i] = gout[i] * detail::gelu_grad_scalar(x[i]);
}

template <typename T>
void exp_fwd(const T* x, T* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

template <typename T>
void softmax_rows(const T* x, T* out, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) detail::softmax_row(x + r * cols, out + r * cols, cols);
}

template <typename T>
void softmax_bwd_rows(const T* y, const T* gout, T* gx, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r)
        detail::softmax_bwd_row(y + r * cols, gout + r * cols, gx + r * cols, cols);
}

template <typename T>
void log_softmax_rows(const T* x, T* out, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) detail::log_softmax_row(x + r * cols, out + r * cols, cols);
}

template <typename T>
void log_softmax_bwd_rows(const T* y, const T* gout, T* gx, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r)
        detail::log_softmax_bwd_row(y + r * cols, gout + r * cols, gx + r * cols, cols);
}

template <typename T>
void layernorm_rows(const T* x, const T* gamma, const T* beta, double eps, T* out, T* xhat,
                    T* rstd, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r)
        detail::layernorm_row(x + r * cols, gamma, beta, eps, out + r * cols, xhat + r * cols,
                              rstd + r, cols);
}

template <typename T>
void layernorm_bwd_rows(const T* xhat, const T* rstd, const T* gamma, const T* gout, T* gx,
                        T* ggamma, T* gbeta, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r)
        detail::layernorm_bwd_row(xhat + r * cols, rstd[r], gamma, gout + r * cols, gx + r * cols,
                                  cols);
    for (int64_t j = 0; j < cols; ++j) {
        T gg = T(0), gb = T(0);
        for (int64_t r = 0; r < rows; ++r) {
            gg += gout[r * cols + j] * xhat[r * cols + j];
            gb += gout[r * cols + j];
        }
        ggamma[j] = gg;
        gbeta[j] = gb;
    }
}

template <typename T>
void l2norm_rows(const T* x, double eps, T* out, T* inv_norm, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r)
        detail::l2norm_row(x + r * cols, eps, out + r * cols, inv_norm + r, cols);
}

template <typename T>
void l2norm_bwd_rows(const T* y, const T* inv_norm, const T* gout, T* gx, int64_t rows,
                     int64_t cols) {
    for (int64_t r = 0; r < rows; ++r)
        detail::l2norm_bwd_row(y + r * cols, inv_norm[r], gout + r * cols, gx + r * cols, cols);
}

template <typename T>
void channel_stats(const T* x, int64_t m, int64_t c, T* mean, T* var) {
    for (int64_t j = 0; j < c; ++j) {
        T s = T(0);
        for (int64_t i = 0; i < m; ++i) s += x[i * c + j];
        const T mu = s / T(m);
        T v = T(0);
        for (int64_t i = 0; i < m; ++i) {
            const T d = x[i * c + j] - mu;
            v += d * d;
        }
        mean[j] = mu;
        var[j] = v / T(m);
    }
}

template <typename T>
void batchnorm_fwd(const T* x, const T* mean, const T* var, const T* gamma, const T* beta,
                   double eps, T* out, T* xhat, T* rstd, int64_t m, int64_t c) {
    for (int64_t j = 0; j < c; ++j) rstd[j] = T(1) / std::sqrt(var[j] + T(eps));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j) {
            const T xh = (x[i * c + j] - mean[j]) * rstd[j];
            xhat[i * c + j] = xh;
            out[i * c + j] = gamma[j] * xh + beta[j];
        }
}

template <typename T>
void batchnorm_bwd(const T* xhat, const T* rstd, const T* gamma, const T* gout, bool batch_stats,
                   T* gx, T* ggamma, T* gbeta, int64_t m, int64_t c) {
    for (int64_t j = 0; j < c; ++j) {
        T gg = T(0), gb = T(0);
        for (int64_t i = 0; i < m; ++i) {
            gg += gout[i * c + j] * xhat[i * c + j];
            gb += gout[i * c + j];
        }
        ggamma[j] = gg;
        gbeta[j] = gb;
    }
    const T invm = T(1) / T(m);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j) {
            if (batch_stats) {
                gx[i * c + j] = gamma[j] * rstd[j] *
                                (gout[i * c + j] - gbeta[j] * invm - xhat[i * c + j] * ggamma[j] * invm);
            } else {
                gx[i * c + j] = gamma[j] * rstd[j] * gout[i * c + j];
            }
        }
}

template <typename T>
void conv_temporal_fwd(const T* x, const T* w, T* out, int64_t b, int64_t t, int64_t n,
                       int64_t c) {
    const int64_t plane = n * c;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t ni = 0; ni < n; ++ni)
                for (int64_t ci = 0; ci < c; ++ci) {
                    T acc = T(0);
                    for (int64_t kk = 0; kk < 3; ++kk) {
                        const int64_t ts = ti + kk - 1;
                        if (ts < 0 || ts >= t) continue;
                        acc += w[ci * 3 + kk] * x[(bi * t + ts) * plane + ni * c + ci];
                    }
                    out[(bi * t + ti) * plane + ni * c + ci] = acc;
                }
}

template <typename T>
void conv_temporal_bwd_x(const T* gout, const T* w, T* gx, int64_t b, int64_t t, int64_t n,
                         int64_t c) {
    const int64_t plane = n * c;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t ni = 0; ni < n; ++ni)
                for (int64_t ci = 0; ci < c; ++ci) {
                    T acc = T(0);
                    for (int64_t kk = 0; kk < 3; ++kk) {
                        const int64_t to = ti - (kk - 1);
                        if (to < 0 || to >= t) continue;
                        acc += w[ci * 3 + kk] * gout[(bi * t + to) * plane + ni * c + ci];
                    }
                    gx[(bi * t + ti) * plane + ni * c + ci] = acc;
                }
}

template <typename T>
void conv_temporal_bwd_w(const T* gout, const T* x, T* gw, int64_t b, int64_t t, int64_t n,
                         int64_t c) {
    const int64_t plane = n * c;
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t kk = 0; kk < 3; ++kk) {
            T acc = T(0);
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t ti = 0; ti < t; ++ti) {
                    const int64_t ts = ti + kk - 1;
                    if (ts < 0 || ts >= t) continue;
                    for (int64_t ni = 0; ni < n; ++ni)
                        acc += gout[(bi * t + ti) * plane + ni * c + ci] *
                               x[(bi * t + ts) * plane + ni * c + ci];
                }
            gw[ci * 3 + kk] = acc;
        }
}

template <typename T>
T sum_all(const T* x, int64_t n) {
    const int64_t nchunks = (n + kReduceChunk - 1) / kReduceChunk;
    T total = T(0);
    for (int64_t ch = 0; ch < nchunks; ++ch) {
        const int64_t lo = ch * kReduceChunk;
        const int64_t hi = std::min(n, lo + kReduceChunk);
        T part = T(0);
        for (int64_t i = lo; i < hi; ++i) part += x[i];
        total += part;
    }
    return total;
}

template <typename T>
void sum_axis(const T* x, T* out, int64_t outer, int64_t axis, int64_t inner) {
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            T acc = T(0);
            for (int64_t a = 0; a < axis; ++a) acc += x[(o * axis + a) * inner + i];
            out[o * inner + i] = acc;
        }
}

template <typename T>
void reduce_to(const T* x, T* out, const int64_t* x_shape, const int64_t* out_strides, int rank,
               int64_t out_numel) {
    int64_t total = 1;
    for (int i = 0; i < rank; ++i) total *= x_shape[i];
    if (out_numel == 1) {
        // keep the chunked order so both backends agree bit-for-bit
        out[0] = sum_all(x, total);
        return;
    }
    for (int64_t e = 0; e < out_numel; ++e) out[e] = T(0);
    for (int64_t e = 0; e < total; ++e)
        out[detail::offset_of(e, x_shape, out_strides, rank)] += x[e];
}

template <typename T>
void permute_copy(const T* x, T* out, const int64_t* out_shape, const int64_t* src_strides,
                  int rank) {
    int64_t total = 1;
    for (int i = 0; i < rank; ++i) total *= out_shape[i];
    for (int64_t e = 0; e < total; ++e)
        out[e] = x[detail::offset_of(e, out_shape, src_strides, rank)];
}

template <typename T>
void adamw_update(T* p, const T* g, T* m, T* v, int64_t n, double lr, double beta1, double beta2,
                  double eps, double weight_decay, int64_t step) {
    const T bc1 = T(1.0 / (1.0 - std::pow(beta1, static_cast<double>(step))));
    const T bc2 = T(1.0 / (1.0 - std::pow(beta2, static_cast<double>(step))));
    for (int64_t i = 0; i < n; ++i)
        detail::adamw_scalar(p[i], g[i], m[i], v[i], T(lr), T(beta1), T(beta2), T(eps),
                             T(weight_decay), bc1, bc2);
}

}  // namespace ref

// ---------------------------------------------------------------------------
// OpenMP backend. Loops partition independent outputs; per-output reduction
// order matches the reference exactly.
// ---------------------------------------------------------------------------
namespace par {

template <typename T>
void matmul(MM mode, int64_t batch, int64_t m, int64_t n, int64_t k, const T* a, int64_t a_bs,
            const T* b, int64_t b_bs, T* c, int64_t c_bs) {
    if (c_bs == 0 && batch > 1) {
        // batch-reduced output: each thread owns full output rows; the running
        // (batch, p) accumulation order matches the reference
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < m; ++i) {
            T* crow = c + i * n;
            if (mode == MM::NT) {
                for (int64_t j = 0; j < n; ++j) {
                    T acc = T(0);
                    for (int64_t bi = 0; bi < batch; ++bi) {
                        const T* A = a + bi * a_bs;
                        const T* B = b + bi * b_bs;
                        for (int64_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
                    }
                    crow[j] = acc;
                }
            } else {
                for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
                for (int64_t bi = 0; bi < batch; ++bi) {
                    const T* A = a + bi * a_bs;
                    const T* B = b + bi * b_bs;
                    for (int64_t p = 0; p < k; ++p) {
                        const T av = (mode == MM::NN) ? A[i * k + p] : A[p * m + i];
                        const T* brow = B + p * n;
                        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                    }
                }
            }
        }
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t bm = 0; bm < batch * m; ++bm) {
        const int64_t bi = bm / m;
        const int64_t i = bm % m;
        const T* A = a + bi * a_bs;
        const T* B = b + bi * b_bs;
        T* crow = c + bi * c_bs + i * n;
        switch (mode) {
            case MM::NN: {
                for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
                for (int64_t p = 0; p < k; ++p) {
                    const T av = A[i * k + p];
                    const T* brow = B + p * n;
                    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
                break;
            }
            case MM::NT: {
                for (int64_t j = 0; j < n; ++j) {
                    T acc = T(0);
                    for (int64_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
                    crow[j] = acc;
                }
                break;
            }
            case MM::TN: {
                for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
                for (int64_t p = 0; p < k; ++p) {
                    const T av = A[p * m + i];
                    const T* brow = B + p * n;
                    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
                break;
            }
        }
    }
}

template <typename T>
void add(const T* a, const T* b, T* out, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void binary_broadcast(const T* a, const T* b, T* out, const int64_t* out_shape,
                      const int64_t* a_strides, const int64_t* b_strides, int rank, bool is_mul) {
    int64_t total = 1;
    for (int i = 0; i < rank; ++i) total *= out_shape[i];
#pragma omp parallel for schedule(static)
    for (int64_t e = 0; e < total; ++e) {
        const int64_t ao = detail::offset_of(e, out_shape, a_strides, rank);
        const int64_t bo = detail::offset_of(e, out_shape, b_strides, rank);
        out[e] = is_mul ? a[ao] * b[bo] : a[ao] + b[bo];
    }
}

template <typename T>
void scale(const T* x, double s, T* out, int64_t n) {
    const T sv = T(s);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] * sv;
}

template <typename T>
void axpy(const T* x, double s, T* out, int64_t n) {
    const T sv = T(s);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] += x[i] * sv;
}

template <typename T>
void gelu_fwd(const T* x, T* out, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = detail::gelu_scalar(x[i]);
}

template <typename T>
void gelu_bwd(const T* x, const T* gout, T* gx, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) gx[i] = gout[i] * detail::gelu_grad_scalar(x[i]);
}

template <typename T>
void exp_fwd(const T* x, T* out, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

template <typename T>
void softmax_rows(const T* x, T* out, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) detail::softmax_row(x + r * cols, out + r * cols, cols);
}

template <typename T>
void softmax_bwd_rows(const T* y, const T* gout, T* gx, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r)
        detail::softmax_bwd_row(y + r * cols, gout + r * cols, gx + r * cols, cols);
}

template <typename T>
void log_softmax_rows(const T* x, T* out, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) detail::log_softmax_row(x + r * cols, out + r * cols, cols);
}

template <typename T>
void log_softmax_bwd_rows(const T* y, const T* gout, T* gx, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r)
        detail::log_softmax_bwd_row(y + r * cols, gout + r * cols, gx + r * cols, cols);
}

template <typename T>
void layernorm_rows(const T* x, const T* gamma, const T* beta, double eps, T* out, T* xhat,
                    T* rstd, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r)
        detail::layernorm_row(x + r * cols, gamma, beta, eps, out + r * cols, xhat + r * cols,
                              rstd + r, cols);
}

template <typename T>
void layernorm_bwd_rows(const T* xhat, const T* rstd, const T* gamma, const T* gout, T* gx,
                        T* ggamma, T* gbeta, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r)
        detail::layernorm_bwd_row(xhat + r * cols, rstd[r], gamma, gout + r * cols, gx + r * cols,
                                  cols);
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < cols; ++j) {
        T gg = T(0), gb = T(0);
        for (int64_t r = 0; r < rows; ++r) {
            gg += gout[r * cols + j] * xhat[r * cols + j];
            gb += gout[r * cols + j];
        }
        ggamma[j] = gg;
        gbeta[j] = gb;
    }
}

template <typename T>
void l2norm_rows(const T* x, double eps, T* out, T* inv_norm, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r)
        detail::l2norm_row(x + r * cols, eps, out + r * cols, inv_norm + r, cols);
}

template <typename T>
void l2norm_bwd_rows(const T* y, const T* inv_norm, const T* gout, T* gx, int64_t rows,
                     int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r)
        detail::l2norm_bwd_row(y + r * cols, inv_norm[r], gout + r * cols, gx + r * cols, cols);
}

template <typename T>
void channel_stats(const T* x, int64_t m, int64_t c, T* mean, T* var) {
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < c; ++j) {
        T s = T(0);
        for (int64_t i = 0; i < m; ++i) s += x[i * c + j];
        const T mu = s / T(m);
        T v = T(0);
        for (int64_t i = 0; i < m; ++i) {
            const T d = x[i * c + j] - mu;
            v += d * d;
        }
        mean[j] = mu;
        var[j] = v / T(m);
    }
}

template <typename T>
void batchnorm_fwd(const T* x, const T* mean, const T* var, const T* gamma, const T* beta,
                   double eps, T* out, T* xhat, T* rstd, int64_t m, int64_t c) {
    for (int64_t j = 0; j < c; ++j) rstd[j] = T(1) / std::sqrt(var[j] + T(eps));
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j) {
            const T xh = (x[i * c + j] - mean[j]) * rstd[j];
            xhat[i * c + j] = xh;
            out[i * c + j] = gamma[j] * xh + beta[j];
        }
}

template <typename T>
void batchnorm_bwd(const T* xhat, const T* rstd, const T* gamma, const T* gout, bool batch_stats,
                   T* gx, T* ggamma, T* gbeta, int64_t m, int64_t c) {
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < c; ++j) {
        T gg = T(0), gb = T(0);
        for (int64_t i = 0; i < m; ++i) {
            gg += gout[i * c + j] * xhat[i * c + j];
            gb += gout[i * c + j];
        }
        ggamma[j] = gg;
        gbeta[j] = gb;
    }
    const T invm = T(1) / T(m);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j) {
            if (batch_stats) {
                gx[i * c + j] = gamma[j] * rstd[j] *
                                (gout[i * c + j] - gbeta[j] * invm - xhat[i * c + j] * ggamma[j] * invm);
            } else {
                gx[i * c + j] = gamma[j] * rstd[j] * gout[i * c + j];
            }
        }
}

template <typename T>
void conv_temporal_fwd(const T* x, const T* w, T* out, int64_t b, int64_t t, int64_t n,
                       int64_t c) {
    const int64_t plane = n * c;
#pragma omp parallel for schedule(static)
    for (int64_t bt = 0; bt < b * t; ++bt) {
        const int64_t bi = bt / t;
        const int64_t ti = bt % t;
        for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t ci = 0; ci < c; ++ci) {
                T acc = T(0);
                for (int64_t kk = 0; kk < 3; ++kk) {
                    const int64_t ts = ti + kk - 1;
                    if (ts < 0 || ts >= t) continue;
                    acc += w[ci * 3 + kk] * x[(bi * t + ts) * plane + ni * c + ci];
                }
                out[(bi * t + ti) * plane + ni * c + ci] = acc;
            }
    }
}

template <typename T>
void conv_temporal_bwd_x(const T* gout, const T* w, T* gx, int64_t b, int64_t t, int64_t n,
                         int64_t c) {
    const int64_t plane = n * c;
#pragma omp parallel for schedule(static)
    for (int64_t bt = 0; bt < b * t; ++bt) {
        const int64_t bi = bt / t;
        const int64_t ti = bt % t;
        for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t ci = 0; ci < c; ++ci) {
                T acc = T(0);
                for (int64_t kk = 0; kk < 3; ++kk) {
                    const int64_t to = ti - (kk - 1);
                    if (to < 0 || to >= t) continue;
                    acc += w[ci * 3 + kk] * gout[(bi * t + to) * plane + ni * c + ci];
                }
                gx[(bi * t + ti) * plane + ni * c + ci] = acc;
            }
    }
}

template <typename T>
void conv_temporal_bwd_w(const T* gout, const T* x, T* gw, int64_t b, int64_t t, int64_t n,
                         int64_t c) {
    const int64_t plane = n * c;
#pragma omp parallel for schedule(static)
    for (int64_t ck = 0; ck < c * 3; ++ck) {
        const int64_t ci = ck / 3;
        const int64_t kk = ck % 3;
        T acc = T(0);
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ti = 0; ti < t; ++ti) {
                const int64_t ts = ti + kk - 1;
                if (ts < 0 || ts >= t) continue;
                for (int64_t ni = 0; ni < n; ++ni)
                    acc += gout[(bi * t + ti) * plane + ni * c + ci] *
                           x[(bi * t + ts) * plane + ni * c + ci];
            }
        gw[ci * 3 + kk] = acc;
    }
}

template <typename T>
T sum_all(const T* x, int64_t n) {
    const int64_t nchunks = (n + kReduceChunk - 1) / kReduceChunk;
    std::vector<T> parts(static_cast<size_t>(nchunks));
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < nchunks; ++ch) {
        const int64_t lo = ch * kReduceChunk;
        const int64_t hi = std::min(n, lo + kReduceChunk);
        T part = T(0);
        for (int64_t i = lo; i < hi; ++i) part += x[i];
        parts[static_cast<size_t>(ch)] = part;
    }
    T total = T(0);
    for (int64_t ch = 0; ch < nchunks; ++ch) total += parts[static_cast<size_t>(ch)];
    return total;
}

template <typename T>
void sum_axis(const T* x, T* out, int64_t outer, int64_t axis, int64_t inner) {
#pragma omp parallel for schedule(static)
    for (int64_t oi = 0; oi < outer * inner; ++oi) {
        const int64_t o = oi / inner;
        const int64_t i = oi % inner;
        T acc = T(0);
        for (int64_t a = 0; a < axis; ++a) acc += x[(o * axis + a) * inner + i];
        out[oi] = acc;
    }
}

template <typename T>
void reduce_to(const T* x, T* out, const int64_t* x_shape, const int64_t* out_strides, int rank,
               int64_t out_numel) {
    // each out element gathers its fiber, visiting x in the same ascending
    // order the serial scatter uses
    int64_t total = 1;
    for (int i = 0; i < rank; ++i) total *= x_shape[i];
    if (out_numel == 1) {
        out[0] = sum_all(x, total);
        return;
    }
    std::vector<int64_t> xstride(static_cast<size_t>(rank));
    int64_t acc = 1;
    for (int i = rank - 1; i >= 0; --i) {
        xstride[static_cast<size_t>(i)] = acc;
        acc *= x_shape[i];
    }
    std::vector<int64_t> kept_dim, kept_stride, red_dim, red_stride;
    for (int i = 0; i < rank; ++i) {
        if (out_strides[i] != 0) {
            kept_dim.push_back(x_shape[i]);
            kept_stride.push_back(xstride[static_cast<size_t>(i)]);
        } else if (x_shape[i] > 1) {
            red_dim.push_back(x_shape[i]);
            red_stride.push_back(xstride[static_cast<size_t>(i)]);
        }
    }
    const int kr = static_cast<int>(kept_dim.size());
    const int rr = static_cast<int>(red_dim.size());
    int64_t fiber = 1;
    for (int64_t d : red_dim) fiber *= d;
#pragma omp parallel for schedule(static)
    for (int64_t e = 0; e < out_numel; ++e) {
        int64_t base = 0, rem = e;
        for (int i = kr - 1; i >= 0; --i) {
            base += (rem % kept_dim[static_cast<size_t>(i)]) * kept_stride[static_cast<size_t>(i)];
            rem /= kept_dim[static_cast<size_t>(i)];
        }
        T s = T(0);
        for (int64_t f = 0; f < fiber; ++f) {
            int64_t off = base, frem = f;
            for (int i = rr - 1; i >= 0; --i) {
                off += (frem % red_dim[static_cast<size_t>(i)]) * red_stride[static_cast<size_t>(i)];
                frem /= red_dim[static_cast<size_t>(i)];
            }
            s += x[off];
        }
        out[e] = s;
    }
}

template <typename T>
void permute_copy(const T* x, T* out, const int64_t* out_shape, const int64_t* src_strides,
                  int rank) {
    int64_t total = 1;
    for (int i = 0; i < rank; ++i) total *= out_shape[i];
#pragma omp parallel for schedule(static)
    for (int64_t e = 0; e < total; ++e)
        out[e] = x[detail::offset_of(e, out_shape, src_strides, rank)];
}

template <typename T>
void adamw_update(T* p, const T* g, T* m, T* v, int64_t n, double lr, double beta1, double beta2,
                  double eps, double weight_decay, int64_t step) {
    const T bc1 = T(1.0 / (1.0 - std::pow(beta1, static_cast<double>(step))));
    const T bc2 = T(1.0 / (1.0 - std::pow(beta2, static_cast<double>(step))));
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        detail::adamw_scalar(p[i], g[i], m[i], v[i], T(lr), T(beta1), T(beta2), T(eps),
                             T(weight_decay), bc1, bc2);
}

}  // namespace par

// explicit instantiations
#define S4V_INSTANTIATE(NS, T)                                                                     \
    template void NS::matmul<T>(MM, int64_t, int64_t, int64_t, int64_t, const T*, int64_t,        \
                                const T*, int64_t, T*, int64_t);                                   \
    template void NS::add<T>(const T*, const T*, T*, int64_t);                                     \
    template void NS::mul<T>(const T*, const T*, T*, int64_t);                                     \
    template void NS::binary_broadcast<T>(const T*, const T*, T*, const int64_t*, const int64_t*,  \
                                          const int64_t*, int, bool);                              \
    template void NS::scale<T>(const T*, double, T*, int64_t);                                     \
    template void NS::axpy<T>(const T*, double, T*, int64_t);                                      \
    template void NS::gelu_fwd<T>(const T*, T*, int64_t);                                          \
    template void NS::gelu_bwd<T>(const T*, const T*, T*, int64_t);                                \
    template void NS::exp_fwd<T>(const T*, T*, int64_t);                                           \
    template void NS::softmax_rows<T>(const T*, T*, int64_t, int64_t);                             \
    template void NS::softmax_bwd_rows<T>(const T*, const T*, T*, int64_t, int64_t);               \
    template void NS::log_softmax_rows<T>(const T*, T*, int64_t, int64_t);                         \
    template void NS::log_softmax_bwd_rows<T>(const T*, const T*, T*, int64_t, int64_t);           \
    template void NS::layernorm_rows<T>(const T*, const T*, const T*, double, T*, T*, T*, int64_t, \
                                        int64_t);                                                  \
    template void NS::layernorm_bwd_rows<T>(const T*, const T*, const T*, const T*, T*, T*, T*,    \
                                            int64_t, int64_t);                                     \
    template void NS::l2norm_rows<T>(const T*, double, T*, T*, int64_t, int64_t);                  \
    template void NS::l2norm_bwd_rows<T>(const T*, const T*, const T*, T*, int64_t, int64_t);      \
    template void NS::channel_stats<T>(const T*, int64_t, int64_t, T*, T*);                        \
    template void NS::batchnorm_fwd<T>(const T*, const T*, const T*, const T*, const T*, double,   \
                                       T*, T*, T*, int64_t, int64_t);                              \
    template void NS::batchnorm_bwd<T>(const T*, const T*, const T*, const T*, bool, T*, T*, T*,   \
                                       int64_t, int64_t);                                          \
    template void NS::conv_temporal_fwd<T>(const T*, const T*, T*, int64_t, int64_t, int64_t,      \
                                           int64_t);                                               \
    template void NS::conv_temporal_bwd_x<T>(const T*, const T*, T*, int64_t, int64_t, int64_t,    \
                                             int64_t);                                             \
    template void NS::conv_temporal_bwd_w<T>(const T*, const T*, T*, int64_t, int64_t, int64_t,    \
                                             int64_t);                                             \
    template T NS::sum_all<T>(const T*, int64_t);                                                  \
    template void NS::sum_axis<T>(const T*, T*, int64_t, int64_t, int64_t);                        \
    template void NS::reduce_to<T>(const T*, T*, const int64_t*, const int64_t*, int, int64_t);    \
    template void NS::permute_copy<T>(const T*, T*, const int64_t*, const int64_t*, int);          \
    template void NS::adamw_update<T>(T*, const T*, T*, T*, int64_t, double, double, double,       \
                                      double, double, int64_t);

S4V_INSTANTIATE(ref, float)
S4V_INSTANTIATE(ref, double)
S4V_INSTANTIATE(par, float)
S4V_INSTANTIATE(par, double)

#undef S4V_INSTANTIATE

}  // namespace s4v::kernels
