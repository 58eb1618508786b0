#include "s4v/ops.hpp"

#include <algorithm>
#include <cstring>

#include "s4v/kernels.hpp"

namespace s4v::ops {

namespace K = s4v::kernels;

namespace {

bool track(const Tensor& t) { return recording_active() && t.defined() && t.requires_grad(); }

void check_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw ShapeError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()) + ")");
}

void record_node(const char* op, Tensor& out, std::vector<std::shared_ptr<TensorImpl>> inputs,
                 std::vector<Tensor> saved,
                 std::function<std::vector<Tensor>(std::span<const Tensor>, const Tensor&)> bwd) {
    out.set_requires_grad(true);
    TapeNode node;
    node.op = op;
    node.saved = std::move(saved);
    node.inputs = std::move(inputs);
    node.output = out.impl();
    node.backward = std::move(bwd);
    Tape::current()->record(std::move(node));
}

std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                                     const char* op) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int R = std::max(ra, rb);
    std::vector<int64_t> out(static_cast<size_t>(R), 1);
    for (int i = 0; i < R; ++i) {
        const int64_t da = (i >= R - ra) ? a[static_cast<size_t>(i - (R - ra))] : 1;
        const int64_t db = (i >= R - rb) ? b[static_cast<size_t>(i - (R - rb))] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": shapes not broadcastable, " + shape_str(a) +
                             " vs " + shape_str(b));
        out[static_cast<size_t>(i)] = std::max(da, db);
    }
    return out;
}

// per-axis strides of `in` viewed through `out_shape` (0 where broadcast)
std::vector<int64_t> bcast_strides(const std::vector<int64_t>& out_shape,
                                   const std::vector<int64_t>& in_shape) {
    const int R = static_cast<int>(out_shape.size());
    const int r = static_cast<int>(in_shape.size());
    const auto ist = row_major_strides(in_shape);
    std::vector<int64_t> s(static_cast<size_t>(R), 0);
    for (int i = 0; i < r; ++i) {
        const int oi = R - r + i;
        if (in_shape[static_cast<size_t>(i)] == out_shape[static_cast<size_t>(oi)])
            s[static_cast<size_t>(oi)] = ist[static_cast<size_t>(i)];
        // broadcast axes keep stride 0
    }
    return s;
}

template <typename T>
const T* cptr(const Tensor& t);
template <>
const float* cptr<float>(const Tensor& t) {
    return t.f32();
}
template <>
const double* cptr<double>(const Tensor& t) {
    return t.f64();
}
template <typename T>
T* mptr(Tensor& t);
template <>
float* mptr<float>(Tensor& t) {
    return t.f32();
}
template <>
double* mptr<double>(Tensor& t) {
    return t.f64();
}

#define S4V_DISPATCH(dt, body)            \
    do {                                  \
        if ((dt) == DType::F32) {         \
            using scalar_t = float;       \
            body;                         \
        } else {                          \
            using scalar_t = double;      \
            body;                         \
        }                                 \
    } while (0)

Tensor reshape_view(const Tensor& x, std::vector<int64_t> new_shape) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(new_shape);
    impl->dtype = x.dtype();
    impl->storage = x.impl()->storage;
    return Tensor(std::move(impl));
}

// grad reduced onto an operand's shape; returns an alias of gout when shapes
// already match (the engine copies before mutating shared grads)
Tensor reduce_grad_to(const Tensor& gout, const std::vector<int64_t>& in_shape) {
    if (gout.shape() == in_shape) return gout;
    const auto& os = gout.shape();
    std::vector<int64_t> padded(os.size() - in_shape.size(), 1);
    padded.insert(padded.end(), in_shape.begin(), in_shape.end());
    Tensor red = Tensor::empty(padded, gout.dtype());
    const auto strides = bcast_strides(os, in_shape);
    S4V_DISPATCH(gout.dtype(), {
        S4V_KERNEL_DISPATCH(reduce_to, cptr<scalar_t>(gout), mptr<scalar_t>(red), os.data(),
                            strides.data(), static_cast<int>(os.size()), red.numel());
    });
    return reshape_view(red, in_shape);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_dtype(a, b, "add");
    const auto out_shape = broadcast_shape(a.shape(), b.shape(), "add");
    Tensor out = Tensor::empty(out_shape, a.dtype());
    if (a.shape() == b.shape()) {
        S4V_DISPATCH(a.dtype(), {
            S4V_KERNEL_DISPATCH(add, cptr<scalar_t>(a), cptr<scalar_t>(b), mptr<scalar_t>(out),
                                out.numel());
        });
    } else {
        const auto as = bcast_strides(out_shape, a.shape());
        const auto bs = bcast_strides(out_shape, b.shape());
        S4V_DISPATCH(a.dtype(), {
            S4V_KERNEL_DISPATCH(binary_broadcast, cptr<scalar_t>(a), cptr<scalar_t>(b),
                                mptr<scalar_t>(out), out_shape.data(), as.data(), bs.data(),
                                static_cast<int>(out_shape.size()), false);
        });
    }
    const bool ga = track(a), gb = track(b);
    if (ga || gb) {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::vector<int64_t> a_shape = a.shape(), b_shape = b.shape();
        if (ga) inputs.push_back(a.impl());
        if (gb) inputs.push_back(b.impl());
        record_node("add", out, std::move(inputs), {},
                    [ga, gb, a_shape, b_shape](std::span<const Tensor>, const Tensor& gout) {
                        std::vector<Tensor> gs;
                        if (ga) gs.push_back(reduce_grad_to(gout, a_shape));
                        if (gb) gs.push_back(reduce_grad_to(gout, b_shape));
                        return gs;
                    });
    }
    return out;
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check_dtype(a, b, "mul");
    const auto out_shape = broadcast_shape(a.shape(), b.shape(), "mul");
    Tensor out = Tensor::empty(out_shape, a.dtype());
    const auto as = bcast_strides(out_shape, a.shape());
    const auto bs = bcast_strides(out_shape, b.shape());
    if (a.shape() == b.shape()) {
        S4V_DISPATCH(a.dtype(), {
            S4V_KERNEL_DISPATCH(mul, cptr<scalar_t>(a), cptr<scalar_t>(b), mptr<scalar_t>(out),
                                out.numel());
        });
    } else {
        S4V_DISPATCH(a.dtype(), {
            S4V_KERNEL_DISPATCH(binary_broadcast, cptr<scalar_t>(a), cptr<scalar_t>(b),
                                mptr<scalar_t>(out), out_shape.data(), as.data(), bs.data(),
                                static_cast<int>(out_shape.size()), true);
        });
    }
    const bool ga = track(a), gb = track(b);
    if (ga || gb) {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::vector<Tensor> saved;
        // da needs b, db needs a
        if (ga) saved.push_back(b);
        if (gb) saved.push_back(a);
        std::vector<int64_t> a_shape = a.shape(), b_shape = b.shape();
        if (ga) inputs.push_back(a.impl());
        if (gb) inputs.push_back(b.impl());
        record_node(
            "mul", out, std::move(inputs), std::move(saved),
            [ga, gb, a_shape, b_shape, out_shape](std::span<const Tensor> sv, const Tensor& gout) {
                std::vector<Tensor> gs;
                size_t si = 0;
                const auto full_mul = [&](const Tensor& other) {
                    Tensor full = Tensor::empty(out_shape, gout.dtype());
                    const auto gstr = bcast_strides(out_shape, gout.shape());
                    const auto ostr = bcast_strides(out_shape, other.shape());
                    S4V_DISPATCH(gout.dtype(), {
                        S4V_KERNEL_DISPATCH(binary_broadcast, cptr<scalar_t>(gout),
                                            cptr<scalar_t>(other), mptr<scalar_t>(full),
                                            out_shape.data(), gstr.data(), ostr.data(),
                                            static_cast<int>(out_shape.size()), true);
                    });
                    return full;
                };
                if (ga) {
                    const Tensor& b_saved = sv[si++];
                    gs.push_back(reduce_grad_to(full_mul(b_saved), a_shape));
                }
                if (gb) {
                    const Tensor& a_saved = sv[si++];
                    gs.push_back(reduce_grad_to(full_mul(a_saved), b_shape));
                }
                return gs;
            });
    }
    return out;
}

Tensor scale(const Tensor& x, double s) {
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    S4V_DISPATCH(x.dtype(), {
        S4V_KERNEL_DISPATCH(scale, cptr<scalar_t>(x), s, mptr<scalar_t>(out), out.numel());
    });
    if (track(x)) {
        record_node("scale", out, {x.impl()}, {},
                    [s](std::span<const Tensor>, const Tensor& gout) {
                        Tensor gx = Tensor::empty(gout.shape(), gout.dtype());
                        S4V_DISPATCH(gout.dtype(), {
                            S4V_KERNEL_DISPATCH(scale, cptr<scalar_t>(gout), s, mptr<scalar_t>(gx),
                                                gx.numel());
                        });
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_dtype(a, b, "matmul");
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const int64_t m = a.dim(-2), ka = a.dim(-1);
    const int64_t kb = b.dim(-2), n = b.dim(-1);
    if (ka != kb)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    std::vector<int64_t> abatch(a.shape().begin(), a.shape().end() - 2);
    std::vector<int64_t> bbatch(b.shape().begin(), b.shape().end() - 2);
    std::vector<int64_t> obatch;
    int64_t a_bs = m * ka, b_bs = ka * n;
    if (abatch == bbatch) {
        obatch = abatch;
    } else if (bbatch.empty()) {
        obatch = abatch;
        b_bs = 0;
    } else if (abatch.empty()) {
        obatch = bbatch;
        a_bs = 0;
    } else {
        throw ShapeError("matmul: batch dimensions must match exactly, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const int64_t batch = shape_numel(obatch);
    std::vector<int64_t> out_shape = obatch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = Tensor::empty(out_shape, a.dtype());
    S4V_DISPATCH(a.dtype(), {
        S4V_KERNEL_DISPATCH(matmul, K::MM::NN, batch, m, n, ka, cptr<scalar_t>(a), a_bs,
                            cptr<scalar_t>(b), b_bs, mptr<scalar_t>(out), m * n);
    });
    const bool ga = track(a), gb = track(b);
    if (ga || gb) {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::vector<Tensor> saved;
        if (ga) saved.push_back(b);  // dA = dC * B^T
        if (gb) saved.push_back(a);  // dB = A^T * dC
        std::vector<int64_t> a_shape = a.shape(), b_shape = b.shape();
        if (ga) inputs.push_back(a.impl());
        if (gb) inputs.push_back(b.impl());
        const int64_t k = ka;
        record_node(
            "matmul", out, std::move(inputs), std::move(saved),
            [ga, gb, batch, m, n, k, a_bs, b_bs, a_shape,
             b_shape](std::span<const Tensor> sv, const Tensor& gout) {
                std::vector<Tensor> gs;
                size_t si = 0;
                if (ga) {
                    const Tensor& bs_ = sv[si++];
                    Tensor da = Tensor::empty(a_shape, gout.dtype());
                    S4V_DISPATCH(gout.dtype(), {
                        S4V_KERNEL_DISPATCH(matmul, K::MM::NT, batch, m, k, n,
                                            cptr<scalar_t>(gout), m * n, cptr<scalar_t>(bs_), b_bs,
                                            mptr<scalar_t>(da), a_bs == 0 ? 0 : m * k);
                    });
                    gs.push_back(std::move(da));
                }
                if (gb) {
                    const Tensor& as_ = sv[si++];
                    Tensor db = Tensor::empty(b_shape, gout.dtype());
                    S4V_DISPATCH(gout.dtype(), {
                        S4V_KERNEL_DISPATCH(matmul, K::MM::TN, batch, k, n, m, cptr<scalar_t>(as_),
                                            a_bs, cptr<scalar_t>(gout), m * n, mptr<scalar_t>(db),
                                            b_bs == 0 ? 0 : k * n);
                    });
                    gs.push_back(std::move(db));
                }
                return gs;
            });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    Tensor y = matmul(x, w);
    if (bias.defined()) y = add(y, bias);
    return y;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    S4V_DISPATCH(x.dtype(), {
        S4V_KERNEL_DISPATCH(gelu_fwd, cptr<scalar_t>(x), mptr<scalar_t>(out), out.numel());
    });
    if (track(x)) {
        record_node("gelu", out, {x.impl()}, {x},
                    [](std::span<const Tensor> sv, const Tensor& gout) {
                        const Tensor& x_saved = sv[0];
                        Tensor gx = Tensor::empty(gout.shape(), gout.dtype());
                        S4V_DISPATCH(gout.dtype(), {
                            S4V_KERNEL_DISPATCH(gelu_bwd, cptr<scalar_t>(x_saved),
                                                cptr<scalar_t>(gout), mptr<scalar_t>(gx),
                                                gx.numel());
                        });
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}

namespace {
Tensor rowwise_softmax(const Tensor& x, bool log_form) {
    if (x.rank() < 1 || x.dim(-1) < 1)
        throw ShapeError("softmax: needs a last dimension of size >= 1");
    const int64_t cols = x.dim(-1);
    const int64_t rows = x.numel() / cols;
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    S4V_DISPATCH(x.dtype(), {
        if (log_form)
            S4V_KERNEL_DISPATCH(log_softmax_rows, cptr<scalar_t>(x), mptr<scalar_t>(out), rows,
                                cols);
        else
            S4V_KERNEL_DISPATCH(softmax_rows, cptr<scalar_t>(x), mptr<scalar_t>(out), rows, cols);
    });
    if (track(x)) {
        record_node(log_form ? "log_softmax" : "softmax", out, {x.impl()}, {out},
                    [rows, cols, log_form](std::span<const Tensor> sv, const Tensor& gout) {
                        const Tensor& y = sv[0];
                        Tensor gx = Tensor::empty(gout.shape(), gout.dtype());
                        S4V_DISPATCH(gout.dtype(), {
                            if (log_form)
                                S4V_KERNEL_DISPATCH(log_softmax_bwd_rows, cptr<scalar_t>(y),
                                                    cptr<scalar_t>(gout), mptr<scalar_t>(gx), rows,
                                                    cols);
                            else
                                S4V_KERNEL_DISPATCH(softmax_bwd_rows, cptr<scalar_t>(y),
                                                    cptr<scalar_t>(gout), mptr<scalar_t>(gx), rows,
                                                    cols);
                        });
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}
}  // namespace

Tensor softmax_lastdim(const Tensor& x) { return rowwise_softmax(x, false); }
Tensor log_softmax_lastdim(const Tensor& x) { return rowwise_softmax(x, true); }

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_dtype(x, gamma, "layernorm");
    check_dtype(x, beta, "layernorm");
    if (x.rank() < 1) throw ShapeError("layernorm: input must have rank >= 1");
    const int64_t cols = x.dim(-1);
    if (gamma.numel() != cols || beta.numel() != cols)
        throw ShapeError("layernorm: affine parameters " + shape_str(gamma.shape()) +
                         " do not match channel dim " + std::to_string(cols));
    const int64_t rows = x.numel() / cols;
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    Tensor xhat = Tensor::empty(x.shape(), x.dtype());
    Tensor rstd = Tensor::empty({rows}, x.dtype());
    S4V_DISPATCH(x.dtype(), {
        S4V_KERNEL_DISPATCH(layernorm_rows, cptr<scalar_t>(x), cptr<scalar_t>(gamma),
                            cptr<scalar_t>(beta), eps, mptr<scalar_t>(out), mptr<scalar_t>(xhat),
                            mptr<scalar_t>(rstd), rows, cols);
    });
    const bool gx = track(x), gg = track(gamma), gb = track(beta);
    if (gx || gg || gb) {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        if (gx) inputs.push_back(x.impl());
        if (gg) inputs.push_back(gamma.impl());
        if (gb) inputs.push_back(beta.impl());
        std::vector<Tensor> saved;
        if (gx || gg) saved.push_back(xhat);
        if (gx) {
            saved.push_back(rstd);
            saved.push_back(gamma);
        }
        record_node(
            "layernorm", out, std::move(inputs), std::move(saved),
            [gx, gg, gb, rows, cols](std::span<const Tensor> sv, const Tensor& gout) {
                std::vector<Tensor> gs;
                if (gx) {
                    const Tensor& xhat_s = sv[0];
                    const Tensor& rstd_s = sv[1];
                    const Tensor& gamma_s = sv[2];
                    Tensor gxv = Tensor::empty(gout.shape(), gout.dtype());
                    Tensor ggv = Tensor::empty({cols}, gout.dtype());
                    Tensor gbv = Tensor::empty({cols}, gout.dtype());
                    S4V_DISPATCH(gout.dtype(), {
                        S4V_KERNEL_DISPATCH(layernorm_bwd_rows, cptr<scalar_t>(xhat_s),
                                            cptr<scalar_t>(rstd_s), cptr<scalar_t>(gamma_s),
                                            cptr<scalar_t>(gout), mptr<scalar_t>(gxv),
                                            mptr<scalar_t>(ggv), mptr<scalar_t>(gbv), rows, cols);
                    });
                    gs.push_back(std::move(gxv));
                    if (gg) gs.push_back(std::move(ggv));
                    if (gb) gs.push_back(std::move(gbv));
                    return gs;
                }
                // only the affine parameters need gradients
                Tensor ggv = gg ? Tensor::zeros({cols}, gout.dtype()) : Tensor();
                Tensor gbv = gb ? Tensor::zeros({cols}, gout.dtype()) : Tensor();
                const Tensor& xhat_s = sv[0];
                S4V_DISPATCH(gout.dtype(), {
                    const scalar_t* go = cptr<scalar_t>(gout);
                    const scalar_t* xh = cptr<scalar_t>(xhat_s);
                    scalar_t* ggp = gg ? mptr<scalar_t>(ggv) : nullptr;
                    scalar_t* gbp = gb ? mptr<scalar_t>(gbv) : nullptr;
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < cols; ++j) {
                            if (ggp) ggp[j] += go[r * cols + j] * xh[r * cols + j];
                            if (gbp) gbp[j] += go[r * cols + j];
                        }
                });
                if (gg) gs.push_back(std::move(ggv));
                if (gb) gs.push_back(std::move(gbv));
                return gs;
            });
    }
    return out;
}

Tensor batchnorm_btnc(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      Tensor& running_mean, Tensor& running_var, double momentum, double eps,
                      bool training, bool update_running) {
    check_dtype(x, gamma, "batchnorm");
    if (x.rank() < 2) throw ShapeError("batchnorm: input must have rank >= 2");
    const int64_t c = x.dim(-1);
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
        running_var.numel() != c)
        throw ShapeError("batchnorm: parameter size does not match channel dim " +
                         std::to_string(c));
    const int64_t m = x.numel() / c;
    if (training && m == 1)
        throw ShapeError("batchnorm: degenerate batch (one pooled position) in training mode");

    Tensor mean = Tensor::empty({c}, x.dtype());
    Tensor var = Tensor::empty({c}, x.dtype());
    if (training) {
        S4V_DISPATCH(x.dtype(), {
            S4V_KERNEL_DISPATCH(channel_stats, cptr<scalar_t>(x), m, c, mptr<scalar_t>(mean),
                                mptr<scalar_t>(var));
        });
        if (update_running) {
            // biased batch var normalizes; the running buffer keeps the
            // unbiased estimate
            const double corr = static_cast<double>(m) / static_cast<double>(m - 1);
            for (int64_t j = 0; j < c; ++j) {
                running_mean.write(j, (1.0 - momentum) * running_mean.read(j) +
                                          momentum * mean.read(j));
                running_var.write(j, (1.0 - momentum) * running_var.read(j) +
                                         momentum * var.read(j) * corr);
            }
        }
    } else {
        std::memcpy(mean.raw(), running_mean.raw(), mean.nbytes());
        std::memcpy(var.raw(), running_var.raw(), var.nbytes());
    }

    Tensor out = Tensor::empty(x.shape(), x.dtype());
    Tensor xhat = Tensor::empty(x.shape(), x.dtype());
    Tensor rstd = Tensor::empty({c}, x.dtype());
    S4V_DISPATCH(x.dtype(), {
        S4V_KERNEL_DISPATCH(batchnorm_fwd, cptr<scalar_t>(x), cptr<scalar_t>(mean),
                            cptr<scalar_t>(var), cptr<scalar_t>(gamma), cptr<scalar_t>(beta), eps,
                            mptr<scalar_t>(out), mptr<scalar_t>(xhat), mptr<scalar_t>(rstd), m, c);
    });
    const bool gx = track(x), gg = track(gamma), gb = track(beta);
    if (gx || gg || gb) {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        if (gx) inputs.push_back(x.impl());
        if (gg) inputs.push_back(gamma.impl());
        if (gb) inputs.push_back(beta.impl());
        std::vector<Tensor> saved;
        if (gx || gg) saved.push_back(xhat);
        if (gx) {
            saved.push_back(rstd);
            saved.push_back(gamma);
        }
        const bool batch_stats = training;
        record_node(
            "batchnorm", out, std::move(inputs), std::move(saved),
            [gx, gg, gb, m, c, batch_stats](std::span<const Tensor> sv, const Tensor& gout) {
                std::vector<Tensor> gs;
                if (gx) {
                    const Tensor& xhat_s = sv[0];
                    const Tensor& rstd_s = sv[1];
                    const Tensor& gamma_s = sv[2];
                    Tensor gxv = Tensor::empty(gout.shape(), gout.dtype());
                    Tensor ggv = Tensor::empty({c}, gout.dtype());
                    Tensor gbv = Tensor::empty({c}, gout.dtype());
                    S4V_DISPATCH(gout.dtype(), {
                        S4V_KERNEL_DISPATCH(batchnorm_bwd, cptr<scalar_t>(xhat_s),
                                            cptr<scalar_t>(rstd_s), cptr<scalar_t>(gamma_s),
                                            cptr<scalar_t>(gout), batch_stats, mptr<scalar_t>(gxv),
                                            mptr<scalar_t>(ggv), mptr<scalar_t>(gbv), m, c);
                    });
                    gs.push_back(std::move(gxv));
                    if (gg) gs.push_back(std::move(ggv));
                    if (gb) gs.push_back(std::move(gbv));
                    return gs;
                }
                Tensor ggv = gg ? Tensor::zeros({c}, gout.dtype()) : Tensor();
                Tensor gbv = gb ? Tensor::zeros({c}, gout.dtype()) : Tensor();
                const Tensor& xhat_s = sv[0];
                S4V_DISPATCH(gout.dtype(), {
                    const scalar_t* go = cptr<scalar_t>(gout);
                    const scalar_t* xh = cptr<scalar_t>(xhat_s);
                    scalar_t* ggp = gg ? mptr<scalar_t>(ggv) : nullptr;
                    scalar_t* gbp = gb ? mptr<scalar_t>(gbv) : nullptr;
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < c; ++j) {
                            if (ggp) ggp[j] += go[i * c + j] * xh[i * c + j];
                            if (gbp) gbp[j] += go[i * c + j];
                        }
                });
                if (gg) gs.push_back(std::move(ggv));
                if (gb) gs.push_back(std::move(gbv));
                return gs;
            });
    }
    return out;
}

Tensor conv_temporal_depthwise(const Tensor& x, const Tensor& w) {
    check_dtype(x, w, "conv_temporal_depthwise");
    if (x.rank() != 4) throw ShapeError("conv_temporal_depthwise: input must be [B,T,N,C], got " +
                                        shape_str(x.shape()));
    const int64_t b = x.dim(0), t = x.dim(1), n = x.dim(2), c = x.dim(3);
    if (w.rank() != 2 || w.dim(0) != c || w.dim(1) != 3)
        throw ShapeError("conv_temporal_depthwise: weight must be [C,3] with C=" +
                         std::to_string(c) + ", got " + shape_str(w.shape()));
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    S4V_DISPATCH(x.dtype(), {
        S4V_KERNEL_DISPATCH(conv_temporal_fwd, cptr<scalar_t>(x), cptr<scalar_t>(w),
                            mptr<scalar_t>(out), b, t, n, c);
    });
    const bool gx = track(x), gw = track(w);
    if (gx || gw) {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::vector<Tensor> saved;
        if (gx) saved.push_back(w);
        if (gw) saved.push_back(x);
        if (gx) inputs.push_back(x.impl());
        if (gw) inputs.push_back(w.impl());
        record_node("conv_temporal_dw", out, std::move(inputs), std::move(saved),
                    [gx, gw, b, t, n, c](std::span<const Tensor> sv, const Tensor& gout) {
                        std::vector<Tensor> gs;
                        size_t si = 0;
                        if (gx) {
                            const Tensor& w_s = sv[si++];
                            Tensor gxv = Tensor::empty(gout.shape(), gout.dtype());
                            S4V_DISPATCH(gout.dtype(), {
                                S4V_KERNEL_DISPATCH(conv_temporal_bwd_x, cptr<scalar_t>(gout),
                                                    cptr<scalar_t>(w_s), mptr<scalar_t>(gxv), b, t,
                                                    n, c);
                            });
                            gs.push_back(std::move(gxv));
                        }
                        if (gw) {
                            const Tensor& x_s = sv[si++];
                            Tensor gwv = Tensor::empty({c, 3}, gout.dtype());
                            S4V_DISPATCH(gout.dtype(), {
                                S4V_KERNEL_DISPATCH(conv_temporal_bwd_w, cptr<scalar_t>(gout),
                                                    cptr<scalar_t>(x_s), mptr<scalar_t>(gwv), b, t,
                                                    n, c);
                            });
                            gs.push_back(std::move(gwv));
                        }
                        return gs;
                    });
    }
    return out;
}

Tensor l2norm_lastdim(const Tensor& x, double eps) {
    if (x.rank() < 1) throw ShapeError("l2norm: input must have rank >= 1");
    const int64_t cols = x.dim(-1);
    const int64_t rows = x.numel() / cols;
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    Tensor inv = Tensor::empty({rows}, x.dtype());
    S4V_DISPATCH(x.dtype(), {
        S4V_KERNEL_DISPATCH(l2norm_rows, cptr<scalar_t>(x), eps, mptr<scalar_t>(out),
                            mptr<scalar_t>(inv), rows, cols);
    });
    if (track(x)) {
        record_node("l2norm", out, {x.impl()}, {out, inv},
                    [rows, cols](std::span<const Tensor> sv, const Tensor& gout) {
                        const Tensor& y = sv[0];
                        const Tensor& inv_s = sv[1];
                        Tensor gx = Tensor::empty(gout.shape(), gout.dtype());
                        S4V_DISPATCH(gout.dtype(), {
                            S4V_KERNEL_DISPATCH(l2norm_bwd_rows, cptr<scalar_t>(y),
                                                cptr<scalar_t>(inv_s), cptr<scalar_t>(gout),
                                                mptr<scalar_t>(gx), rows, cols);
                        });
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}

static Tensor reshape_nograd(const Tensor& x, const std::vector<int64_t>& new_shape) {
    return reshape_view(x, new_shape);
}

Tensor reshape(const Tensor& x, std::vector<int64_t> new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    Tensor out = reshape_view(x, new_shape);
    if (track(x)) {
        std::vector<int64_t> x_shape = x.shape();
        record_node("reshape", out, {x.impl()}, {},
                    [x_shape](std::span<const Tensor>, const Tensor& gout) {
                        return std::vector<Tensor>{reshape_view(gout, x_shape)};
                    });
    }
    return out;
}

Tensor permute(const Tensor& x, std::vector<int> perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r)
        throw ShapeError("permute: permutation size does not match rank of " +
                         shape_str(x.shape()));
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<size_t>(p)])
            throw ShapeError("permute: invalid permutation");
        seen[static_cast<size_t>(p)] = true;
    }
    std::vector<int64_t> out_shape(static_cast<size_t>(r));
    const auto xstrides = row_major_strides(x.shape());
    std::vector<int64_t> src_strides(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        out_shape[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        src_strides[static_cast<size_t>(i)] = xstrides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    Tensor out = Tensor::empty(out_shape, x.dtype());
    S4V_DISPATCH(x.dtype(), {
        S4V_KERNEL_DISPATCH(permute_copy, cptr<scalar_t>(x), mptr<scalar_t>(out), out_shape.data(),
                            src_strides.data(), r);
    });
    if (track(x)) {
        std::vector<int> inv(static_cast<size_t>(r));
        for (int i = 0; i < r; ++i) inv[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;
        std::vector<int64_t> x_shape = x.shape();
        record_node("permute", out, {x.impl()}, {},
                    [inv, x_shape](std::span<const Tensor>, const Tensor& gout) {
                        const int rr = static_cast<int>(inv.size());
                        const auto gstrides = row_major_strides(gout.shape());
                        std::vector<int64_t> ss(static_cast<size_t>(rr));
                        for (int i = 0; i < rr; ++i)
                            ss[static_cast<size_t>(i)] =
                                gstrides[static_cast<size_t>(inv[static_cast<size_t>(i)])];
                        Tensor gx = Tensor::empty(x_shape, gout.dtype());
                        S4V_DISPATCH(gout.dtype(), {
                            S4V_KERNEL_DISPATCH(permute_copy, cptr<scalar_t>(gout),
                                                mptr<scalar_t>(gx), x_shape.data(), ss.data(), rr);
                        });
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}

namespace {
// copies a contiguous [outer, len, inner] block between tensors that differ
// only in the extent of one axis
void copy_axis_block(const Tensor& src, Tensor& dst, int axis, int64_t src_start,
                     int64_t dst_start, int64_t len) {
    const auto& ss = src.shape();
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= ss[static_cast<size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(ss.size()); ++i) inner *= ss[static_cast<size_t>(i)];
    const int64_t src_axis = src.dim(axis), dst_axis = dst.dim(axis);
    const size_t esz = dtype_size(src.dtype());
    const auto* sp = static_cast<const std::byte*>(src.raw());
    auto* dp = static_cast<std::byte*>(dst.raw());
    for (int64_t o = 0; o < outer; ++o) {
        const std::byte* s = sp + ((o * src_axis + src_start) * inner) * esz;
        std::byte* d = dp + ((o * dst_axis + dst_start) * inner) * esz;
        std::memcpy(d, s, static_cast<size_t>(len * inner) * esz);
    }
}
}  // namespace

Tensor concat(const std::vector<Tensor>& items, int axis) {
    if (items.empty()) throw ShapeError("concat: no inputs");
    const int r = items[0].rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    std::vector<int64_t> out_shape = items[0].shape();
    int64_t total = 0;
    for (const Tensor& t : items) {
        check_dtype(items[0], t, "concat");
        if (t.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && t.dim(i) != out_shape[static_cast<size_t>(i)])
                throw ShapeError("concat: shape mismatch at axis " + std::to_string(i) + ": " +
                                 shape_str(t.shape()) + " vs " + shape_str(items[0].shape()));
        total += t.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = total;
    Tensor out = Tensor::empty(out_shape, items[0].dtype());
    int64_t offset = 0;
    for (const Tensor& t : items) {
        copy_axis_block(t, out, axis, 0, offset, t.dim(axis));
        offset += t.dim(axis);
    }
    // record only the pieces that can take gradients
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::vector<int64_t> starts, lens;
    std::vector<std::vector<int64_t>> shapes;
    offset = 0;
    for (const Tensor& t : items) {
        if (track(t)) {
            inputs.push_back(t.impl());
            starts.push_back(offset);
            lens.push_back(t.dim(axis));
            shapes.push_back(t.shape());
        }
        offset += t.dim(axis);
    }
    if (!inputs.empty()) {
        record_node("concat", out, std::move(inputs), {},
                    [axis, starts, lens, shapes](std::span<const Tensor>, const Tensor& gout) {
                        std::vector<Tensor> gs;
                        for (size_t i = 0; i < starts.size(); ++i) {
                            Tensor g = Tensor::empty(shapes[i], gout.dtype());
                            copy_axis_block(gout, g, axis, starts[i], 0, lens[i]);
                            gs.push_back(std::move(g));
                        }
                        return gs;
                    });
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("slice: axis out of range");
    if (start < 0 || len < 1 || start + len > x.dim(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for axis of size " +
                         std::to_string(x.dim(axis)));
    std::vector<int64_t> out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor out = Tensor::empty(out_shape, x.dtype());
    copy_axis_block(x, out, axis, start, 0, len);
    if (track(x)) {
        std::vector<int64_t> x_shape = x.shape();
        record_node("slice", out, {x.impl()}, {},
                    [axis, start, len, x_shape](std::span<const Tensor>, const Tensor& gout) {
                        Tensor gx = Tensor::zeros(x_shape, gout.dtype());
                        copy_axis_block(gout, gx, axis, 0, start, len);
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}

namespace {
Tensor time_shift_value(const Tensor& x, int64_t delta) {
    const int64_t t = x.dim(1);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    const int64_t lo = std::max<int64_t>(0, delta);
    const int64_t hi = std::min<int64_t>(t, t + delta);
    if (lo < hi) copy_axis_block(x, out, 1, lo - delta, lo, hi - lo);
    return out;
}
}  // namespace

Tensor time_shift(const Tensor& x, int64_t delta) {
    if (x.rank() < 2) throw ShapeError("time_shift: input must have rank >= 2");
    Tensor out = time_shift_value(x, delta);
    if (track(x)) {
        record_node("time_shift", out, {x.impl()}, {},
                    [delta](std::span<const Tensor>, const Tensor& gout) {
                        return std::vector<Tensor>{time_shift_value(gout, -delta)};
                    });
    }
    return out;
}

namespace {
// forward: first channel half reads frame t-1, second half frame t+1;
// swap=true applies the adjoint map
void shift_cls_copy(const Tensor& src, Tensor& dst, bool adjoint) {
    const int64_t b = src.dim(0), t = src.dim(1), d = src.dim(2);
    const int64_t h = (d + 1) / 2;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t c = 0; c < d; ++c) {
                const int64_t dt = (c < h) ? -1 : 1;
                const int64_t ts = adjoint ? ti - dt : ti + dt;
                if (ts < 0 || ts >= t) continue;
                dst.write((bi * t + ti) * d + c, src.read((bi * t + ts) * d + c));
            }
}
}  // namespace

Tensor shift_cls(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("shift_cls: expected [B,T,D], got " + shape_str(x.shape()));
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    shift_cls_copy(x, out, false);
    if (track(x)) {
        record_node("shift_cls", out, {x.impl()}, {},
                    [](std::span<const Tensor>, const Tensor& gout) {
                        Tensor gx = Tensor::zeros(gout.shape(), gout.dtype());
                        shift_cls_copy(gout, gx, true);
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}

Tensor mean_axis(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("mean_axis: axis out of range for " +
                                                shape_str(x.shape()));
    int64_t outer = 1, inner = 1;
    const int64_t a = x.dim(axis);
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
    std::vector<int64_t> out_shape;
    for (int i = 0; i < r; ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    Tensor out = Tensor::empty(out_shape, x.dtype());
    const double inv = 1.0 / static_cast<double>(a);
    S4V_DISPATCH(x.dtype(), {
        S4V_KERNEL_DISPATCH(sum_axis, cptr<scalar_t>(x), mptr<scalar_t>(out), outer, a, inner);
        S4V_KERNEL_DISPATCH(scale, cptr<scalar_t>(out), inv, mptr<scalar_t>(out), out.numel());
    });
    if (track(x)) {
        std::vector<int64_t> x_shape = x.shape();
        record_node("mean_axis", out, {x.impl()}, {},
                    [outer, a, inner, inv, x_shape](std::span<const Tensor>, const Tensor& gout) {
                        Tensor gx = Tensor::empty(x_shape, gout.dtype());
                        S4V_DISPATCH(gout.dtype(), {
                            const scalar_t* go = cptr<scalar_t>(gout);
                            scalar_t* g = mptr<scalar_t>(gx);
                            const scalar_t iv = static_cast<scalar_t>(inv);
                            for (int64_t o = 0; o < outer; ++o)
                                for (int64_t ai = 0; ai < a; ++ai)
                                    for (int64_t i = 0; i < inner; ++i)
                                        g[(o * a + ai) * inner + i] = go[o * inner + i] * iv;
                        });
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::empty({}, x.dtype());
    S4V_DISPATCH(x.dtype(), {
        out.write(0, static_cast<double>(S4V_KERNEL_DISPATCH(sum_all, cptr<scalar_t>(x),
                                                             x.numel())));
    });
    if (track(x)) {
        std::vector<int64_t> x_shape = x.shape();
        record_node("sum_all", out, {x.impl()}, {},
                    [x_shape](std::span<const Tensor>, const Tensor& gout) {
                        return std::vector<Tensor>{
                            Tensor::full(x_shape, gout.item(), gout.dtype())};
                    });
    }
    return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor exp(const Tensor& x) {
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    S4V_DISPATCH(x.dtype(), {
        S4V_KERNEL_DISPATCH(exp_fwd, cptr<scalar_t>(x), mptr<scalar_t>(out), out.numel());
    });
    if (track(x)) {
        record_node("exp", out, {x.impl()}, {out},
                    [](std::span<const Tensor> sv, const Tensor& gout) {
                        const Tensor& y = sv[0];
                        Tensor gx = Tensor::empty(gout.shape(), gout.dtype());
                        S4V_DISPATCH(gout.dtype(), {
                            S4V_KERNEL_DISPATCH(mul, cptr<scalar_t>(gout), cptr<scalar_t>(y),
                                                mptr<scalar_t>(gx), gx.numel());
                        });
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}

Tensor minimum_scalar(const Tensor& x, double c) {
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    for (int64_t i = 0; i < x.numel(); ++i) out.write(i, std::min(x.read(i), c));
    if (track(x)) {
        record_node("minimum_scalar", out, {x.impl()}, {x},
                    [c](std::span<const Tensor> sv, const Tensor& gout) {
                        const Tensor& x_s = sv[0];
                        Tensor gx = Tensor::zeros(gout.shape(), gout.dtype());
                        for (int64_t i = 0; i < gout.numel(); ++i)
                            if (x_s.read(i) <= c) gx.write(i, gout.read(i));
                        return std::vector<Tensor>{gx};
                    });
    }
    return out;
}

Tensor pairwise_token_sim(const Tensor& video, const Tensor& text,
                          const std::vector<int64_t>& text_lens) {
    check_dtype(video, text, "pairwise_token_sim");
    if (video.rank() != 3 || text.rank() != 3)
        throw ShapeError("pairwise_token_sim: expected [B,T,D] and [B2,L,D], got " +
                         shape_str(video.shape()) + " and " + shape_str(text.shape()));
    const int64_t b = video.dim(0), t = video.dim(1), d = video.dim(2);
    const int64_t b2 = text.dim(0), l = text.dim(1);
    if (text.dim(2) != d)
        throw ShapeError("pairwise_token_sim: embedding dims disagree, " +
                         shape_str(video.shape()) + " vs " + shape_str(text.shape()));
    if (t < 1 || l < 1) throw ShapeError("pairwise_token_sim: empty token list");
    if (static_cast<int64_t>(text_lens.size()) != b2)
        throw ShapeError("pairwise_token_sim: need one length per text");
    for (int64_t lj : text_lens)
        if (lj < 1 || lj > l) throw ShapeError("pairwise_token_sim: empty token list");

    Tensor out = Tensor::empty({b, b2}, video.dtype());
    auto am_t = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(b * b2 * l));
    auto am_l = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(b * b2 * t));
    S4V_DISPATCH(video.dtype(), {
        const scalar_t* vp = cptr<scalar_t>(video);
        const scalar_t* tp = cptr<scalar_t>(text);
        scalar_t* op = mptr<scalar_t>(out);
        std::vector<scalar_t> dots(static_cast<size_t>(t * l));
        for (int64_t i = 0; i < b; ++i)
            for (int64_t j = 0; j < b2; ++j) {
                const int64_t lj = text_lens[static_cast<size_t>(j)];
                for (int64_t ti = 0; ti < t; ++ti)
                    for (int64_t li = 0; li < lj; ++li) {
                        scalar_t acc = scalar_t(0);
                        const scalar_t* vr = vp + (i * t + ti) * d;
                        const scalar_t* tr = tp + (j * l + li) * d;
                        for (int64_t e = 0; e < d; ++e) acc += vr[e] * tr[e];
                        dots[static_cast<size_t>(ti * l + li)] = acc;
                    }
                scalar_t s1 = scalar_t(0);
                for (int64_t li = 0; li < lj; ++li) {
                    int32_t best = 0;
                    for (int64_t ti = 1; ti < t; ++ti)
                        if (dots[static_cast<size_t>(ti * l + li)] >
                            dots[static_cast<size_t>(best * l + li)])
                            best = static_cast<int32_t>(ti);
                    (*am_t)[static_cast<size_t>((i * b2 + j) * l + li)] = best;
                    s1 += dots[static_cast<size_t>(best * l + li)];
                }
                s1 /= scalar_t(lj);
                scalar_t s2 = scalar_t(0);
                for (int64_t ti = 0; ti < t; ++ti) {
                    int32_t best = 0;
                    for (int64_t li = 1; li < lj; ++li)
                        if (dots[static_cast<size_t>(ti * l + li)] >
                            dots[static_cast<size_t>(ti * l + best)])
                            best = static_cast<int32_t>(li);
                    (*am_l)[static_cast<size_t>((i * b2 + j) * t + ti)] = best;
                    s2 += dots[static_cast<size_t>(ti * l + best)];
                }
                s2 /= scalar_t(t);
                op[i * b2 + j] = scalar_t(0.5) * (s1 + s2);
            }
    });
    const bool gv = track(video), gt = track(text);
    if (gv || gt) {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::vector<Tensor> saved;
        // d(video) reads the text rows and vice versa
        if (gv) {
            inputs.push_back(video.impl());
            saved.push_back(text);
        }
        if (gt) {
            inputs.push_back(text.impl());
            saved.push_back(video);
        }
        auto lens = text_lens;
        record_node(
            "pairwise_token_sim", out, std::move(inputs), std::move(saved),
            [gv, gt, b, b2, t, l, d, lens, am_t, am_l](std::span<const Tensor> sv,
                                                       const Tensor& gout) {
                size_t si = 0;
                const Tensor x = gv ? sv[si++] : Tensor();  // text
                const Tensor v = gt ? sv[si++] : Tensor();  // video
                std::vector<Tensor> gs;
                Tensor gvid = gv ? Tensor::zeros({b, t, d}, gout.dtype()) : Tensor();
                Tensor gtxt = gt ? Tensor::zeros({b2, l, d}, gout.dtype()) : Tensor();
                S4V_DISPATCH(gout.dtype(), {
                    const scalar_t* vp = gt ? cptr<scalar_t>(v) : nullptr;
                    const scalar_t* tp = gv ? cptr<scalar_t>(x) : nullptr;
                    const scalar_t* gp = cptr<scalar_t>(gout);
                    scalar_t* gvp = gv ? mptr<scalar_t>(gvid) : nullptr;
                    scalar_t* gtp = gt ? mptr<scalar_t>(gtxt) : nullptr;
                    for (int64_t i = 0; i < b; ++i)
                        for (int64_t j = 0; j < b2; ++j) {
                            const int64_t lj = lens[static_cast<size_t>(j)];
                            const scalar_t g = gp[i * b2 + j] * scalar_t(0.5);
                            const scalar_t g1 = g / scalar_t(lj);
                            const scalar_t g2 = g / scalar_t(t);
                            for (int64_t li = 0; li < lj; ++li) {
                                const int32_t bt =
                                    (*am_t)[static_cast<size_t>((i * b2 + j) * l + li)];
                                if (gvp) {
                                    const scalar_t* tr = tp + (j * l + li) * d;
                                    scalar_t* dst = gvp + (i * t + bt) * d;
                                    for (int64_t e = 0; e < d; ++e) dst[e] += g1 * tr[e];
                                }
                                if (gtp) {
                                    const scalar_t* vr = vp + (i * t + bt) * d;
                                    scalar_t* dst = gtp + (j * l + li) * d;
                                    for (int64_t e = 0; e < d; ++e) dst[e] += g1 * vr[e];
                                }
                            }
                            for (int64_t ti = 0; ti < t; ++ti) {
                                const int32_t bl =
                                    (*am_l)[static_cast<size_t>((i * b2 + j) * t + ti)];
                                if (gvp) {
                                    const scalar_t* tr = tp + (j * l + bl) * d;
                                    scalar_t* dst = gvp + (i * t + ti) * d;
                                    for (int64_t e = 0; e < d; ++e) dst[e] += g2 * tr[e];
                                }
                                if (gtp) {
                                    const scalar_t* vr = vp + (i * t + ti) * d;
                                    scalar_t* dst = gtp + (j * l + bl) * d;
                                    for (int64_t e = 0; e < d; ++e) dst[e] += g2 * vr[e];
                                }
                            }
                        }
                });
                if (gv) gs.push_back(std::move(gvid));
                if (gt) gs.push_back(std::move(gtxt));
                return gs;
            });
    }
    return out;
}

}  // namespace s4v::ops
