#pragma once

#include <functional>
#include <unordered_set>
#include <utility>
#include <vector>

#include "s4v/ops.hpp"
#include "s4v/tape.hpp"
#include "s4v/tensor.hpp"

namespace s4v::testing {

inline Tensor rand_tensor(std::vector<int64_t> shape, Rng& rng, DType dt, double lo = -1.0,
                          double hi = 1.0) {
    Tensor t = Tensor::empty(std::move(shape), dt);
    for (int64_t i = 0; i < t.numel(); ++i) t.write(i, rng.uniform(lo, hi));
    return t;
}

struct FdReport {
    double max_rel = 0.0;
    int64_t checked = 0;
};

// |fd - tape| / max(1, |fd|, |tape|): relative for large values, absolute
// near zero (zero-init branches have exactly-zero gradients)
inline double rel_err(double fd, double an) {
    const double denom = std::max({1.0, std::fabs(fd), std::fabs(an)});
    return std::fabs(fd - an) / denom;
}

// Central finite differences against tape gradients. `forward` must rebuild
// the whole computation from the current parameter values and return the
// scalar loss; it must be side-effect free (batchnorm with
// update_running=false).
inline FdReport fd_check(const std::vector<Tensor>& params,
                         const std::function<Tensor()>& forward, double h = 1e-5) {
    Tape tape;
    std::vector<Tensor> grads;
    {
        TapeScope scope(tape);
        Tensor loss = forward();
        tape.backward(loss);
    }
    for (const Tensor& p : params) {
        Tensor g = p.grad();
        grads.push_back(g.defined() ? g.clone() : Tensor::zeros(p.shape(), p.dtype()));
    }

    FdReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double orig = p.read(i);
            p.write(i, orig + h);
            const double up = forward().item();
            p.write(i, orig - h);
            const double down = forward().item();
            p.write(i, orig);
            const double fd = (up - down) / (2.0 * h);
            const double an = grads[pi].read(i);
            report.max_rel = std::max(report.max_rel, rel_err(fd, an));
            ++report.checked;
        }
    }
    for (const Tensor& p : params) p.impl()->grad.reset();
    return report;
}

// independent walk over the recorded nodes; deduplicates retained buffers by
// storage identity and splits persistent (parameter) bytes out
inline std::pair<size_t, size_t> tape_bytes_oracle(const Tape& tape) {
    std::unordered_set<const Storage*> seen;
    size_t total = 0, activation = 0;
    for (const TapeNode& node : tape.nodes()) {
        for (const Tensor& t : node.saved) {
            if (seen.insert(t.storage_key()).second) {
                total += t.nbytes();
                if (!t.storage_key()->persistent) activation += t.nbytes();
            }
        }
    }
    return {total, activation};
}

inline bool bits_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && a.dtype() == b.dtype() &&
           std::memcmp(a.raw(), b.raw(), a.nbytes()) == 0;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.read(i) - b.read(i)));
    return m;
}

}  // namespace s4v::testing
