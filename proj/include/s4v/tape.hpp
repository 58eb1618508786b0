#pragma once

#include <functional>
#include <span>
#include <unordered_set>
#include <vector>

#include "s4v/tensor.hpp"

namespace s4v {

// One recorded operation. `inputs` lists only tensors a gradient can flow to
// (requires_grad leaves and tape intermediates); constants never appear
// there. `saved` lists exactly the tensors whose values the backward closure
// reads: an op saves a tensor only when some requested gradient needs it, so
// a frozen weight on the gradient path is retained while its input is not.
// Small integer metadata (axes, argmax indices, shapes) lives inside the
// closure and is not counted as saved bytes.
struct TapeNode {
    const char* op = "";
    std::vector<Tensor> saved;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::weak_ptr<TensorImpl> output;
    // returns one gradient per entry of `inputs` (undefined Tensor = no grad);
    // returned tensors may alias grad_out, the engine copies before mutating
    std::function<std::vector<Tensor>(std::span<const Tensor> saved, const Tensor& grad_out)>
        backward;
};

// Records one training step. saved_bytes() deduplicates by storage buffer, so
// a tensor retained by several nodes is counted once; activation bytes
// additionally exclude persistent buffers (parameters and running stats),
// which exist independently of the step.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();

    size_t node_count() const { return nodes_.size(); }
    size_t saved_bytes() const { return saved_bytes_; }
    size_t saved_activation_bytes() const { return saved_activation_bytes_; }
    const std::vector<TapeNode>& nodes() const { return nodes_; }

    int64_t record(TapeNode node);

    // reverse-topological accumulation from a scalar loss; consumes the tape
    void backward(const Tensor& loss);
    void reset();

private:
    std::vector<TapeNode> nodes_;
    size_t saved_bytes_ = 0;
    size_t saved_activation_bytes_ = 0;
    std::unordered_set<const Storage*> counted_;
};

class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// Computations inside record nothing and produce constants.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    bool prev_;
};

bool grad_enabled();
bool recording_active();  // a tape is bound and gradients are enabled

template <class F>
auto no_grad(F&& f) {
    NoGradScope scope;
    return f();
}

}  // namespace s4v
