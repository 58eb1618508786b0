#include "s4v/tape.hpp"

#include <unordered_map>

namespace s4v {

namespace {
thread_local Tape* g_current_tape = nullptr;
thread_local bool g_grad_enabled = true;
}  // namespace

Tape* Tape::current() { return g_current_tape; }

bool grad_enabled() { return g_grad_enabled; }
bool recording_active() { return g_current_tape != nullptr && g_grad_enabled; }

TapeScope::TapeScope(Tape& tape) : prev_(g_current_tape) { g_current_tape = &tape; }
TapeScope::~TapeScope() { g_current_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = prev_; }

int64_t Tape::record(TapeNode node) {
    for (const Tensor& s : node.saved) {
        const Storage* key = s.storage_key();
        if (counted_.insert(key).second) {
            saved_bytes_ += s.nbytes();
            if (!key->persistent) saved_activation_bytes_ += s.nbytes();
        }
    }
    if (auto out = node.output.lock()) out->producer = static_cast<int64_t>(nodes_.size());
    nodes_.push_back(std::move(node));
    return static_cast<int64_t>(nodes_.size()) - 1;
}

void Tape::reset() {
    nodes_.clear();
    counted_.clear();
    saved_bytes_ = 0;
    saved_activation_bytes_ = 0;
}

void Tape::backward(const Tensor& loss) {
    NoGradScope no_recording_inside_backward;
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (loss.impl()->producer < 0 || static_cast<size_t>(loss.impl()->producer) >= nodes_.size())
        throw ShapeError("backward: loss is not connected to this tape");

    struct Slot {
        Tensor g;
        bool owned = false;  // false while g may alias another buffer
    };
    std::unordered_map<TensorImpl*, Slot> grads;
    grads[loss.impl().get()] = {Tensor::full(loss.shape(), 1.0, loss.dtype()), true};

    auto contribute = [&](TensorImpl* target, Tensor&& g) {
        auto it = grads.find(target);
        if (it == grads.end()) {
            grads.emplace(target, Slot{std::move(g), false});
            return;
        }
        Slot& slot = it->second;
        if (!slot.owned) {
            slot.g = slot.g.clone();
            slot.owned = true;
        }
        int64_t n = slot.g.numel();
        if (slot.g.dtype() == DType::F32) {
            float* dst = slot.g.f32();
            const float* src = g.f32();
            for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
        } else {
            double* dst = slot.g.f64();
            const double* src = g.f64();
            for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
        }
    };

    for (int64_t ni = static_cast<int64_t>(nodes_.size()) - 1; ni >= 0; --ni) {
        TapeNode& node = nodes_[static_cast<size_t>(ni)];
        auto out = node.output.lock();
        if (!out) continue;
        auto git = grads.find(out.get());
        if (git == grads.end()) continue;
        Tensor gout = git->second.g;
        std::vector<Tensor> in_grads = node.backward(node.saved, gout);
        if (in_grads.size() != node.inputs.size())
            throw Error(std::string("backward of op '") + node.op +
                        "' returned wrong number of gradients");
        for (size_t j = 0; j < node.inputs.size(); ++j) {
            if (!in_grads[j].defined()) continue;
            TensorImpl* target = node.inputs[j].get();
            if (target->producer >= 0) {
                contribute(target, std::move(in_grads[j]));
            } else if (target->requires_grad) {
                Tensor(node.inputs[j]).accumulate_grad(in_grads[j]);
            }
        }
        grads.erase(out.get());
    }
    reset();
}

}  // namespace s4v
