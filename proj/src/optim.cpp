#include "s4v/optim.hpp"

#include <cmath>

#include "s4v/kernels.hpp"

namespace s4v {

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg) : cfg_(cfg) {
    for (auto& [name, p] : params) {
        if (!p.requires_grad())
            throw ConfigError("AdamW: parameter '" + name + "' is not trainable");
        Slot s;
        s.name = name;
        s.param = p;
        s.m = Tensor::zeros(p.shape(), p.dtype());
        s.v = Tensor::zeros(p.shape(), p.dtype());
        slots_.push_back(std::move(s));
    }
}

void AdamW::step(double lr) {
    ++t_;
    for (Slot& s : slots_) {
        Tensor g = s.param.grad();
        Tensor zero;
        if (!g.defined()) {
            zero = Tensor::zeros(s.param.shape(), s.param.dtype());
            g = zero;
        }
        const int64_t n = s.param.numel();
        if (s.param.dtype() == DType::F32) {
            S4V_KERNEL_DISPATCH(adamw_update, s.param.f32(), g.f32(), s.m.f32(), s.v.f32(), n, lr,
                                cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay, t_);
        } else {
            S4V_KERNEL_DISPATCH(adamw_update, s.param.f64(), g.f64(), s.m.f64(), s.v.f64(), n, lr,
                                cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay, t_);
        }
        s.param.reset_grad();
    }
}

size_t AdamW::state_bytes() const {
    size_t n = 0;
    for (const Slot& s : slots_) n += s.m.nbytes() + s.v.nbytes();
    return n;
}

double cosine_schedule(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr) {
    if (total_steps < 1 || step < 0 || step > total_steps)
        throw ConfigError("cosine_schedule: step must lie in [0, total_steps]");
    if (warmup_steps < 0 || warmup_steps >= total_steps)
        throw ConfigError("cosine_schedule: warmup_steps must be < total_steps");
    if (step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return 0.5 * base_lr * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace s4v
