#pragma once

#include <string>
#include <utility>
#include <vector>

#include "s4v/tensor.hpp"

namespace s4v {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.15;
};

// Decoupled weight decay: the decay term never enters the moment buffers, so
// a zero gradient still shrinks the parameter by lr*wd*p exactly.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg);

    // applies one update using each parameter's accumulated gradient (a
    // missing gradient counts as zero) and clears the gradients
    void step(double lr);
    void step() { step(cfg_.lr); }

    int64_t steps_taken() const { return t_; }
    size_t state_bytes() const;  // two moment buffers per parameter

private:
    struct Slot {
        std::string name;
        Tensor param, m, v;
    };
    std::vector<Slot> slots_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

// linear warmup 0 -> base_lr over warmup_steps, then half-cosine to 0 at
// total_steps
double cosine_schedule(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr);

}  // namespace s4v
