#pragma once

#include <functional>
#include <string>
#include <vector>

#include "s4v/side.hpp"
#include "s4v/tape.hpp"
#include "s4v/vit.hpp"

namespace s4v {

enum class Strategy { kSideTuning, kAdapter, kFullFinetune };
const char* strategy_name(Strategy s);

// One training step's memory, split by where the bytes live. Gradients take
// one buffer per trainable scalar and AdamW keeps two moment buffers, so
// total = activations + parameters + gradients + optimizer state.
struct MemoryReport {
    Strategy strategy = Strategy::kSideTuning;
    size_t saved_activation_bytes = 0;
    size_t parameter_bytes = 0;
    size_t trainable_parameter_bytes = 0;
    size_t gradient_bytes = 0;
    size_t optimizer_state_bytes = 0;
    size_t total_training_bytes() const {
        return saved_activation_bytes + parameter_bytes + gradient_bytes + optimizer_state_bytes;
    }
};

struct StrategyDescriptor {
    Strategy strategy = Strategy::kSideTuning;
    ViTConfig backbone;
    SideConfig side;          // side-tuning topology
    int64_t adapter_dim = 64; // bottleneck width of the adapter baseline
    int64_t batch = 2;
    int64_t frames = 4;
    int64_t num_classes = 4;
    uint64_t seed = 1234;
    DType dtype = DType::F32;
};

// Builds the descriptor's model, runs one forward + loss on a fresh tape and
// reads the tape's activation counter; parameter/gradient/optimizer bytes
// come from the registry. The backward pass runs afterwards to prove the
// step is trainable.
MemoryReport measure_tape(const StrategyDescriptor& desc);

// Closed-form per-layer activation counts mirroring the need-driven
// saved-for-backward policy the ops implement. Small temporaries (loss
// constants, per-row statistics vectors) are modeled coarsely, so measured
// and analytic agree to a few percent, not exactly.
MemoryReport analytic_memory(const StrategyDescriptor& desc);

struct ComparisonRow {
    StrategyDescriptor desc;
    MemoryReport measured;
    MemoryReport analytic;
};

// measured + analytic per descriptor, sorted by measured total bytes
std::vector<ComparisonRow> compare_strategies(const std::vector<StrategyDescriptor>& descs);

// CSV: strategy,backbone,layers,dim,batch,frames,activation_bytes,trainable_params,total_bytes
void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& path);

}  // namespace s4v
