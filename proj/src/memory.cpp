#include "s4v/memory.hpp"

#include <algorithm>
#include <fstream>

#include "s4v/heads.hpp"

namespace s4v {

namespace O = s4v::ops;

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::kSideTuning: return "side_tuning";
        case Strategy::kAdapter: return "adapter";
        case Strategy::kFullFinetune: return "full_ft";
    }
    return "?";
}

namespace {

Tensor random_frames(const StrategyDescriptor& desc, Rng& rng) {
    Tensor frames = Tensor::empty(
        {desc.batch, desc.frames, 3, desc.backbone.image_size, desc.backbone.image_size},
        desc.dtype);
    for (int64_t i = 0; i < frames.numel(); ++i) frames.write(i, rng.uniform(-1, 1));
    return frames;
}

std::vector<int64_t> random_labels(const StrategyDescriptor& desc, Rng& rng) {
    std::vector<int64_t> labels(static_cast<size_t>(desc.batch));
    for (auto& l : labels) l = rng.randint(desc.num_classes);
    return labels;
}

}  // namespace

MemoryReport measure_tape(const StrategyDescriptor& desc) {
    Rng rng(desc.seed);
    nn::ParamStore store;
    MemoryReport report;
    report.strategy = desc.strategy;

    Tensor frames = random_frames(desc, rng);
    const auto labels = random_labels(desc, rng);

    Tape tape;
    TapeScope scope(tape);
    Tensor loss;
    if (desc.strategy == Strategy::kSideTuning) {
        ViTParams vit = make_vit(store, "vit", desc.backbone, rng, desc.dtype, false);
        SideParams side = make_side(store, "side", desc.side, desc.backbone, rng, desc.dtype);
        nn::Linear cls = nn::make_linear(store, "head.classifier", desc.side.dim,
                                         desc.num_classes, rng, desc.dtype, true);
        FusionPlan plan =
            make_fusion_plan(desc.backbone.layers, desc.side.layers, desc.side.fusion);
        BackboneOutput bo = vit_forward(frames, vit, plan);
        Tensor s_out = side_forward(frames, bo, side, plan, desc.backbone, true);
        loss = label_smoothing_ce(recognition_head(s_out, cls).logits, labels, 0.0);
    } else {
        const bool trainable = desc.strategy == Strategy::kFullFinetune;
        ViTParams vit = make_vit(store, "vit", desc.backbone, rng, desc.dtype, trainable);
        std::vector<Adapter> adapters;
        if (desc.strategy == Strategy::kAdapter)
            adapters = make_adapters(store, "adapter", desc.backbone, desc.adapter_dim, rng,
                                     desc.dtype);
        nn::Linear cls = nn::make_linear(store, "head.classifier", desc.backbone.dim,
                                         desc.num_classes, rng, desc.dtype, true);
        BackboneOutput bo = vit_forward_recorded(
            frames, vit, {}, adapters.empty() ? nullptr : &adapters);
        loss = label_smoothing_ce(cls.forward(O::mean_axis(bo.z_out, 1)), labels, 0.0);
    }

    report.saved_activation_bytes = tape.saved_activation_bytes();
    report.parameter_bytes = store.total_bytes();
    report.trainable_parameter_bytes = store.trainable_bytes();
    report.gradient_bytes = report.trainable_parameter_bytes;
    report.optimizer_state_bytes = 2 * report.trainable_parameter_bytes;
    tape.backward(loss);  // the step must actually be trainable
    return report;
}

namespace {

struct Counts {
    int64_t activation = 0;  // scalars
    int64_t params = 0;
    int64_t trainable = 0;
};

int64_t attention_params(int64_t dim) { return 4 * (dim * dim + dim); }

// activation scalars one transformer block saves under the need-driven
// policy; `full` means its own weights are trainable (inputs of every matmul
// get saved), otherwise only the tensor-valued backward needs survive
int64_t vit_block_activation(int64_t tokens, int64_t dim, int64_t heads, int64_t mlp_ratio,
                             bool full) {
    const int64_t td = tokens * dim;
    const int64_t maps = heads * tokens * tokens;
    if (full) {
        // ln1 xhat + (qkv-in, qh, khT, vh, o-in) + ln2 xhat + (mlp1-in,
        // gelu-in, mlp2-in)
        return td * (1 + 5 + 1 + 1 + mlp_ratio + mlp_ratio) + 2 * tokens + maps;
    }
    // frozen-on-path: ln xhats survive for dx, q/k/v/o inputs do not;
    // qh/khT/vh and the gelu input still do
    return td * (1 + 3 + 1 + mlp_ratio) + 2 * tokens + maps;
}

Counts analytic_side(const StrategyDescriptor& desc) {
    const ViTConfig& bb = desc.backbone;
    const SideConfig& sc = desc.side;
    const int64_t B = desc.batch, T = desc.frames, N = bb.patches();
    const int64_t D = bb.dim, d = sc.dim, K = 3 * bb.patch_size * bb.patch_size;
    const int64_t h = sc.effective_heads();
    const int64_t btn = B * T * N;
    const int64_t nk = sc.cls_shift ? N + 1 : N;

    Counts c;
    // Per-channel statistic vectors (batchnorm rstd, size d) are ignored:
    // they are the "small temporaries" the model is allowed to drop, and
    // leaving them out keeps the count exactly linear in the batch.
    // patch embed: one shifted column stack per temporal tap
    c.activation += sc.patch_kernel_t * B * T * N * K;
    int64_t per_layer = 0;
    // fusion: normalized tap + its affine image (both width D)
    per_layer += 2 * btn * D;
    switch (sc.temporal) {
        case SideConfig::Temporal::kConv3d:
            per_layer += 4 * btn * d;  // bn xhat/out, pw1 out, dw out
            break;
        case SideConfig::Temporal::kAttention:
            per_layer += 6 * btn * d + btn + B * N * h * T * T;
            break;
        case SideConfig::Temporal::kNone:
            break;
    }
    // spatial attention: ln xhat + rstd, q input, kv concat, qh/khT/vh heads,
    // softmax maps, merged context, and the shifted-[CLS] pair
    per_layer += btn * d + btn;                    // ln_attn
    per_layer += btn * d;                          // q input
    per_layer += sc.cls_shift ? B * T * nk * d : 0;  // kv concat
    per_layer += btn * d + 2 * B * T * nk * d;     // qh + khT + vh
    per_layer += B * T * h * N * nk;               // softmax
    per_layer += btn * d;                          // context fed to the o-projection
    per_layer += sc.cls_shift ? 2 * B * T * D : 0;  // normalized + projected [CLS]
    // MLP: bn xhat, mlp1 input, gelu input, mlp2 input
    per_layer += btn * d + btn * d + 2 * sc.mlp_ratio * btn * d;
    c.activation += sc.layers * per_layer;
    // head: pooled representation + log-softmax output + smoothing targets
    c.activation += B * d + 2 * B * desc.num_classes;

    // parameters
    int64_t vit_params = K * D + D + D + (1 + N) * D;
    vit_params += bb.layers * (4 * D + attention_params(D) + D * bb.mlp_ratio * D +
                               bb.mlp_ratio * D + bb.mlp_ratio * D * D + D);
    vit_params += 2 * D + D * bb.effective_proj_dim();
    int64_t side_params = sc.patch_kernel_t * K * d + d;
    int64_t per_block = 2 * D + (D * d + d) + (sc.cls_shift ? D * d + d : 0);
    if (sc.temporal == SideConfig::Temporal::kConv3d)
        per_block += 4 * d + (d * d + d) + 3 * d + (d * d + d);
    else if (sc.temporal == SideConfig::Temporal::kAttention)
        per_block += 2 * d + attention_params(d);
    per_block += 2 * d + attention_params(d);
    per_block += 4 * d + (d * sc.mlp_ratio * d + sc.mlp_ratio * d) + (sc.mlp_ratio * d * d + d);
    side_params += sc.layers * per_block;
    const int64_t head_params = d * desc.num_classes + desc.num_classes;

    c.params = vit_params + side_params + head_params;
    // batchnorm running buffers are persistent but not trainable
    const int64_t bn_buffers =
        (sc.temporal == SideConfig::Temporal::kConv3d ? 2 : 1) * sc.layers * 2 * d;
    c.trainable = side_params + head_params - bn_buffers;
    return c;
}

Counts analytic_backbone(const StrategyDescriptor& desc, bool adapters) {
    const ViTConfig& bb = desc.backbone;
    const int64_t B = desc.batch, T = desc.frames, N = bb.patches(), S = N + 1;
    const int64_t D = bb.dim, K = 3 * bb.patch_size * bb.patch_size, r = desc.adapter_dim;
    const int64_t bts = B * T * S;
    const int64_t tokens_act = T * S * B;
    (void)tokens_act;

    Counts c;
    const int64_t block_full =
        vit_block_activation(S, D, bb.effective_heads(), bb.mlp_ratio, true) * B * T;
    const int64_t block_frozen =
        vit_block_activation(S, D, bb.effective_heads(), bb.mlp_ratio, false) * B * T;
    if (!adapters) {
        c.activation += B * T * N * K;  // patch columns feed the trainable embedding
        c.activation += bb.layers * block_full;
    } else {
        // the block before the first adapter runs on constants; every later
        // one sits on the gradient path
        c.activation += (bb.layers - 1) * block_frozen;
        c.activation += bb.layers * (bts * D + 2 * bts * r);  // adapter internals
    }
    c.activation += B * T * D + B * T;  // final norm on the [CLS] trajectory
    c.activation += B * D + 2 * B * desc.num_classes;  // pooled feature + loss terms

    int64_t vit_params = K * D + D + D + (1 + N) * D;
    vit_params += bb.layers * (4 * D + attention_params(D) + D * bb.mlp_ratio * D +
                               bb.mlp_ratio * D + bb.mlp_ratio * D * D + D);
    vit_params += 2 * D;
    const int64_t proj = D * bb.effective_proj_dim();
    const int64_t head_params = D * desc.num_classes + desc.num_classes;
    const int64_t adapter_params = adapters ? bb.layers * (D * r + r + r * D + D) : 0;
    c.params = vit_params + proj + head_params + adapter_params;
    c.trainable = adapters ? adapter_params + head_params : vit_params + head_params;
    return c;
}

}  // namespace

MemoryReport analytic_memory(const StrategyDescriptor& desc) {
    Counts c;
    switch (desc.strategy) {
        case Strategy::kSideTuning: c = analytic_side(desc); break;
        case Strategy::kAdapter: c = analytic_backbone(desc, true); break;
        case Strategy::kFullFinetune: c = analytic_backbone(desc, false); break;
    }
    const size_t es = dtype_size(desc.dtype);
    MemoryReport r;
    r.strategy = desc.strategy;
    r.saved_activation_bytes = static_cast<size_t>(c.activation) * es;
    r.parameter_bytes = static_cast<size_t>(c.params) * es;
    r.trainable_parameter_bytes = static_cast<size_t>(c.trainable) * es;
    r.gradient_bytes = r.trainable_parameter_bytes;
    r.optimizer_state_bytes = 2 * r.trainable_parameter_bytes;
    return r;
}

std::vector<ComparisonRow> compare_strategies(const std::vector<StrategyDescriptor>& descs) {
    if (descs.size() < 2)
        throw ConfigError("compare_strategies: need at least two descriptors");
    std::vector<ComparisonRow> rows;
    for (const auto& d : descs) {
        ComparisonRow row;
        row.desc = d;
        row.measured = measure_tape(d);
        row.analytic = analytic_memory(d);
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
        return a.measured.total_training_bytes() < b.measured.total_training_bytes();
    });
    return rows;
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "strategy,backbone,layers,dim,batch,frames,activation_bytes,trainable_params,"
           "total_bytes\n";
    for (const auto& row : rows) {
        const auto& d = row.desc;
        const int64_t layers =
            d.strategy == Strategy::kSideTuning ? d.side.layers : d.backbone.layers;
        const int64_t dim = d.strategy == Strategy::kSideTuning ? d.side.dim : d.backbone.dim;
        out << strategy_name(d.strategy) << ",vit-L" << d.backbone.layers << "-D"
            << d.backbone.dim << "," << layers << "," << dim << "," << d.batch << "," << d.frames
            << "," << row.measured.saved_activation_bytes << ","
            << row.measured.trainable_parameter_bytes / dtype_size(d.dtype) << ","
            << row.measured.total_training_bytes() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace s4v
