#include "s4v/side.hpp"

#include <cmath>

namespace s4v {

namespace O = s4v::ops;

void SideConfig::validate(const ViTConfig& backbone) const {
    if (layers < 1 || layers > backbone.layers)
        throw ConfigError("side: layers must be in 1.." + std::to_string(backbone.layers));
    if (dim < 1 || dim > backbone.dim)
        throw ConfigError("side: dim must be in 1.." + std::to_string(backbone.dim));
    if (dim % effective_heads() != 0)
        throw ConfigError("side: dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(effective_heads()));
    if (patch_kernel_t < 1 || patch_kernel_t % 2 == 0)
        throw ConfigError("side: patch_kernel_t must be odd");
    if (mlp_ratio < 1) throw ConfigError("side: mlp_ratio must be >= 1");
}

FusionPlan make_fusion_plan(int64_t backbone_layers, int64_t side_layers, SideConfig::Fusion f) {
    if (side_layers < 1 || side_layers > backbone_layers)
        throw ConfigError("fusion plan: side layers " + std::to_string(side_layers) +
                          " exceed backbone layers " + std::to_string(backbone_layers));
    FusionPlan plan;
    plan.reserve(static_cast<size_t>(side_layers));
    if (f == SideConfig::Fusion::kTop) {
        for (int64_t i = backbone_layers - side_layers + 1; i <= backbone_layers; ++i)
            plan.push_back(i);
    } else {
        for (int64_t i = 1; i <= side_layers; ++i) {
            // ceil(i*L/l)
            plan.push_back((i * backbone_layers + side_layers - 1) / side_layers);
        }
    }
    return plan;
}

SideParams make_side(nn::ParamStore& store, const std::string& prefix, const SideConfig& cfg,
                     const ViTConfig& backbone, Rng& rng, DType dt) {
    cfg.validate(backbone);
    SideParams p;
    p.cfg = cfg;
    const int64_t D = backbone.dim, d = cfg.dim, P = backbone.patch_size;
    const int64_t pdim = 3 * P * P;
    for (int64_t k = 0; k < cfg.patch_kernel_t; ++k) {
        const std::string name = prefix + ".patch_embed.weight_t" + std::to_string(k);
        Rng r = rng.fork(fnv1a64(name));
        p.patch_weights.push_back(
            store.add(name, nn::xavier_uniform({pdim, d}, pdim, d, r, dt), true));
    }
    p.patch_bias = store.add(prefix + ".patch_embed.bias", Tensor::zeros({d}, dt), true);
    for (int64_t i = 0; i < cfg.layers; ++i) {
        const std::string bp = prefix + ".blocks." + std::to_string(i);
        SideParams::Block b;
        b.fuse_norm = nn::make_layernorm(store, bp + ".fuse_norm", D, dt, true);
        b.down = nn::make_linear(store, bp + ".down", D, d, rng, dt, true);
        if (cfg.cls_shift) b.down_cls = nn::make_linear(store, bp + ".down_cls", D, d, rng, dt, true);
        if (cfg.temporal == SideConfig::Temporal::kConv3d) {
            b.bn1 = nn::make_batchnorm(store, bp + ".bn1", d, dt, true);
            b.pw1 = nn::make_linear(store, bp + ".pw1", d, d, rng, dt, true);
            Rng r = rng.fork(fnv1a64(bp + ".dw"));
            b.dw = store.add(bp + ".dw.weight", nn::xavier_uniform({d, 3}, 3, 3, r, dt), true);
            b.pw2 = nn::make_linear(store, bp + ".pw2", d, d, rng, dt, true, true);
        } else if (cfg.temporal == SideConfig::Temporal::kAttention) {
            b.ln_t = nn::make_layernorm(store, bp + ".ln_t", d, dt, true);
            b.tattn = nn::make_attention(store, bp + ".tattn", d, cfg.effective_heads(), rng, dt,
                                         true, true);
        }
        b.ln_attn = nn::make_layernorm(store, bp + ".ln_attn", d, dt, true);
        b.attn = nn::make_attention(store, bp + ".attn", d, cfg.effective_heads(), rng, dt, true,
                                    true);
        b.bn2 = nn::make_batchnorm(store, bp + ".bn2", d, dt, true);
        b.mlp1 = nn::make_linear(store, bp + ".mlp1", d, cfg.mlp_ratio * d, rng, dt, true);
        b.mlp2 = nn::make_linear(store, bp + ".mlp2", cfg.mlp_ratio * d, d, rng, dt, true, true);
        p.blocks.push_back(std::move(b));
    }
    return p;
}

Tensor side_patch_embed(const Tensor& frames, const SideParams& params, const ViTConfig& backbone) {
    const SideConfig& cfg = params.cfg;
    const int64_t B = frames.dim(0), T = frames.dim(1);
    const int64_t N = backbone.patches(), K = 3 * backbone.patch_size * backbone.patch_size;
    Tensor cols = O::reshape(patchify(frames, backbone), {B, T, N, K});
    const int64_t half = cfg.patch_kernel_t / 2;
    Tensor acc;
    for (int64_t k = 0; k < cfg.patch_kernel_t; ++k) {
        // tap k reads frame t + (k - half): shift the column stack the other way
        const int64_t delta = half - k;
        Tensor shifted = (delta == 0) ? cols : O::time_shift(cols, delta);
        Tensor term = O::matmul(shifted, params.patch_weights[static_cast<size_t>(k)]);
        acc = acc.defined() ? O::add(acc, term) : term;
    }
    return O::add(acc, params.patch_bias);
}

Tensor fuse(const FeatureTap& tap, const Tensor& s_prev, const SideParams::Block& block) {
    if (tap.patches.dim(2) != s_prev.dim(2))
        throw ConfigError("fuse: patch counts disagree, tap " + shape_str(tap.patches.shape()) +
                          " vs side " + shape_str(s_prev.shape()));
    return O::add(s_prev, block.down.forward(block.fuse_norm.forward(tap.patches)));
}

Tensor temporal_conv_block(const Tensor& s, SideParams::Block& block, bool training) {
    Tensor h = block.bn1.forward(s, training);
    h = block.pw1.forward(h);
    h = O::conv_temporal_depthwise(h, block.dw);
    h = block.pw2.forward(h);
    return O::add(s, h);
}

Tensor temporal_attention_block(const Tensor& s, const SideParams::Block& block) {
    Tensor h = block.ln_t.forward(s);
    Tensor swapped = O::permute(h, {0, 2, 1, 3});  // [B,N,T,d]
    Tensor attended = nn::attention_forward(block.tattn, swapped, swapped);
    return O::add(s, O::permute(attended, {0, 2, 1, 3}));
}

Tensor shifted_attention_block(const Tensor& s, const Tensor& tap_cls,
                               const SideParams::Block& block, bool cls_shift) {
    const int64_t B = s.dim(0), T = s.dim(1), d = s.dim(3);
    Tensor q = block.ln_attn.forward(s);
    Tensor kv = q;
    if (cls_shift) {
        Tensor shifted = O::shift_cls(tap_cls);
        Tensor tok = block.down_cls.forward(block.fuse_norm.forward(shifted));  // [B,T,d]
        kv = O::concat({q, O::reshape(tok, {B, T, 1, d})}, 2);
    }
    return O::add(s, nn::attention_forward(block.attn, q, kv));
}

Tensor mlp_block(const Tensor& s, SideParams::Block& block, bool training) {
    Tensor h = block.bn2.forward(s, training);
    h = block.mlp2.forward(O::gelu(block.mlp1.forward(h)));
    return O::add(s, h);
}

Tensor side_forward(const Tensor& frames, const BackboneOutput& backbone_out, SideParams& params,
                    const FusionPlan& plan, const ViTConfig& backbone, bool training) {
    const SideConfig& cfg = params.cfg;
    if (plan.size() != params.blocks.size())
        throw ConfigError("side_forward: plan has " + std::to_string(plan.size()) +
                          " layers, side network has " + std::to_string(params.blocks.size()));
    if (backbone_out.taps.size() != plan.size())
        throw ConfigError("side_forward: got " + std::to_string(backbone_out.taps.size()) +
                          " taps for a plan of " + std::to_string(plan.size()));
    Tensor s = side_patch_embed(frames, params, backbone);
    for (size_t i = 0; i < plan.size(); ++i) {
        const FeatureTap& tap = backbone_out.taps[i];
        if (tap.layer_index != plan[i])
            throw ConfigError("side_forward: tap " + std::to_string(tap.layer_index) +
                              " does not match plan entry " + std::to_string(plan[i]));
        SideParams::Block& block = params.blocks[i];
        s = fuse(tap, s, block);
        switch (cfg.temporal) {
            case SideConfig::Temporal::kConv3d:
                s = temporal_conv_block(s, block, training);
                break;
            case SideConfig::Temporal::kAttention:
                s = temporal_attention_block(s, block);
                break;
            case SideConfig::Temporal::kNone:
                break;
        }
        s = shifted_attention_block(s, tap.cls, block, cfg.cls_shift);
        s = mlp_block(s, block, training);
    }
    return s;
}

}  // namespace s4v
