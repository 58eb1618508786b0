#pragma once

#include <string>
#include <vector>

#include "s4v/nn.hpp"
#include "s4v/vit.hpp"

namespace s4v {

struct SideConfig {
    int64_t layers = 2;
    int64_t dim = 16;
    enum class Fusion { kTop, kInterval };
    Fusion fusion = Fusion::kInterval;
    int64_t heads = 0;  // 0 -> max(1, dim/64)
    enum class Temporal { kConv3d, kAttention, kNone };
    Temporal temporal = Temporal::kConv3d;
    bool cls_shift = true;
    int64_t patch_kernel_t = 3;  // temporal extent of the 3D patch embedding
    int64_t mlp_ratio = 4;

    int64_t effective_heads() const { return heads > 0 ? heads : std::max<int64_t>(1, dim / 64); }
    void validate(const ViTConfig& backbone) const;
};

// side layer i (1-based) ingests the tap from backbone layer plan[i-1];
// strictly increasing, last entry is always the final backbone layer
using FusionPlan = std::vector<int64_t>;
FusionPlan make_fusion_plan(int64_t backbone_layers, int64_t side_layers, SideConfig::Fusion f);

struct SideParams {
    SideConfig cfg;
    std::vector<Tensor> patch_weights;  // kernel_t entries of [3*P*P, d]
    Tensor patch_bias;                  // [d]
    struct Block {
        nn::LayerNorm fuse_norm;  // over D, shared by patch and [CLS] paths
        nn::Linear down;          // D -> d
        nn::Linear down_cls;      // D -> d, separate weights for the shifted [CLS]
        // temporal conv arm
        nn::BatchNorm3d bn1;
        nn::Linear pw1, pw2;
        Tensor dw;  // [d,3]
        // temporal attention arm
        nn::LayerNorm ln_t;
        nn::Attention tattn;
        // spatial attention + MLP
        nn::LayerNorm ln_attn;
        nn::Attention attn;
        nn::BatchNorm3d bn2;
        nn::Linear mlp1, mlp2;
    };
    std::vector<Block> blocks;
};

SideParams make_side(nn::ParamStore& store, const std::string& prefix, const SideConfig& cfg,
                     const ViTConfig& backbone, Rng& rng, DType dt);

// 3D patch projection without a [CLS] slot: [B,T,3,H,W] -> [B,T,N,d]
Tensor side_patch_embed(const Tensor& frames, const SideParams& params, const ViTConfig& backbone);

// s_prev + Down(Norm(tap.patches)); the tap enters as a constant
Tensor fuse(const FeatureTap& tap, const Tensor& s_prev, const SideParams::Block& block);

// residual depthwise-separable temporal convolution with batchnorm in front
Tensor temporal_conv_block(const Tensor& s, SideParams::Block& block, bool training);

// residual attention along T per spatial location (ablation arm)
Tensor temporal_attention_block(const Tensor& s, const SideParams::Block& block);

// residual per-frame attention; queries are the N layer-normed patch tokens,
// keys/values gain one shifted-[CLS] token when cls_shift is on
Tensor shifted_attention_block(const Tensor& s, const Tensor& tap_cls,
                               const SideParams::Block& block, bool cls_shift);

// residual MLP with batchnorm in front
Tensor mlp_block(const Tensor& s, SideParams::Block& block, bool training);

Tensor side_forward(const Tensor& frames, const BackboneOutput& backbone_out, SideParams& params,
                    const FusionPlan& plan, const ViTConfig& backbone, bool training);

}  // namespace s4v
