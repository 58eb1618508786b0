#pragma once

#include <string>
#include <vector>

#include "s4v/nn.hpp"
#include "s4v/tensor.hpp"

namespace s4v {

struct ViTConfig {
    int64_t image_size = 16;  // square frames
    int64_t patch_size = 8;
    int64_t layers = 2;
    int64_t dim = 32;
    int64_t heads = 0;  // 0 -> max(1, dim/64)
    int64_t mlp_ratio = 4;
    enum class Norm { kPre, kPost };
    Norm norm_style = Norm::kPre;
    int64_t proj_dim = 0;  // joint-space width of the output projection; 0 -> dim

    int64_t patches_per_side() const { return image_size / patch_size; }
    int64_t patches() const { return patches_per_side() * patches_per_side(); }
    int64_t effective_heads() const { return heads > 0 ? heads : std::max<int64_t>(1, dim / 64); }
    int64_t effective_proj_dim() const { return proj_dim > 0 ? proj_dim : dim; }
    void validate() const;
};

// per-layer features the side network consumes; always constants
struct FeatureTap {
    int64_t layer_index = 0;  // 1-based
    Tensor cls;               // [B,T,D]
    Tensor patches;           // [B,T,N,D]
};

struct BackboneOutput {
    std::vector<FeatureTap> taps;
    Tensor z_out;  // [B,T,D], final [CLS] after the final norm
};

struct ViTParams {
    ViTConfig cfg;
    Tensor patch_weight;  // [3*P*P, D]
    Tensor patch_bias;    // [D]
    Tensor cls_token;     // [D]
    Tensor pos_embed;     // [1+N, D]
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::Attention attn;
        nn::Linear mlp1, mlp2;
    };
    std::vector<Block> blocks;
    nn::LayerNorm ln_final;
    Tensor proj;  // [D, proj_dim], the pre-trained output projection
};

ViTParams make_vit(nn::ParamStore& store, const std::string& prefix, const ViTConfig& cfg,
                   Rng& rng, DType dt, bool trainable);

// [B,T,3,H,W] -> [B,T,N,3*P*P]; patch contents ordered (channel, py, px)
Tensor patchify(const Tensor& frames, const ViTConfig& cfg);

// patch projection + [CLS] + positional embedding: [B,T,3,H,W] -> [B,T,1+N,D]
Tensor patch_embed_image(const Tensor& frames, const ViTParams& params);

// residual bottleneck inserted after a block in the adapter baseline
struct Adapter {
    nn::Linear down, up;
};
std::vector<Adapter> make_adapters(nn::ParamStore& store, const std::string& prefix,
                                   const ViTConfig& cfg, int64_t bottleneck, Rng& rng, DType dt);

// on-tape forward used by the memory profiler; records whatever the
// requires_grad pattern asks for
BackboneOutput vit_forward_recorded(const Tensor& frames, const ViTParams& params,
                                    const std::vector<int64_t>& tap_layers,
                                    const std::vector<Adapter>* adapters = nullptr);

// the production path: runs entirely under no_grad, contributes zero tape
// nodes and zero saved bytes; taps and z_out come back as constants
BackboneOutput vit_forward(const Tensor& frames, const ViTParams& params,
                           const std::vector<int64_t>& tap_layers);

}  // namespace s4v
