#pragma once

#include <string>
#include <vector>

#include "s4v/nn.hpp"

namespace s4v {

// Small trainable text transformer for the retrieval arm. Sequences are
// padded to max_len; the end-of-sequence token's output is the global text
// embedding and every token position also gets a projected output for
// fine-grained matching.
struct TextConfig {
    int64_t vocab = 16;
    int64_t max_len = 8;
    int64_t layers = 2;
    int64_t dim = 128;
    int64_t heads = 2;
    int64_t proj_dim = 32;
    void validate() const;
};

struct TextParams {
    TextConfig cfg;
    Tensor tok_embed;  // [vocab, dim]
    Tensor pos_embed;  // [max_len, dim]
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::Attention attn;
        nn::Linear mlp1, mlp2;
    };
    std::vector<Block> blocks;
    nn::LayerNorm ln_final;
    Tensor proj;  // [dim, proj_dim]
};

TextParams make_text(nn::ParamStore& store, const std::string& prefix, const TextConfig& cfg,
                     Rng& rng, DType dt);

struct TextOutput {
    Tensor tokens;             // [B, max_len, proj_dim], unnormalized
    Tensor eos;                // [B, proj_dim], unnormalized
    std::vector<int64_t> lengths;  // valid tokens per sequence (including EOS)
};

// token ids per sequence, each ending with the EOS id, length <= max_len
TextOutput text_forward(const std::vector<std::vector<int64_t>>& sequences,
                        const TextParams& params, DType dt);

}  // namespace s4v
