#include "s4v/text.hpp"

namespace s4v {

namespace O = s4v::ops;

void TextConfig::validate() const {
    if (vocab < 2 || max_len < 1 || layers < 1)
        throw ConfigError("text: vocab/max_len/layers must be positive");
    if (dim < 1 || heads < 1 || dim % heads != 0)
        throw ConfigError("text: dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
}

TextParams make_text(nn::ParamStore& store, const std::string& prefix, const TextConfig& cfg,
                     Rng& rng, DType dt) {
    cfg.validate();
    TextParams p;
    p.cfg = cfg;
    Rng r0 = rng.fork(fnv1a64(prefix));
    p.tok_embed = store.add(prefix + ".tok_embed",
                            nn::normal_init({cfg.vocab, cfg.dim}, 0.0, 0.02, r0, dt), true);
    p.pos_embed = store.add(prefix + ".pos_embed",
                            nn::normal_init({cfg.max_len, cfg.dim}, 0.0, 0.02, r0, dt), true);
    for (int64_t i = 0; i < cfg.layers; ++i) {
        const std::string bp = prefix + ".blocks." + std::to_string(i);
        TextParams::Block b;
        b.ln1 = nn::make_layernorm(store, bp + ".ln1", cfg.dim, dt, true);
        b.ln2 = nn::make_layernorm(store, bp + ".ln2", cfg.dim, dt, true);
        b.attn = nn::make_attention(store, bp + ".attn", cfg.dim, cfg.heads, rng, dt, true, false);
        b.mlp1 = nn::make_linear(store, bp + ".mlp1", cfg.dim, 4 * cfg.dim, rng, dt, true);
        b.mlp2 = nn::make_linear(store, bp + ".mlp2", 4 * cfg.dim, cfg.dim, rng, dt, true);
        p.blocks.push_back(std::move(b));
    }
    p.ln_final = nn::make_layernorm(store, prefix + ".ln_final", cfg.dim, dt, true);
    Rng rp = rng.fork(fnv1a64(prefix + ".proj"));
    p.proj = store.add(prefix + ".proj.weight",
                       nn::xavier_uniform({cfg.dim, cfg.proj_dim}, cfg.dim, cfg.proj_dim, rp, dt),
                       true);
    return p;
}

TextOutput text_forward(const std::vector<std::vector<int64_t>>& sequences,
                        const TextParams& params, DType dt) {
    const TextConfig& cfg = params.cfg;
    const int64_t B = static_cast<int64_t>(sequences.size());
    if (B == 0) throw ConfigError("text_forward: empty batch");
    // one-hot token matrix keeps the embedding lookup differentiable
    Tensor onehot = Tensor::zeros({B, cfg.max_len, cfg.vocab}, dt);
    Tensor eos_pick = Tensor::zeros({B, 1, cfg.max_len}, dt);
    TextOutput out;
    for (int64_t i = 0; i < B; ++i) {
        const auto& seq = sequences[static_cast<size_t>(i)];
        if (seq.empty() || static_cast<int64_t>(seq.size()) > cfg.max_len)
            throw ConfigError("text_forward: sequence length must be in 1.." +
                              std::to_string(cfg.max_len));
        for (size_t j = 0; j < seq.size(); ++j) {
            const int64_t tok = seq[j];
            if (tok < 0 || tok >= cfg.vocab)
                throw ConfigError("text_forward: token id " + std::to_string(tok) +
                                  " outside vocabulary of " + std::to_string(cfg.vocab));
            onehot.write((i * cfg.max_len + static_cast<int64_t>(j)) * cfg.vocab + tok, 1.0);
        }
        const int64_t eos_pos = static_cast<int64_t>(seq.size()) - 1;
        eos_pick.write(i * cfg.max_len + eos_pos, 1.0);
        out.lengths.push_back(static_cast<int64_t>(seq.size()));
    }

    Tensor x = O::add(O::matmul(onehot, params.tok_embed), params.pos_embed);
    for (const auto& b : params.blocks) {
        Tensor h = b.ln1.forward(x);
        x = O::add(x, nn::attention_forward(b.attn, h, h));
        x = O::add(x, b.mlp2.forward(O::gelu(b.mlp1.forward(b.ln2.forward(x)))));
    }
    x = params.ln_final.forward(x);
    out.tokens = O::matmul(x, params.proj);  // [B, L, proj]
    out.eos = O::reshape(O::matmul(eos_pick, out.tokens), {B, cfg.proj_dim});
    return out;
}

}  // namespace s4v
