#include "s4v/vit.hpp"

#include <algorithm>
#include <cmath>

#include "s4v/tape.hpp"

namespace s4v {

namespace O = s4v::ops;

void ViTConfig::validate() const {
    if (layers < 1) throw ConfigError("vit: layers must be >= 1");
    if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
        throw ConfigError("vit: image size " + std::to_string(image_size) +
                          " is not a multiple of patch size " + std::to_string(patch_size));
    if (dim < 1 || dim % effective_heads() != 0)
        throw ConfigError("vit: dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(effective_heads()));
}

ViTParams make_vit(nn::ParamStore& store, const std::string& prefix, const ViTConfig& cfg,
                   Rng& rng, DType dt, bool trainable) {
    cfg.validate();
    ViTParams p;
    p.cfg = cfg;
    const int64_t P = cfg.patch_size, D = cfg.dim, N = cfg.patches();
    const int64_t pdim = 3 * P * P;
    Rng r0 = rng.fork(fnv1a64(prefix));
    p.patch_weight =
        store.add(prefix + ".patch_embed.weight", nn::normal_init({pdim, D}, 0.0, 0.02, r0, dt),
                  trainable);
    p.patch_bias = store.add(prefix + ".patch_embed.bias", Tensor::zeros({D}, dt), trainable);
    p.cls_token = store.add(prefix + ".cls_token", nn::normal_init({D}, 0.0, 0.02, r0, dt),
                            trainable);
    p.pos_embed = store.add(prefix + ".pos_embed", nn::normal_init({1 + N, D}, 0.0, 0.02, r0, dt),
                            trainable);
    for (int64_t i = 0; i < cfg.layers; ++i) {
        const std::string bp = prefix + ".blocks." + std::to_string(i);
        ViTParams::Block b;
        b.ln1 = nn::make_layernorm(store, bp + ".ln1", D, dt, trainable);
        b.ln2 = nn::make_layernorm(store, bp + ".ln2", D, dt, trainable);
        b.attn = nn::make_attention(store, bp + ".attn", D, cfg.effective_heads(), rng, dt,
                                    trainable, false);
        b.mlp1 = nn::make_linear(store, bp + ".mlp1", D, cfg.mlp_ratio * D, rng, dt, trainable);
        b.mlp2 = nn::make_linear(store, bp + ".mlp2", cfg.mlp_ratio * D, D, rng, dt, trainable);
        p.blocks.push_back(std::move(b));
    }
    p.ln_final = nn::make_layernorm(store, prefix + ".ln_final", D, dt, trainable);
    p.proj = store.add(prefix + ".proj.weight",
                       nn::normal_init({D, cfg.effective_proj_dim()}, 0.0,
                                       1.0 / std::sqrt(static_cast<double>(D)), r0, dt),
                       false);  // the output projection stays frozen in every setting
    return p;
}

Tensor patchify(const Tensor& frames, const ViTConfig& cfg) {
    if (frames.rank() != 5 || frames.dim(2) != 3 || frames.dim(3) != cfg.image_size ||
        frames.dim(4) != cfg.image_size)
        throw ConfigError("patchify: expected frames [B,T,3," + std::to_string(cfg.image_size) +
                          "," + std::to_string(cfg.image_size) + "], got " +
                          shape_str(frames.shape()));
    const int64_t B = frames.dim(0), T = frames.dim(1), H = cfg.image_size, P = cfg.patch_size;
    const int64_t G = cfg.patches_per_side(), N = cfg.patches(), K = 3 * P * P;
    Tensor out = Tensor::empty({B, T, N, K}, frames.dtype());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t gy = 0; gy < G; ++gy)
                for (int64_t gx = 0; gx < G; ++gx) {
                    const int64_t n = gy * G + gx;
                    for (int64_t c = 0; c < 3; ++c)
                        for (int64_t py = 0; py < P; ++py)
                            for (int64_t px = 0; px < P; ++px) {
                                const int64_t src =
                                    (((b * T + t) * 3 + c) * H + gy * P + py) * H + gx * P + px;
                                const int64_t dst = ((b * T + t) * N + n) * K +
                                                    (c * P + py) * P + px;
                                out.write(dst, frames.read(src));
                            }
                }
    return out;
}

Tensor patch_embed_image(const Tensor& frames, const ViTParams& params) {
    const ViTConfig& cfg = params.cfg;
    const int64_t B = frames.dim(0), T = frames.dim(1), N = cfg.patches(), D = cfg.dim;
    Tensor cols = O::reshape(patchify(frames, cfg), {B * T, N, 3 * cfg.patch_size * cfg.patch_size});
    Tensor emb = O::add(O::matmul(cols, params.patch_weight), params.patch_bias);
    // [CLS] broadcast to every frame
    Tensor cls = O::add(Tensor::zeros({B * T, 1, D}, frames.dtype()),
                        O::reshape(params.cls_token, {1, 1, D}));
    Tensor seq = O::concat({cls, emb}, 1);
    seq = O::add(seq, params.pos_embed);
    return O::reshape(seq, {B, T, 1 + N, D});
}

std::vector<Adapter> make_adapters(nn::ParamStore& store, const std::string& prefix,
                                   const ViTConfig& cfg, int64_t bottleneck, Rng& rng, DType dt) {
    std::vector<Adapter> out;
    for (int64_t i = 0; i < cfg.layers; ++i) {
        const std::string ap = prefix + "." + std::to_string(i);
        Adapter a;
        a.down = nn::make_linear(store, ap + ".down", cfg.dim, bottleneck, rng, dt, true);
        a.up = nn::make_linear(store, ap + ".up", bottleneck, cfg.dim, rng, dt, true, true);
        out.push_back(std::move(a));
    }
    return out;
}

namespace {
Tensor vit_block_forward(const ViTParams::Block& b, const Tensor& x, ViTConfig::Norm norm) {
    if (norm == ViTConfig::Norm::kPre) {
        Tensor h = b.ln1.forward(x);
        Tensor y = O::add(x, nn::attention_forward(b.attn, h, h));
        Tensor m = b.mlp2.forward(O::gelu(b.mlp1.forward(b.ln2.forward(y))));
        return O::add(y, m);
    }
    Tensor y = b.ln1.forward(O::add(x, nn::attention_forward(b.attn, x, x)));
    Tensor m = b.mlp2.forward(O::gelu(b.mlp1.forward(y)));
    return b.ln2.forward(O::add(y, m));
}
}  // namespace

BackboneOutput vit_forward_recorded(const Tensor& frames, const ViTParams& params,
                                    const std::vector<int64_t>& tap_layers,
                                    const std::vector<Adapter>* adapters) {
    const ViTConfig& cfg = params.cfg;
    for (int64_t l : tap_layers)
        if (l < 1 || l > cfg.layers)
            throw ConfigError("tap layer " + std::to_string(l) + " out of range 1.." +
                              std::to_string(cfg.layers));
    if (adapters && static_cast<int64_t>(adapters->size()) != cfg.layers)
        throw ConfigError("need one adapter per block");

    const int64_t B = frames.dim(0), T = frames.dim(1), N = cfg.patches(), D = cfg.dim;
    Tensor x = O::reshape(patch_embed_image(frames, params), {B * T, 1 + N, D});

    BackboneOutput out;
    for (int64_t i = 0; i < cfg.layers; ++i) {
        x = vit_block_forward(params.blocks[static_cast<size_t>(i)], x, cfg.norm_style);
        if (adapters) {
            const Adapter& a = (*adapters)[static_cast<size_t>(i)];
            x = O::add(x, a.up.forward(O::gelu(a.down.forward(x))));
        }
        const int64_t layer = i + 1;
        if (std::find(tap_layers.begin(), tap_layers.end(), layer) != tap_layers.end()) {
            Tensor unf = O::reshape(x, {B, T, 1 + N, D});
            FeatureTap tap;
            tap.layer_index = layer;
            tap.cls = O::reshape(O::slice(unf, 2, 0, 1), {B, T, D});
            tap.patches = O::slice(unf, 2, 1, N);
            out.taps.push_back(std::move(tap));
        }
    }
    Tensor cls_last = O::reshape(O::slice(O::reshape(x, {B, T, 1 + N, D}), 2, 0, 1), {B, T, D});
    out.z_out =
        cfg.norm_style == ViTConfig::Norm::kPre ? params.ln_final.forward(cls_last) : cls_last;
    return out;
}

BackboneOutput vit_forward(const Tensor& frames, const ViTParams& params,
                           const std::vector<int64_t>& tap_layers) {
    NoGradScope frozen;
    return vit_forward_recorded(frames, params, tap_layers, nullptr);
}

}  // namespace s4v
