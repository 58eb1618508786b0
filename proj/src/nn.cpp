#include "s4v/nn.hpp"

#include <cmath>

namespace s4v::nn {

Tensor& ParamStore::add(const std::string& name, Tensor t, bool trainable) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    t.set_requires_grad(trainable);
    t.set_persistent(true);
    auto [it, ok] = entries_.emplace(name, std::move(t));
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

size_t ParamStore::total_bytes() const {
    size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.nbytes();
    return n;
}

size_t ParamStore::trainable_bytes() const {
    size_t n = 0;
    for (const auto& [name, t] : entries_)
        if (t.requires_grad()) n += t.nbytes();
    return n;
}

int64_t ParamStore::trainable_scalars() const {
    int64_t n = 0;
    for (const auto& [name, t] : entries_)
        if (t.requires_grad()) n += t.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, t] : entries_) t.reset_grad();
}

uint64_t ParamStore::checksum(const std::string& prefix) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : entries_) {
        if (name.rfind(prefix, 0) != 0) continue;
        h ^= fnv1a64(name);
        h *= 0x100000001b3ULL;
        h ^= fnv1a64(t.raw(), t.nbytes());
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<std::pair<std::string, Tensor>> ParamStore::trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : entries_)
        if (t.requires_grad()) out.emplace_back(name, t);
    return out;
}

Tensor xavier_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng,
                      DType dt) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::empty(std::move(shape), dt);
    for (int64_t i = 0; i < t.numel(); ++i) t.write(i, rng.uniform(-limit, limit));
    return t;
}

Tensor normal_init(std::vector<int64_t> shape, double mean, double stddev, Rng& rng, DType dt) {
    Tensor t = Tensor::empty(std::move(shape), dt);
    for (int64_t i = 0; i < t.numel(); ++i) t.write(i, rng.normal(mean, stddev));
    return t;
}

LayerNorm make_layernorm(ParamStore& store, const std::string& prefix, int64_t dim, DType dt,
                         bool trainable) {
    LayerNorm ln;
    ln.gamma = store.add(prefix + ".gamma", Tensor::full({dim}, 1.0, dt), trainable);
    ln.beta = store.add(prefix + ".beta", Tensor::zeros({dim}, dt), trainable);
    return ln;
}

Linear make_linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
                   DType dt, bool trainable, bool zero_init, bool with_bias) {
    Linear lin;
    Rng wrng = rng.fork(fnv1a64(prefix + ".weight"));
    Tensor w = zero_init ? Tensor::zeros({in, out}, dt) : xavier_uniform({in, out}, in, out, wrng, dt);
    lin.weight = store.add(prefix + ".weight", std::move(w), trainable);
    if (with_bias) lin.bias = store.add(prefix + ".bias", Tensor::zeros({out}, dt), trainable);
    return lin;
}

BatchNorm3d make_batchnorm(ParamStore& store, const std::string& prefix, int64_t dim, DType dt,
                           bool trainable) {
    BatchNorm3d bn;
    bn.gamma = store.add(prefix + ".gamma", Tensor::full({dim}, 1.0, dt), trainable);
    bn.beta = store.add(prefix + ".beta", Tensor::zeros({dim}, dt), trainable);
    bn.running_mean = store.add(prefix + ".running_mean", Tensor::zeros({dim}, dt), false);
    bn.running_var = store.add(prefix + ".running_var", Tensor::full({dim}, 1.0, dt), false);
    return bn;
}

Attention make_attention(ParamStore& store, const std::string& prefix, int64_t dim, int64_t heads,
                         Rng& rng, DType dt, bool trainable, bool zero_out_proj) {
    if (heads < 1 || dim % heads != 0)
        throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
    Attention a;
    a.heads = heads;
    a.q = make_linear(store, prefix + ".q", dim, dim, rng, dt, trainable);
    a.k = make_linear(store, prefix + ".k", dim, dim, rng, dt, trainable);
    a.v = make_linear(store, prefix + ".v", dim, dim, rng, dt, trainable);
    a.o = make_linear(store, prefix + ".o", dim, dim, rng, dt, trainable, zero_out_proj);
    return a;
}

Tensor attention_forward(const Attention& p, const Tensor& q_in, const Tensor& kv_in) {
    const int64_t d = q_in.dim(-1);
    const int64_t nq = q_in.dim(-2);
    const int64_t nk = kv_in.dim(-2);
    const int64_t h = p.heads;
    const int64_t hd = d / h;
    const int64_t flat = q_in.numel() / (nq * d);

    Tensor q = p.q.forward(ops::reshape(q_in, {flat, nq, d}));
    Tensor k = p.k.forward(ops::reshape(kv_in, {flat, nk, d}));
    Tensor v = p.v.forward(ops::reshape(kv_in, {flat, nk, d}));

    Tensor qh = ops::permute(ops::reshape(q, {flat, nq, h, hd}), {0, 2, 1, 3});
    Tensor kh = ops::permute(ops::reshape(k, {flat, nk, h, hd}), {0, 2, 3, 1});  // pre-transposed
    Tensor vh = ops::permute(ops::reshape(v, {flat, nk, h, hd}), {0, 2, 1, 3});

    Tensor scores = ops::scale(ops::matmul(qh, kh), 1.0 / std::sqrt(static_cast<double>(hd)));
    Tensor attn = ops::softmax_lastdim(scores);
    Tensor ctx = ops::matmul(attn, vh);  // [flat, h, nq, hd]
    Tensor merged = ops::reshape(ops::permute(ctx, {0, 2, 1, 3}), {flat, nq, d});
    Tensor out = p.o.forward(merged);

    std::vector<int64_t> out_shape = q_in.shape();
    return ops::reshape(out, std::move(out_shape));
}

}  // namespace s4v::nn
