#pragma once

#include <map>
#include <string>
#include <vector>

#include "s4v/ops.hpp"
#include "s4v/tensor.hpp"

namespace s4v::nn {

// Ordered name -> tensor registry. Every entry is persistent (lives across
// steps); trainable entries carry requires_grad. Iteration order is the name
// order, which keeps checkpoints and optimizer walks deterministic.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t, bool trainable);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.count(name) > 0; }
    const std::map<std::string, Tensor>& entries() const { return entries_; }

    size_t total_bytes() const;
    size_t trainable_bytes() const;
    int64_t trainable_scalars() const;
    void zero_grads();
    // checksum of raw buffers whose names start with prefix
    uint64_t checksum(const std::string& prefix = "") const;
    std::vector<std::pair<std::string, Tensor>> trainable() const;

private:
    std::map<std::string, Tensor> entries_;
};

Tensor xavier_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng,
                      DType dt);
Tensor normal_init(std::vector<int64_t> shape, double mean, double stddev, Rng& rng, DType dt);

struct LayerNorm {
    Tensor gamma, beta;
    double eps = 1e-5;
    Tensor forward(const Tensor& x) const { return ops::layernorm(x, gamma, beta, eps); }
};
LayerNorm make_layernorm(ParamStore& store, const std::string& prefix, int64_t dim, DType dt,
                         bool trainable);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out], may be undefined
    Tensor forward(const Tensor& x) const { return ops::linear(x, weight, bias); }
};
Linear make_linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
                   DType dt, bool trainable, bool zero_init = false, bool with_bias = true);

struct BatchNorm3d {
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;
    Tensor forward(const Tensor& x, bool training, bool update_running = true) {
        return ops::batchnorm_btnc(x, gamma, beta, running_mean, running_var, momentum, eps,
                                   training, training && update_running);
    }
};
BatchNorm3d make_batchnorm(ParamStore& store, const std::string& prefix, int64_t dim, DType dt,
                           bool trainable);

struct Attention {
    Linear q, k, v, o;
    int64_t heads = 1;
};
Attention make_attention(ParamStore& store, const std::string& prefix, int64_t dim, int64_t heads,
                         Rng& rng, DType dt, bool trainable, bool zero_out_proj);

// multi-head attention with tokens on axis -2; q_in [..., Nq, d] attends to
// kv_in [..., Nk, d]
Tensor attention_forward(const Attention& p, const Tensor& q_in, const Tensor& kv_in);

}  // namespace s4v::nn
