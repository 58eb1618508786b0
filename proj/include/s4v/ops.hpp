#pragma once

#include <vector>

#include "s4v/tape.hpp"
#include "s4v/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward value and,
// when a tape is bound, gradients are enabled and some input carries a
// gradient requirement, records one node. Saved-for-backward policy is
// need-driven and documented per op below; a value is retained only when a
// requested gradient reads it.
namespace s4v::ops {

// broadcasting add/mul, numpy-style right-aligned; add saves nothing,
// mul saves each operand iff the other one needs a gradient
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);  // saves nothing
Tensor neg(const Tensor& x);

// batched matrix product [..,m,k] x [..,k,n]; batch dims must match exactly
// unless one operand has none (a rank-2 weight broadcasts over the batch).
// Saves b iff a needs a gradient and vice versa.
Tensor matmul(const Tensor& a, const Tensor& b);
// y = matmul(x, w) + bias (bias optional)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor gelu(const Tensor& x);  // saves x

// rows normalized over the last dimension; NaN inputs propagate NaN.
// softmax saves its output; log_softmax saves its output.
Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);

// saves xhat (+rstd and gamma when x itself needs a gradient)
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// channel batchnorm over [B,T,N,C] pooled across B*T*N. Training mode uses
// batch statistics and, when update_running is set, folds them into the
// running buffers in place (module state, not an autodiff value). Eval mode
// normalizes with the running statistics. Saves xhat (+rstd/gamma when x
// needs a gradient).
Tensor batchnorm_btnc(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      Tensor& running_mean, Tensor& running_var, double momentum, double eps,
                      bool training, bool update_running);

// depthwise temporal convolution, kernel 3 over T, zero padding, stride 1;
// x: [B,T,N,C], w: [C,3]; saves w iff x needs grad, x iff w needs grad
Tensor conv_temporal_depthwise(const Tensor& x, const Tensor& w);

// L2 row normalization over the last dim; saves output + inverse norms
Tensor l2norm_lastdim(const Tensor& x, double eps = 1e-12);

// data movement; none of these save tensor values
Tensor reshape(const Tensor& x, std::vector<int64_t> new_shape);  // shares storage
Tensor permute(const Tensor& x, std::vector<int> perm);
Tensor concat(const std::vector<Tensor>& items, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
// out[:,t,..] = x[:,t-delta,..] along axis 1, zero-filled out of range
Tensor time_shift(const Tensor& x, int64_t delta);
// [B,T,D]: channels [0, ceil(D/2)) read frame t-1, the rest read frame t+1
Tensor shift_cls(const Tensor& x);

Tensor mean_axis(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);   // rank-0 result
Tensor mean_all(const Tensor& x);  // rank-0 result

Tensor exp(const Tensor& x);                        // saves output
Tensor minimum_scalar(const Tensor& x, double c);   // gradient passes iff x <= c; saves x

// FILIP-style symmetric max-mean token matching for every (video, text) pair.
// video: [B,T,D], text: [B2,L,D], rows pre-normalized; text_lens gives the
// number of valid tokens per text (<= L). Result: [B,B2]. Ties in the max
// break toward the first index. Saves both inputs.
Tensor pairwise_token_sim(const Tensor& video, const Tensor& text,
                          const std::vector<int64_t>& text_lens);

}  // namespace s4v::ops
