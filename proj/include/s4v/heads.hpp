#pragma once

#include <string>
#include <vector>

#include "s4v/nn.hpp"

namespace s4v {

struct RecognitionOutput {
    Tensor representation;  // [B,d], exact mean over T and N
    Tensor logits;          // [B,num_classes]
};

// global average pooling over frames and patch tokens, then a linear
// classifier
RecognitionOutput recognition_head(const Tensor& s_out, const nn::Linear& classifier);

// frame-level joint-space embeddings: Proj(Up(mean_N(s_out)) + Z_out),
// L2-normalized per frame; proj is the frozen pre-trained projection
Tensor retrieval_video_head(const Tensor& s_out, const Tensor& z_out, const nn::Linear& up,
                            const Tensor& proj);

// single-pair FILIP-style symmetric max-mean score for pre-normalized rows
double tokenwise_similarity(const Tensor& video_tokens, const Tensor& text_tokens);

// symmetric InfoNCE over a square similarity matrix whose diagonal pairs
// align; logit_scale is the multiplier (possibly a learnable graph node)
Tensor contrastive_loss(const Tensor& sim, const Tensor& logit_scale);

// cross-entropy against (1-eps)*onehot + eps/K
Tensor label_smoothing_ce(const Tensor& logits, const std::vector<int64_t>& targets, double eps);

struct RetrievalMetrics {
    double r1 = 0, r5 = 0, r10 = 0;  // percent
    double mdr = 0, mnr = 0;         // 1-based ranks
};

// diagonal entries are ground truth; candidates sort by (score desc, index
// asc) so ties resolve toward lower indices
RetrievalMetrics retrieval_metrics(const Tensor& sim);

// row-major CSV with a header row, for similarity matrices and metric tables
void write_matrix_csv(const Tensor& matrix, const std::string& path);

// learnable temperature: exp(min(s, ln 100))
Tensor logit_scale_value(const Tensor& logit_scale_param);
double initial_logit_scale();  // ln(1/0.07)

}  // namespace s4v
