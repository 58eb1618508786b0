#include "s4v/heads.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace s4v {

namespace O = s4v::ops;

RecognitionOutput recognition_head(const Tensor& s_out, const nn::Linear& classifier) {
    if (s_out.rank() != 4)
        throw ShapeError("recognition_head: expected [B,T,N,d], got " + shape_str(s_out.shape()));
    RecognitionOutput out;
    out.representation = O::mean_axis(O::mean_axis(s_out, 2), 1);  // over N then T
    out.logits = classifier.forward(out.representation);
    return out;
}

Tensor retrieval_video_head(const Tensor& s_out, const Tensor& z_out, const nn::Linear& up,
                            const Tensor& proj) {
    if (s_out.rank() != 4 || z_out.rank() != 3)
        throw ShapeError("retrieval_video_head: expected s_out [B,T,N,d] and z_out [B,T,D]");
    Tensor frame = O::mean_axis(s_out, 2);            // [B,T,d]
    Tensor lifted = O::add(up.forward(frame), z_out); // [B,T,D]
    return O::l2norm_lastdim(O::matmul(lifted, proj));
}

double tokenwise_similarity(const Tensor& video_tokens, const Tensor& text_tokens) {
    if (video_tokens.rank() != 2 || text_tokens.rank() != 2)
        throw ShapeError("tokenwise_similarity: expected [T,D] and [L,D]");
    const int64_t t = video_tokens.dim(0), l = text_tokens.dim(0);
    if (t < 1 || l < 1) throw ShapeError("tokenwise_similarity: empty token list");
    Tensor v = O::reshape(video_tokens, {1, t, video_tokens.dim(1)});
    Tensor x = O::reshape(text_tokens, {1, l, text_tokens.dim(1)});
    return O::pairwise_token_sim(v, x, {l}).item();
}

Tensor contrastive_loss(const Tensor& sim, const Tensor& logit_scale) {
    if (sim.rank() != 2 || sim.dim(0) != sim.dim(1))
        throw ShapeError("contrastive_loss: expected a square matrix, got " +
                         shape_str(sim.shape()));
    const int64_t b = sim.dim(0);
    Tensor logits = O::mul(sim, logit_scale);
    Tensor eye = Tensor::zeros({b, b}, sim.dtype());
    for (int64_t i = 0; i < b; ++i) eye.write(i * b + i, 1.0);
    Tensor row_ce = O::scale(O::sum_all(O::mul(O::log_softmax_lastdim(logits), eye)),
                             -1.0 / static_cast<double>(b));
    Tensor col_ce =
        O::scale(O::sum_all(O::mul(O::log_softmax_lastdim(O::permute(logits, {1, 0})), eye)),
                 -1.0 / static_cast<double>(b));
    return O::scale(O::add(row_ce, col_ce), 0.5);
}

Tensor label_smoothing_ce(const Tensor& logits, const std::vector<int64_t>& targets, double eps) {
    if (logits.rank() != 2) throw ShapeError("label_smoothing_ce: expected [B,K] logits");
    if (eps < 0.0 || eps >= 1.0) throw ConfigError("label_smoothing_ce: eps must be in [0,1)");
    const int64_t b = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != b)
        throw ShapeError("label_smoothing_ce: need one target per row");
    Tensor q = Tensor::full({b, k}, eps / static_cast<double>(k), logits.dtype());
    for (int64_t i = 0; i < b; ++i) {
        const int64_t t = targets[static_cast<size_t>(i)];
        if (t < 0 || t >= k)
            throw ConfigError("label_smoothing_ce: target " + std::to_string(t) +
                              " out of range 0.." + std::to_string(k - 1));
        q.write(i * k + t, q.read(i * k + t) + (1.0 - eps));
    }
    return O::scale(O::sum_all(O::mul(O::log_softmax_lastdim(logits), q)),
                    -1.0 / static_cast<double>(b));
}

RetrievalMetrics retrieval_metrics(const Tensor& sim) {
    if (sim.rank() != 2 || sim.dim(0) != sim.dim(1))
        throw ShapeError("retrieval_metrics: expected a square matrix");
    const int64_t b = sim.dim(0);
    std::vector<int64_t> ranks;
    ranks.reserve(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        const double target = sim.read(i * b + i);
        int64_t rank = 1;
        for (int64_t j = 0; j < b; ++j) {
            if (j == i) continue;
            const double s = sim.read(i * b + j);
            if (s > target || (s == target && j < i)) ++rank;
        }
        ranks.push_back(rank);
    }
    RetrievalMetrics m;
    double mean = 0;
    int64_t hit1 = 0, hit5 = 0, hit10 = 0;
    for (int64_t r : ranks) {
        mean += static_cast<double>(r);
        hit1 += r <= 1;
        hit5 += r <= 5;
        hit10 += r <= 10;
    }
    m.mnr = mean / static_cast<double>(b);
    m.r1 = 100.0 * static_cast<double>(hit1) / static_cast<double>(b);
    m.r5 = 100.0 * static_cast<double>(hit5) / static_cast<double>(b);
    m.r10 = 100.0 * static_cast<double>(hit10) / static_cast<double>(b);
    std::sort(ranks.begin(), ranks.end());
    const size_t n = ranks.size();
    m.mdr = (n % 2 == 1) ? static_cast<double>(ranks[n / 2])
                         : 0.5 * static_cast<double>(ranks[n / 2 - 1] + ranks[n / 2]);
    return m;
}

void write_matrix_csv(const Tensor& matrix, const std::string& path) {
    if (matrix.rank() != 2) throw ShapeError("write_matrix_csv: expected a matrix");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    const int64_t rows = matrix.dim(0), cols = matrix.dim(1);
    for (int64_t j = 0; j < cols; ++j) out << (j ? "," : "") << "c" << j;
    out << "\n";
    char buf[64];
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", matrix.read(i * cols + j));
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

Tensor logit_scale_value(const Tensor& logit_scale_param) {
    return O::exp(O::minimum_scalar(logit_scale_param, std::log(100.0)));
}

double initial_logit_scale() { return std::log(1.0 / 0.07); }

}  // namespace s4v
