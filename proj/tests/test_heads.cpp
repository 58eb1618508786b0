#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "s4v/heads.hpp"
#include "s4v/text.hpp"
#include "test_util.hpp"

using namespace s4v;
using namespace s4v::testing;
namespace O = s4v::ops;

namespace {
int64_t ulp_distance(double a, double b) {
    if (a == b) return 0;
    int64_t ia, ib;
    std::memcpy(&ia, &a, 8);
    std::memcpy(&ib, &b, 8);
    if (ia < 0) ia = std::numeric_limits<int64_t>::min() - ia;
    if (ib < 0) ib = std::numeric_limits<int64_t>::min() - ib;
    return std::abs(ia - ib);
}
}  // namespace

TEST_CASE("recognition head: GAP exactness and permutation invariance") {
    nn::ParamStore store;
    Rng rng(1);
    nn::Linear cls = nn::make_linear(store, "head.classifier", 3, 4, rng, DType::F64, true);

    Tensor constant = Tensor::full({2, 3, 4, 3}, 2.5, DType::F64);
    RecognitionOutput out = recognition_head(constant, cls);
    for (int64_t i = 0; i < out.representation.numel(); ++i)
        CHECK(out.representation.read(i) == 2.5);
    CHECK(out.logits.shape() == std::vector<int64_t>{2, 4});

    // brute-force mean over T*N within 4 ulp
    Tensor s = rand_tensor({2, 2, 2, 3}, rng, DType::F64);
    RecognitionOutput r = recognition_head(s, cls);
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t c = 0; c < 3; ++c) {
            double acc = 0;
            for (int64_t t = 0; t < 2; ++t)
                for (int64_t n = 0; n < 2; ++n) acc += s.read(((b * 2 + t) * 2 + n) * 3 + c);
            acc /= 4.0;
            CHECK(ulp_distance(acc, r.representation.read(b * 3 + c)) <= 4);
        }

    // permuting T or N leaves the representation unchanged within 4 ulp
    Tensor pt = O::permute(s, {0, 1, 2, 3});
    Tensor flipped_t = O::concat({O::slice(s, 1, 1, 1), O::slice(s, 1, 0, 1)}, 1);
    Tensor flipped_n = O::concat({O::slice(s, 2, 1, 1), O::slice(s, 2, 0, 1)}, 2);
    RecognitionOutput rt = recognition_head(flipped_t, cls);
    RecognitionOutput rn = recognition_head(flipped_n, cls);
    for (int64_t i = 0; i < r.representation.numel(); ++i) {
        CHECK(ulp_distance(r.representation.read(i), rt.representation.read(i)) <= 4);
        CHECK(ulp_distance(r.representation.read(i), rn.representation.read(i)) <= 4);
    }
    (void)pt;
}

TEST_CASE("retrieval head: zero-init anchor and hand case") {
    nn::ParamStore store;
    Rng rng(2);
    const int64_t d = 2, D = 3, Dj = 3;
    nn::Linear up = nn::make_linear(store, "head.up", d, D, rng, DType::F64, true, true);
    Tensor proj = store.add("vit.proj.weight",
                            nn::xavier_uniform({D, Dj}, D, Dj, rng, DType::F64), false);

    Tensor s_out = rand_tensor({2, 2, 2, d}, rng, DType::F64);
    Tensor z_out = rand_tensor({2, 2, D}, rng, DType::F64);

    // Up zero-initialized: embeddings equal the frozen projected [CLS] exactly
    Tensor emb = retrieval_video_head(s_out, z_out, up, proj);
    Tensor frozen = O::l2norm_lastdim(O::matmul(z_out, proj));
    CHECK(max_abs_diff(emb, frozen) == 0.0);
    // rows normalized
    for (int64_t r = 0; r < 4; ++r) {
        double nrm = 0;
        for (int64_t c = 0; c < Dj; ++c) nrm += emb.read(r * Dj + c) * emb.read(r * Dj + c);
        CHECK(std::fabs(std::sqrt(nrm) - 1.0) < 1e-6);
    }

    // zero s_out with zero Up bias: same anchor
    Tensor emb0 = retrieval_video_head(Tensor::zeros({2, 2, 2, d}, DType::F64), z_out, up, proj);
    CHECK(max_abs_diff(emb0, frozen) == 0.0);

    // hand case N=2, d=2, D=3 with a nonzero Up
    for (int64_t i = 0; i < up.weight.numel(); ++i) up.weight.write(i, rng.uniform(-1, 1));
    Tensor got = retrieval_video_head(s_out, z_out, up, proj);
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t t = 0; t < 2; ++t) {
            double frame[2];
            for (int64_t c = 0; c < d; ++c)
                frame[c] = 0.5 * (s_out.read(((b * 2 + t) * 2 + 0) * d + c) +
                                  s_out.read(((b * 2 + t) * 2 + 1) * d + c));
            double lifted[3];
            for (int64_t c = 0; c < D; ++c)
                lifted[c] = frame[0] * up.weight.read(0 * D + c) +
                            frame[1] * up.weight.read(1 * D + c) + up.bias.read(c) +
                            z_out.read((b * 2 + t) * D + c);
            double pj[3], nrm = 0;
            for (int64_t c = 0; c < Dj; ++c) {
                pj[c] = lifted[0] * proj.read(0 * Dj + c) + lifted[1] * proj.read(1 * Dj + c) +
                        lifted[2] * proj.read(2 * Dj + c);
                nrm += pj[c] * pj[c];
            }
            nrm = std::sqrt(nrm + 1e-12);
            for (int64_t c = 0; c < Dj; ++c)
                CHECK(got.read((b * 2 + t) * Dj + c) ==
                      doctest::Approx(pj[c] / nrm).epsilon(1e-9));
        }
}

TEST_CASE("contrastive loss examples and permutation invariance") {
    // identity similarity with a huge scale drives the loss to zero
    const int64_t B = 4;
    Tensor eye = Tensor::zeros({B, B}, DType::F64);
    for (int64_t i = 0; i < B; ++i) eye.write(i * B + i, 1.0);
    Tensor big = Tensor::scalar(1000.0, DType::F64);
    CHECK(contrastive_loss(eye, big).item() < 1e-6);

    // uniform similarity gives ln B at any scale
    Tensor flat = Tensor::full({B, B}, 0.37, DType::F64);
    Tensor scale = Tensor::scalar(3.3, DType::F64);
    CHECK(contrastive_loss(flat, scale).item() == doctest::Approx(std::log(B)).epsilon(1e-9));

    // B=2 hand matrix against a scalar oracle
    Tensor sim = Tensor::from_values({2, 2}, {0.9, 0.1, -0.3, 0.7}, DType::F64);
    const double s = 2.0;
    auto ce_row = [&](double a, double b_) {
        const double m = std::max(a, b_);
        return -(a - (m + std::log(std::exp(a - m) + std::exp(b_ - m))));
    };
    const double rows = 0.5 * (ce_row(s * 0.9, s * 0.1) + ce_row(s * 0.7, s * -0.3));
    const double cols = 0.5 * (ce_row(s * 0.9, s * -0.3) + ce_row(s * 0.7, s * 0.1));
    Tensor sc = Tensor::scalar(s, DType::F64);
    CHECK(contrastive_loss(sim, sc).item() ==
          doctest::Approx(0.5 * (rows + cols)).epsilon(1e-9));

    // simultaneous identical permutation of rows and columns
    Rng rng(3);
    Tensor r = rand_tensor({4, 4}, rng, DType::F64);
    std::vector<int64_t> perm = {2, 0, 3, 1};
    Tensor rp = Tensor::empty({4, 4}, DType::F64);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j)
            rp.write(i * 4 + j, r.read(perm[static_cast<size_t>(i)] * 4 +
                                       perm[static_cast<size_t>(j)]));
    Tensor one = Tensor::scalar(1.7, DType::F64);
    CHECK(contrastive_loss(r, one).item() ==
          doctest::Approx(contrastive_loss(rp, one).item()).epsilon(1e-12));

    CHECK_THROWS_AS(contrastive_loss(Tensor::zeros({2, 3}, DType::F64), one), ShapeError);
}

TEST_CASE("label smoothing cross entropy") {
    Rng rng(4);
    Tensor logits = rand_tensor({3, 4}, rng, DType::F64, -2, 2);
    std::vector<int64_t> targets = {1, 3, 0};

    // eps = 0 reduces to the standard cross-entropy
    double expect = 0;
    for (int64_t b = 0; b < 3; ++b) {
        double mx = logits.read(b * 4);
        for (int64_t k = 1; k < 4; ++k) mx = std::max(mx, logits.read(b * 4 + k));
        double z = 0;
        for (int64_t k = 0; k < 4; ++k) z += std::exp(logits.read(b * 4 + k) - mx);
        expect -= logits.read(b * 4 + targets[static_cast<size_t>(b)]) - mx - std::log(z);
    }
    expect /= 3.0;
    CHECK(label_smoothing_ce(logits, targets, 0.0).item() ==
          doctest::Approx(expect).epsilon(1e-9));

    // uniform logits: ln K for any eps
    Tensor uni = Tensor::full({2, 5}, 0.3, DType::F64);
    for (double eps : {0.0, 0.1, 0.5})
        CHECK(label_smoothing_ce(uni, {0, 4}, eps).item() ==
              doctest::Approx(std::log(5.0)).epsilon(1e-9));

    // K=3 hand case with eps=0.1
    Tensor lg = Tensor::from_values({1, 3}, {1.0, 0.0, -1.0}, DType::F64);
    const double mx = 1.0;
    const double z = std::exp(0.0) + std::exp(-1.0) + std::exp(-2.0);
    double hand = 0;
    const double q[3] = {0.9 + 0.1 / 3, 0.1 / 3, 0.1 / 3};
    const double lp[3] = {0.0 - std::log(z), -1.0 - std::log(z), -2.0 - std::log(z)};
    for (int k = 0; k < 3; ++k) hand -= q[k] * lp[k];
    (void)mx;
    CHECK(label_smoothing_ce(lg, {0}, 0.1).item() == doctest::Approx(hand).epsilon(1e-9));

    CHECK_THROWS_AS(label_smoothing_ce(lg, {5}, 0.1), ConfigError);
    CHECK_THROWS_AS(label_smoothing_ce(lg, {0}, 1.0), ConfigError);
}

TEST_CASE("retrieval metrics: identities, hand ranks, ordering properties") {
    const int64_t B = 4;
    Tensor eye = Tensor::zeros({B, B}, DType::F64);
    for (int64_t i = 0; i < B; ++i) eye.write(i * B + i, 1.0);
    RetrievalMetrics m = retrieval_metrics(eye);
    CHECK(m.r1 == 100.0);
    CHECK(m.mdr == 1.0);
    CHECK(m.mnr == 1.0);

    // anti-diagonal dominates: R@1 is zero
    Tensor anti = Tensor::zeros({B, B}, DType::F64);
    for (int64_t i = 0; i < B; ++i) anti.write(i * B + (B - 1 - i), 2.0);
    CHECK(retrieval_metrics(anti).r1 == 0.0);

    // 4x4 hand matrix; ranks enumerated by hand: diag scores 0.9/0.4/0.8/0.1
    Tensor hand = Tensor::from_values({4, 4},
                                      {0.9, 0.2, 0.3, 0.1,   // rank 1
                                       0.5, 0.4, 0.3, 0.2,   // rank 2
                                       0.1, 0.9, 0.8, 0.85,  // rank 3
                                       0.4, 0.3, 0.2, 0.1},  // rank 4
                                      DType::F64);
    RetrievalMetrics hm = retrieval_metrics(hand);
    CHECK(hm.r1 == 25.0);
    CHECK(hm.r5 == 100.0);
    CHECK(hm.r10 == 100.0);
    CHECK(hm.mdr == 2.5);
    CHECK(hm.mnr == doctest::Approx(2.5));

    // ties break toward the lower index
    Tensor tie = Tensor::from_values({2, 2}, {0.5, 0.5, 0.5, 0.5}, DType::F64);
    RetrievalMetrics tm = retrieval_metrics(tie);
    CHECK(tm.r1 == 50.0);  // row 0 keeps rank 1, row 1 loses the tie to index 0

    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor r = rand_tensor({6, 6}, rng, DType::F64);
        RetrievalMetrics rm = retrieval_metrics(r);
        CHECK(rm.r1 <= rm.r5);
        CHECK(rm.r5 <= rm.r10);
        CHECK(rm.mnr >= 1.0);
    }
}

TEST_CASE("logit scale: init and clamp") {
    CHECK(initial_logit_scale() == doctest::Approx(std::log(1.0 / 0.07)));
    Tensor p = Tensor::scalar(std::log(200.0), DType::F64);
    CHECK(logit_scale_value(p).item() == doctest::Approx(100.0).epsilon(1e-9));
    Tensor q = Tensor::scalar(initial_logit_scale(), DType::F64);
    CHECK(logit_scale_value(q).item() == doctest::Approx(1.0 / 0.07).epsilon(1e-9));
}

TEST_CASE("text encoder shapes, determinism and gradients") {
    nn::ParamStore store;
    Rng rng(6);
    TextConfig cfg;
    cfg.vocab = 10;
    cfg.max_len = 6;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.proj_dim = 4;
    TextParams text = make_text(store, "text", cfg, rng, DType::F64);
    std::vector<std::vector<int64_t>> seqs = {{2, 3, 4, 1}, {5, 1}};
    TextOutput out = text_forward(seqs, text, DType::F64);
    CHECK(out.tokens.shape() == std::vector<int64_t>{2, 6, 4});
    CHECK(out.eos.shape() == std::vector<int64_t>{2, 4});
    CHECK(out.lengths == std::vector<int64_t>{4, 2});
    // eos row equals the token row at the EOS position
    for (int64_t c = 0; c < 4; ++c) {
        CHECK(out.eos.read(c) == out.tokens.read((0 * 6 + 3) * 4 + c));
        CHECK(out.eos.read(4 + c) == out.tokens.read((1 * 6 + 1) * 4 + c));
    }
    TextOutput again = text_forward(seqs, text, DType::F64);
    CHECK(bits_equal(out.tokens, again.tokens));

    CHECK_THROWS_AS(text_forward({{11}}, text, DType::F64), ConfigError);
    CHECK_THROWS_AS(text_forward({{1, 2, 3, 4, 5, 1, 1}}, text, DType::F64), ConfigError);

    // gradients through the full encoder into a contrastive loss
    Tensor video = rand_tensor({2, 3, 4}, rng, DType::F64).set_requires_grad(true);
    std::vector<Tensor> params = {video};
    for (const auto& [name, t] : store.entries())
        if (t.requires_grad()) params.push_back(t);
    Tensor scale = Tensor::scalar(2.0, DType::F64);
    auto report = fd_check(params, [&] {
        TextOutput t = text_forward(seqs, text, DType::F64);
        Tensor sim = O::pairwise_token_sim(O::l2norm_lastdim(video),
                                           O::l2norm_lastdim(t.tokens), t.lengths);
        return contrastive_loss(sim, scale);
    });
    CHECK(report.max_rel < 1e-5);
}

TEST_CASE("tokenwise similarity scalar interface") {
    Rng rng(7);
    Tensor v = O::l2norm_lastdim(rand_tensor({3, 5}, rng, DType::F64));
    CHECK(tokenwise_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS(tokenwise_similarity(Tensor::zeros({0, 5}, DType::F64), v), Error);
}
