#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>

#include "doctest.h"
#include "s4v/kernels.hpp"
#include "s4v/ops.hpp"
#include "test_util.hpp"

using namespace s4v;
using namespace s4v::testing;
namespace O = s4v::ops;

namespace {
Tensor t64(std::vector<int64_t> shape, std::vector<double> vals) {
    return Tensor::from_values(std::move(shape), vals, DType::F64);
}
}  // namespace

TEST_CASE("matmul forward examples") {
    Tensor eye = t64({2, 2}, {1, 0, 0, 1});
    Tensor m = t64({2, 2}, {3, -1, 2, 7});
    Tensor out = O::matmul(eye, m);
    CHECK(bits_equal(out, m));

    Tensor a = t64({1, 2}, {1, 2});
    Tensor b = t64({2, 1}, {3, 4});
    CHECK(O::matmul(a, b).item() == doctest::Approx(11.0));

    CHECK_THROWS_AS(O::matmul(t64({2, 3}, {1, 2, 3, 4, 5, 6}), t64({2, 2}, {1, 2, 3, 4})),
                    ShapeError);
    try {
        O::matmul(t64({2, 3}, {1, 2, 3, 4, 5, 6}), t64({2, 2}, {1, 2, 3, 4}));
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[2,2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient vs finite differences, 4x5 by 5x3 in f64") {
    Rng rng(1);
    Tensor a = rand_tensor({4, 5}, rng, DType::F64);
    Tensor b = rand_tensor({5, 3}, rng, DType::F64);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto report = fd_check({a, b}, [&] { return O::sum_all(O::matmul(a, b)); });
    CHECK(report.checked == 35);
    CHECK(report.max_rel < 1e-6);
}

TEST_CASE("softmax examples") {
    Tensor u = O::softmax_lastdim(t64({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(u.read(i) == doctest::Approx(1.0 / 3.0));

    Tensor s = O::softmax_lastdim(t64({3}, {1000, 0, 0}));
    CHECK(s.read(0) == doctest::Approx(1.0));
    CHECK(s.read(1) == doctest::Approx(0.0));

    // independent high-precision oracle for [1,2,3]
    long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
    long double z = e1 + e2 + e3;
    Tensor y = O::softmax_lastdim(t64({3}, {1, 2, 3}));
    CHECK(y.read(0) == doctest::Approx(static_cast<double>(e1 / z)).epsilon(1e-12));
    CHECK(y.read(1) == doctest::Approx(static_cast<double>(e2 / z)).epsilon(1e-12));
    CHECK(y.read(2) == doctest::Approx(static_cast<double>(e3 / z)).epsilon(1e-12));

    // rows sum to one
    Rng rng(3);
    Tensor x = rand_tensor({4, 7}, rng, DType::F64, -5, 5);
    Tensor sm = O::softmax_lastdim(x);
    for (int64_t r = 0; r < 4; ++r) {
        double acc = 0;
        for (int64_t c = 0; c < 7; ++c) acc += sm.read(r * 7 + c);
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("layernorm examples") {
    Tensor gamma = Tensor::full({4}, 1.0, DType::F64);
    Tensor beta = Tensor::zeros({4}, DType::F64);
    Tensor c = O::layernorm(t64({1, 4}, {5, 5, 5, 5}), gamma, beta, 1e-5);
    for (int i = 0; i < 4; ++i) CHECK(c.read(i) == doctest::Approx(0.0));

    Tensor g2 = Tensor::full({2}, 1.0, DType::F64);
    Tensor b2 = Tensor::zeros({2}, DType::F64);
    Tensor two = O::layernorm(t64({1, 2}, {1, 3}), g2, b2, 1e-12);
    CHECK(two.read(0) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(two.read(1) == doctest::Approx(1.0).epsilon(1e-6));

    Rng rng(5);
    Tensor x = rand_tensor({2, 8}, rng, DType::F64);
    Tensor gamma8 = rand_tensor({8}, rng, DType::F64, 0.5, 1.5);
    Tensor beta8 = rand_tensor({8}, rng, DType::F64);
    x.set_requires_grad(true);
    gamma8.set_requires_grad(true);
    beta8.set_requires_grad(true);
    Tensor w = rand_tensor({2, 8}, rng, DType::F64);
    auto report = fd_check({x, gamma8, beta8},
                           [&] { return O::sum_all(O::mul(O::layernorm(x, gamma8, beta8), w)); });
    CHECK(report.max_rel < 1e-5);
}

TEST_CASE("batchnorm examples") {
    const int64_t C = 3;
    Tensor gamma = Tensor::full({C}, 1.0, DType::F64);
    Tensor beta = Tensor::zeros({C}, DType::F64);
    Tensor rm = Tensor::zeros({C}, DType::F64);
    Tensor rv = Tensor::full({C}, 1.0, DType::F64);

    // constant input in training mode -> zero pre-affine
    Tensor xc = Tensor::full({2, 2, 2, C}, 3.25, DType::F64);
    Tensor out = O::batchnorm_btnc(xc, gamma, beta, rm, rv, 0.1, 1e-5, true, false);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.read(i) == doctest::Approx(0.0));

    // eval with mean 0 / var 1 / identity affine is the identity up to eps
    Rng rng(9);
    Tensor x = rand_tensor({1, 2, 2, C}, rng, DType::F64);
    rm = Tensor::zeros({C}, DType::F64);
    rv = Tensor::full({C}, 1.0, DType::F64);
    Tensor idly = O::batchnorm_btnc(x, gamma, beta, rm, rv, 0.1, 1e-5, false, false);
    CHECK(max_abs_diff(idly, x) < 2e-5);

    // two-sample batch against hand-pooled statistics
    Tensor x2 = t64({2, 1, 1, 1}, {1.0, 5.0});
    Tensor g1 = Tensor::full({1}, 1.0, DType::F64);
    Tensor b1 = Tensor::zeros({1}, DType::F64);
    Tensor rm1 = Tensor::zeros({1}, DType::F64);
    Tensor rv1 = Tensor::full({1}, 1.0, DType::F64);
    Tensor o2 = O::batchnorm_btnc(x2, g1, b1, rm1, rv1, 0.1, 1e-5, true, true);
    // mean 3, biased var 4
    const double expect = (1.0 - 3.0) / std::sqrt(4.0 + 1e-5);
    CHECK(o2.read(0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(o2.read(1) == doctest::Approx(-expect).epsilon(1e-12));
    // running stats: momentum 0.1, unbiased var 8
    CHECK(rm1.read(0) == doctest::Approx(0.9 * 0.0 + 0.1 * 3.0));
    CHECK(rv1.read(0) == doctest::Approx(0.9 * 1.0 + 0.1 * 8.0));

    // degenerate batch
    Tensor x1 = Tensor::full({1, 1, 1, C}, 2.0, DType::F64);
    CHECK_THROWS_AS(O::batchnorm_btnc(x1, gamma, beta, rm, rv, 0.1, 1e-5, true, false),
                    ShapeError);
}

TEST_CASE("temporal depthwise conv examples") {
    Rng rng(21);
    // identity kernel
    Tensor x = rand_tensor({2, 4, 3, 2}, rng, DType::F64);
    Tensor wid = t64({2, 3}, {0, 1, 0, 0, 1, 0});
    CHECK(bits_equal(O::conv_temporal_depthwise(x, wid), x));

    // T=1 with taps only on the padded frames
    Tensor x1 = rand_tensor({2, 1, 3, 2}, rng, DType::F64);
    Tensor wpad = t64({2, 3}, {1, 0, 1, 1, 0, 1});
    Tensor zero = O::conv_temporal_depthwise(x1, wpad);
    for (int64_t i = 0; i < zero.numel(); ++i) CHECK(zero.read(i) == 0.0);

    // hand-unrolled sum at T=3, C=2
    Tensor h = rand_tensor({1, 3, 1, 2}, rng, DType::F64);
    Tensor w = rand_tensor({2, 3}, rng, DType::F64);
    Tensor out = O::conv_temporal_depthwise(h, w);
    for (int64_t t = 0; t < 3; ++t)
        for (int64_t c = 0; c < 2; ++c) {
            double acc = 0;
            for (int64_t k = 0; k < 3; ++k) {
                const int64_t ts = t + k - 1;
                if (ts < 0 || ts >= 3) continue;
                acc += w.read(c * 3 + k) * h.read(ts * 2 + c);
            }
            CHECK(out.read(t * 2 + c) == doctest::Approx(acc).epsilon(1e-12));
        }

    h.set_requires_grad(true);
    w.set_requires_grad(true);
    Tensor mask = rand_tensor({1, 3, 1, 2}, rng, DType::F64);
    auto report = fd_check(
        {h, w}, [&] { return O::sum_all(O::mul(O::conv_temporal_depthwise(h, w), mask)); });
    CHECK(report.max_rel < 1e-5);
}

TEST_CASE("backward examples") {
    Rng rng(33);
    Tensor x = rand_tensor({3, 4}, rng, DType::F64);
    x.set_requires_grad(true);

    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(O::sum_all(x));
        Tensor g = x.grad();
        REQUIRE(g.defined());
        for (int64_t i = 0; i < g.numel(); ++i) CHECK(g.read(i) == 1.0);
        x.impl()->grad.reset();
    }
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(O::sum_all(O::mul(x, x)));
        Tensor g = x.grad();
        for (int64_t i = 0; i < g.numel(); ++i)
            CHECK(g.read(i) == doctest::Approx(2.0 * x.read(i)).epsilon(1e-12));
        x.impl()->grad.reset();
    }
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor y = O::mul(x, x);
        CHECK_THROWS_AS(tape.backward(y), ShapeError);
    }
}

TEST_CASE("no_grad suppresses recording and saved bytes") {
    Rng rng(4);
    Tensor w = rand_tensor({8, 8}, rng, DType::F64);
    Tensor b = rand_tensor({8}, rng, DType::F64);
    Tensor x = rand_tensor({4, 8}, rng, DType::F64);
    w.set_requires_grad(true);
    b.set_requires_grad(true);

    Tape tape;
    TapeScope scope(tape);
    Tensor frozen = no_grad([&] { return O::linear(x, w, b); });
    CHECK(tape.node_count() == 0);
    CHECK(tape.saved_bytes() == 0);
    CHECK_FALSE(frozen.requires_grad());

    // two-layer forward outside the scope does record and save
    Tensor h = O::gelu(O::linear(x, w, b));
    Tensor y = O::linear(h, w, b);
    CHECK(tape.node_count() > 0);
    CHECK(tape.saved_bytes() > 0);

    // accounting matches the independent walk
    auto [total, act] = tape_bytes_oracle(tape);
    CHECK(tape.saved_bytes() == total);
    CHECK(tape.saved_activation_bytes() == act);

    // inside the scope the same forward contributes nothing
    const size_t nodes_before = tape.node_count();
    const size_t bytes_before = tape.saved_bytes();
    Tensor again = no_grad([&] { return O::linear(O::gelu(O::linear(x, w, b)), w, b); });
    CHECK(tape.node_count() == nodes_before);
    CHECK(tape.saved_bytes() == bytes_before);
    (void)y;
    (void)again;
}

TEST_CASE("persistent buffers are excluded from activation bytes") {
    Rng rng(6);
    Tensor w = rand_tensor({4, 4}, rng, DType::F64);
    w.set_requires_grad(true);
    w.set_persistent(true);
    Tensor x = rand_tensor({2, 4}, rng, DType::F64);

    Tape tape;
    TapeScope scope(tape);
    Tensor y = O::matmul(x, w);
    // dW needs x (activation); x does not flow gradients so w is not saved
    CHECK(tape.saved_bytes() == x.nbytes());
    CHECK(tape.saved_activation_bytes() == x.nbytes());
    tape.backward(O::sum_all(y));
    CHECK(w.grad().defined());
    CHECK_FALSE(x.grad().defined());
}

TEST_CASE("shift_cls examples and index oracle") {
    // T=1: both halves read padded frames
    Rng rng(8);
    Tensor one = rand_tensor({2, 1, 4}, rng, DType::F64);
    Tensor so = O::shift_cls(one);
    for (int64_t i = 0; i < so.numel(); ++i) CHECK(so.read(i) == 0.0);

    // constant over t: interior equals input, one half zero at each boundary
    const int64_t T = 4, D = 6, h = 3;
    Tensor c = Tensor::empty({1, T, D}, DType::F64);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t d = 0; d < D; ++d) c.write(t * D + d, 1.0 + d);
    Tensor sc = O::shift_cls(c);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t d = 0; d < D; ++d) {
            double expect = 1.0 + d;
            if (t == 0 && d < h) expect = 0.0;
            if (t == T - 1 && d >= h) expect = 0.0;
            CHECK(sc.read(t * D + d) == expect);
        }

    // exact permutation-with-zeros map at T=3, D=4
    Tensor x = Tensor::empty({1, 3, 4}, DType::F64);
    for (int64_t i = 0; i < x.numel(); ++i) x.write(i, 100 + i);
    Tensor y = O::shift_cls(x);
    for (int64_t t = 0; t < 3; ++t)
        for (int64_t d = 0; d < 4; ++d) {
            const int64_t src_t = d < 2 ? t - 1 : t + 1;
            const double expect = (src_t < 0 || src_t >= 3) ? 0.0 : x.read(src_t * 4 + d);
            CHECK(y.read(t * 4 + d) == expect);
        }

    // nonzero count B*(T-1)*D for T >= 2 on nowhere-zero input
    Tensor nz = rand_tensor({2, 5, 6}, rng, DType::F64, 0.5, 1.5);
    Tensor sh = O::shift_cls(nz);
    int64_t nonzero = 0;
    for (int64_t i = 0; i < sh.numel(); ++i)
        if (sh.read(i) != 0.0) ++nonzero;
    CHECK(nonzero == 2 * (5 - 1) * 6);
}

TEST_CASE("pairwise token similarity against exhaustive oracle") {
    Rng rng(12);
    // identical rows -> similarity 1
    Tensor v = O::l2norm_lastdim(rand_tensor({1, 3, 5}, rng, DType::F64));
    Tensor sim = O::pairwise_token_sim(v, v, {3});
    CHECK(sim.item() == doctest::Approx(1.0).epsilon(1e-9));

    // orthogonal rows everywhere -> 0
    Tensor a = Tensor::zeros({1, 2, 4}, DType::F64);
    a.write(0 * 4 + 0, 1.0);
    a.write(1 * 4 + 1, 1.0);
    Tensor b = Tensor::zeros({1, 2, 4}, DType::F64);
    b.write(0 * 4 + 2, 1.0);
    b.write(1 * 4 + 3, 1.0);
    CHECK(O::pairwise_token_sim(a, b, {2}).item() == doctest::Approx(0.0));

    // brute force over all pairs, T=2, L=3
    Tensor video = O::l2norm_lastdim(rand_tensor({2, 2, 6}, rng, DType::F64));
    Tensor text = O::l2norm_lastdim(rand_tensor({3, 3, 6}, rng, DType::F64));
    std::vector<int64_t> lens = {3, 2, 3};
    Tensor s = O::pairwise_token_sim(video, text, lens);
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j) {
            const int64_t lj = lens[static_cast<size_t>(j)];
            auto dot = [&](int64_t t, int64_t l) {
                double acc = 0;
                for (int64_t e = 0; e < 6; ++e)
                    acc += video.read((i * 2 + t) * 6 + e) * text.read((j * 3 + l) * 6 + e);
                return acc;
            };
            double s1 = 0;
            for (int64_t l = 0; l < lj; ++l) {
                double best = dot(0, l);
                for (int64_t t = 1; t < 2; ++t) best = std::max(best, dot(t, l));
                s1 += best;
            }
            s1 /= static_cast<double>(lj);
            double s2 = 0;
            for (int64_t t = 0; t < 2; ++t) {
                double best = dot(t, 0);
                for (int64_t l = 1; l < lj; ++l) best = std::max(best, dot(t, l));
                s2 += best;
            }
            s2 /= 2.0;
            CHECK(s.read(i * 3 + j) == doctest::Approx(0.5 * (s1 + s2)).epsilon(1e-9));
            CHECK(s.read(i * 3 + j) <= 1.0 + 1e-9);
            CHECK(s.read(i * 3 + j) >= -1.0 - 1e-9);
        }

    // symmetry: swapping arguments transposes the matrix (equal lengths)
    Tensor vv = O::l2norm_lastdim(rand_tensor({2, 3, 6}, rng, DType::F64));
    Tensor ww = O::l2norm_lastdim(rand_tensor({2, 3, 6}, rng, DType::F64));
    Tensor s12 = O::pairwise_token_sim(vv, ww, {3, 3});
    Tensor s21 = O::pairwise_token_sim(ww, vv, {3, 3});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 2; ++j)
            CHECK(s12.read(i * 2 + j) == doctest::Approx(s21.read(j * 2 + i)).epsilon(1e-12));

    CHECK_THROWS_AS(O::pairwise_token_sim(video, text, {3, 0, 3}), ShapeError);
}

TEST_CASE("finite differences pass for every differentiable op on 3 shapes") {
    struct Case {
        std::string name;
        std::function<FdReport(int)> run;
    };
    // the projection mask is drawn once per case: the loss must be the same
    // function on every finite-difference evaluation
    auto weighted = [](Rng& rng, const std::vector<int64_t>& shape) {
        Tensor w = rand_tensor(shape, rng, DType::F64);
        return [w](const Tensor& y) { return O::sum_all(O::mul(y, w)); };
    };
    std::vector<Case> cases;

    cases.push_back({"add_broadcast", [&weighted](int s) {
        Rng rng(100 + s);
        std::vector<std::vector<int64_t>> sa = {{3, 4}, {2, 3, 4}, {5}};
        std::vector<std::vector<int64_t>> sb = {{4}, {2, 1, 4}, {5}};
        Tensor a = rand_tensor(sa[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        Tensor b = rand_tensor(sb[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        auto mask = weighted(rng, sa[static_cast<size_t>(s)]);
        return fd_check({a, b}, [&, mask] { return mask(O::add(a, b)); });
    }});
    cases.push_back({"mul_broadcast", [&weighted](int s) {
        Rng rng(200 + s);
        std::vector<std::vector<int64_t>> sa = {{3, 4}, {2, 3, 4}, {6}};
        std::vector<std::vector<int64_t>> sb = {{3, 1}, {4}, {6}};
        Tensor a = rand_tensor(sa[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        Tensor b = rand_tensor(sb[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        auto mask = weighted(rng, sa[static_cast<size_t>(s)]);
        return fd_check({a, b}, [&, mask] { return mask(O::mul(a, b)); });
    }});
    cases.push_back({"matmul_batched", [&weighted](int s) {
        Rng rng(300 + s);
        std::vector<std::vector<int64_t>> sa = {{2, 3, 4}, {2, 2, 2, 3}, {4, 5}};
        std::vector<std::vector<int64_t>> sb = {{2, 4, 2}, {3, 2}, {5, 3}};
        std::vector<std::vector<int64_t>> so = {{2, 3, 2}, {2, 2, 2, 2}, {4, 3}};
        Tensor a = rand_tensor(sa[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        Tensor b = rand_tensor(sb[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        auto mask = weighted(rng, so[static_cast<size_t>(s)]);
        return fd_check({a, b}, [&, mask] { return mask(O::matmul(a, b)); });
    }});
    cases.push_back({"gelu", [&weighted](int s) {
        Rng rng(400 + s);
        std::vector<std::vector<int64_t>> sh = {{7}, {3, 5}, {2, 2, 3}};
        Tensor x = rand_tensor(sh[static_cast<size_t>(s)], rng, DType::F64, -2, 2)
                       .set_requires_grad(true);
        auto mask = weighted(rng, sh[static_cast<size_t>(s)]);
        return fd_check({x}, [&, mask] { return mask(O::gelu(x)); });
    }});
    cases.push_back({"softmax", [&weighted](int s) {
        Rng rng(500 + s);
        std::vector<std::vector<int64_t>> sh = {{5}, {3, 4}, {2, 3, 3}};
        Tensor x = rand_tensor(sh[static_cast<size_t>(s)], rng, DType::F64, -3, 3)
                       .set_requires_grad(true);
        auto mask = weighted(rng, sh[static_cast<size_t>(s)]);
        return fd_check({x}, [&, mask] { return mask(O::softmax_lastdim(x)); });
    }});
    cases.push_back({"log_softmax", [&weighted](int s) {
        Rng rng(600 + s);
        std::vector<std::vector<int64_t>> sh = {{5}, {3, 4}, {2, 3, 3}};
        Tensor x = rand_tensor(sh[static_cast<size_t>(s)], rng, DType::F64, -3, 3)
                       .set_requires_grad(true);
        auto mask = weighted(rng, sh[static_cast<size_t>(s)]);
        return fd_check({x}, [&, mask] { return mask(O::log_softmax_lastdim(x)); });
    }});
    cases.push_back({"layernorm", [&weighted](int s) {
        Rng rng(700 + s);
        std::vector<std::vector<int64_t>> sh = {{2, 6}, {3, 2, 4}, {1, 9}};
        Tensor x = rand_tensor(sh[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        const int64_t c = sh[static_cast<size_t>(s)].back();
        Tensor g = rand_tensor({c}, rng, DType::F64, 0.5, 1.5).set_requires_grad(true);
        Tensor b = rand_tensor({c}, rng, DType::F64).set_requires_grad(true);
        auto mask = weighted(rng, sh[static_cast<size_t>(s)]);
        return fd_check({x, g, b}, [&, mask] { return mask(O::layernorm(x, g, b)); });
    }});
    cases.push_back({"batchnorm_train", [&weighted](int s) {
        Rng rng(800 + s);
        std::vector<std::vector<int64_t>> sh = {{2, 2, 2, 3}, {1, 4, 2, 2}, {3, 1, 2, 4}};
        const int64_t c = sh[static_cast<size_t>(s)].back();
        Tensor x = rand_tensor(sh[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        Tensor g = rand_tensor({c}, rng, DType::F64, 0.5, 1.5).set_requires_grad(true);
        Tensor b = rand_tensor({c}, rng, DType::F64).set_requires_grad(true);
        Tensor rm = Tensor::zeros({c}, DType::F64);
        Tensor rv = Tensor::full({c}, 1.0, DType::F64);
        auto mask = weighted(rng, sh[static_cast<size_t>(s)]);
        return fd_check({x, g, b}, [&, mask, rm, rv]() mutable {
            return mask(O::batchnorm_btnc(x, g, b, rm, rv, 0.1, 1e-5, true, false));
        });
    }});
    cases.push_back({"batchnorm_eval", [&weighted](int s) {
        Rng rng(900 + s);
        std::vector<std::vector<int64_t>> sh = {{2, 2, 2, 3}, {1, 4, 2, 2}, {1, 1, 1, 4}};
        const int64_t c = sh[static_cast<size_t>(s)].back();
        Tensor x = rand_tensor(sh[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        Tensor g = rand_tensor({c}, rng, DType::F64, 0.5, 1.5).set_requires_grad(true);
        Tensor b = rand_tensor({c}, rng, DType::F64).set_requires_grad(true);
        Tensor rm = rand_tensor({c}, rng, DType::F64);
        Tensor rv = rand_tensor({c}, rng, DType::F64, 0.5, 2.0);
        auto mask = weighted(rng, sh[static_cast<size_t>(s)]);
        return fd_check({x, g, b}, [&, mask, rm, rv]() mutable {
            return mask(O::batchnorm_btnc(x, g, b, rm, rv, 0.1, 1e-5, false, false));
        });
    }});
    cases.push_back({"conv_temporal", [&weighted](int s) {
        Rng rng(1000 + s);
        std::vector<std::vector<int64_t>> sh = {{1, 3, 2, 2}, {2, 1, 3, 2}, {2, 5, 1, 3}};
        const int64_t c = sh[static_cast<size_t>(s)].back();
        Tensor x = rand_tensor(sh[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        Tensor w = rand_tensor({c, 3}, rng, DType::F64).set_requires_grad(true);
        auto mask = weighted(rng, sh[static_cast<size_t>(s)]);
        return fd_check({x, w}, [&, mask] { return mask(O::conv_temporal_depthwise(x, w)); });
    }});
    cases.push_back({"l2norm", [&weighted](int s) {
        Rng rng(1100 + s);
        std::vector<std::vector<int64_t>> sh = {{3, 4}, {2, 2, 5}, {1, 6}};
        Tensor x = rand_tensor(sh[static_cast<size_t>(s)], rng, DType::F64, 0.2, 1.0)
                       .set_requires_grad(true);
        auto mask = weighted(rng, sh[static_cast<size_t>(s)]);
        return fd_check({x}, [&, mask] { return mask(O::l2norm_lastdim(x)); });
    }});
    cases.push_back({"movement", [&weighted](int s) {
        Rng rng(1200 + s);
        Tensor x = rand_tensor({2, 3, 4}, rng, DType::F64).set_requires_grad(true);
        Tensor y = rand_tensor({2, 2, 4}, rng, DType::F64).set_requires_grad(true);
        auto mask = weighted(rng, {2, 4, 4});
        return fd_check({x, y}, [&, mask, s] {
            Tensor a = O::permute(x, {1, 0, 2});
            Tensor b = O::reshape(a, {3, 8});
            Tensor c = O::slice(b, 0, 0, 2);
            Tensor d = O::concat({O::reshape(c, {2, 2, 4}), y}, 1);
            Tensor e = O::time_shift(d, s % 2 == 0 ? 1 : -1);
            return mask(e);
        });
    }});
    cases.push_back({"shift_cls", [&weighted](int s) {
        Rng rng(1300 + s);
        std::vector<std::vector<int64_t>> sh = {{1, 3, 4}, {2, 4, 5}, {2, 1, 3}};
        Tensor x = rand_tensor(sh[static_cast<size_t>(s)], rng, DType::F64).set_requires_grad(true);
        auto mask = weighted(rng, sh[static_cast<size_t>(s)]);
        return fd_check({x}, [&, mask] { return mask(O::shift_cls(x)); });
    }});
    cases.push_back({"mean_and_sums", [](int s) {
        Rng rng(1400 + s);
        Tensor x = rand_tensor({2, 3, 4}, rng, DType::F64).set_requires_grad(true);
        return fd_check({x}, [&, s] {
            Tensor m = O::mean_axis(x, s % 3);
            return O::add(O::sum_all(m), O::mean_all(x));
        });
    }});
    cases.push_back({"exp_min_scale", [](int s) {
        Rng rng(1500 + s);
        Tensor x = rand_tensor({4}, rng, DType::F64, -1.5, 1.5).set_requires_grad(true);
        return fd_check({x}, [&] {
            return O::sum_all(O::exp(O::minimum_scalar(O::scale(x, 1.7), 0.8)));
        });
    }});
    cases.push_back({"pairwise_token_sim", [&weighted](int s) {
        Rng rng(1600 + s);
        Tensor v = rand_tensor({2, 2, 4}, rng, DType::F64).set_requires_grad(true);
        Tensor t = rand_tensor({2, 3, 4}, rng, DType::F64).set_requires_grad(true);
        std::vector<int64_t> lens = {3, 2};
        auto mask = weighted(rng, {2, 2});
        return fd_check({v, t}, [&, mask] {
            return mask(O::pairwise_token_sim(O::l2norm_lastdim(v), O::l2norm_lastdim(t), lens));
        });
    }});

    for (auto& c : cases) {
        for (int s = 0; s < 3; ++s) {
            FdReport report = c.run(s);
            INFO(c.name, " shape ", s, " max_rel ", report.max_rel);
            CHECK(report.checked > 0);
            CHECK(report.max_rel < 1e-5);
        }
    }
}

TEST_CASE("deterministic forward across runs and backends") {
    auto run = [] {
        Rng rng(777);
        Tensor x = rand_tensor({4, 8}, rng, DType::F32);
        Tensor w = rand_tensor({8, 8}, rng, DType::F32);
        Tensor g = Tensor::full({8}, 1.0, DType::F32);
        Tensor b = Tensor::zeros({8}, DType::F32);
        return O::softmax_lastdim(O::layernorm(O::gelu(O::matmul(x, w)), g, b));
    };
    Tensor a = run();
    Tensor b = run();
    CHECK(bits_equal(a, b));

    kernels::set_parallel(false);
    Tensor c = run();
    kernels::set_parallel(true);
    CHECK(bits_equal(a, c));
}

TEST_CASE("tape accounting matches oracle on a mixed graph") {
    Rng rng(55);
    Tensor w1 = rand_tensor({6, 6}, rng, DType::F32).set_requires_grad(true);
    Tensor w2 = rand_tensor({6, 6}, rng, DType::F32).set_requires_grad(true);
    w2.set_persistent(true);
    Tensor x = rand_tensor({3, 6}, rng, DType::F32);

    Tape tape;
    TapeScope scope(tape);
    Tensor h = O::gelu(O::matmul(x, w1));
    Tensor y = O::matmul(h, w2);
    Tensor z = O::softmax_lastdim(y);
    // reuse h so a shared buffer is saved twice and must dedup
    Tensor u = O::mul(h, h);
    Tensor loss = O::add(O::sum_all(z), O::sum_all(u));

    auto [total, act] = tape_bytes_oracle(tape);
    CHECK(tape.saved_bytes() == total);
    CHECK(tape.saved_activation_bytes() == act);
    CHECK(total > act);  // w2 is persistent and saved for h's gradient

    tape.backward(loss);
    CHECK(w1.grad().defined());
    CHECK(w2.grad().defined());
}
