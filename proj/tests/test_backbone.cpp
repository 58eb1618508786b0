#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "s4v/checkpoint.hpp"
#include "s4v/vit.hpp"
#include "test_util.hpp"

using namespace s4v;
using namespace s4v::testing;
namespace O = s4v::ops;

namespace {
ViTConfig tiny_cfg() {
    ViTConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 8;
    cfg.layers = 2;
    cfg.dim = 32;
    return cfg;
}
}  // namespace

TEST_CASE("patch embedding shapes and broadcast") {
    // H = W = P: a single patch, sequence length 2
    ViTConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 8;
    cfg.layers = 1;
    cfg.dim = 16;
    nn::ParamStore store;
    Rng rng(3);
    ViTParams vit = make_vit(store, "vit", cfg, rng, DType::F64, false);
    Tensor frames = rand_tensor({2, 3, 3, 8, 8}, rng, DType::F64);
    Tensor emb = patch_embed_image(frames, vit);
    CHECK(emb.shape() == std::vector<int64_t>{2, 3, 2, 16});

    // zero image and zero [CLS]: the output is the positional embedding
    ViTParams& v = vit;
    for (int64_t i = 0; i < v.cls_token.numel(); ++i) v.cls_token.write(i, 0.0);
    Tensor zeros = Tensor::zeros({1, 2, 3, 8, 8}, DType::F64);
    Tensor out = patch_embed_image(zeros, v);
    for (int64_t t = 0; t < 2; ++t)
        for (int64_t s = 0; s < 2; ++s)
            for (int64_t d = 0; d < 16; ++d)
                CHECK(out.read((t * 2 + s) * 16 + d) == v.pos_embed.read(s * 16 + d));
}

TEST_CASE("patch projection against hand-set weights") {
    // 4x4 image with 2x2 patches: four patches, hand-checkable projection
    ViTConfig cfg;
    cfg.image_size = 4;
    cfg.patch_size = 2;
    cfg.layers = 1;
    cfg.dim = 2;
    cfg.heads = 1;
    nn::ParamStore store;
    Rng rng(5);
    ViTParams vit = make_vit(store, "vit", cfg, rng, DType::F64, false);
    Tensor frames = rand_tensor({1, 1, 3, 4, 4}, rng, DType::F64);
    Tensor cols = patchify(frames, cfg);
    CHECK(cols.shape() == std::vector<int64_t>{1, 1, 4, 12});
    // independent index math: patch (gy,gx), entry (c,py,px)
    for (int64_t gy = 0; gy < 2; ++gy)
        for (int64_t gx = 0; gx < 2; ++gx)
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t py = 0; py < 2; ++py)
                    for (int64_t px = 0; px < 2; ++px) {
                        const double expect =
                            frames.read((c * 4 + gy * 2 + py) * 4 + gx * 2 + px);
                        const double got =
                            cols.read((gy * 2 + gx) * 12 + (c * 2 + py) * 2 + px);
                        CHECK(got == expect);
                    }
    // hand-computed projection of patch 0 with unit row weights
    for (int64_t i = 0; i < vit.patch_weight.numel(); ++i) vit.patch_weight.write(i, 0.0);
    for (int64_t k = 0; k < 12; ++k) vit.patch_weight.write(k * 2 + 0, 1.0);  // column 0 sums
    vit.patch_weight.write(3 * 2 + 1, 2.0);  // column 1 doubles entry 3
    Tensor emb = patch_embed_image(frames, vit);
    double sum0 = 0;
    for (int64_t k = 0; k < 12; ++k) sum0 += cols.read(k);
    // sequence slot 1 is patch 0; subtract the positional embedding
    const double got0 = emb.read(1 * 2 + 0) - vit.pos_embed.read(1 * 2 + 0);
    const double got1 = emb.read(1 * 2 + 1) - vit.pos_embed.read(1 * 2 + 1);
    CHECK(got0 == doctest::Approx(sum0).epsilon(1e-12));
    CHECK(got1 == doctest::Approx(2.0 * cols.read(3)).epsilon(1e-12));
}

TEST_CASE("vit_forward taps, determinism and zero saved bytes") {
    ViTConfig cfg = tiny_cfg();
    nn::ParamStore store;
    Rng rng(7);
    // trainable parameters make the no-grad guarantee non-vacuous
    ViTParams vit = make_vit(store, "vit", cfg, rng, DType::F32, true);
    Tensor frames = rand_tensor({2, 3, 3, 16, 16}, rng, DType::F32);

    Tape tape;
    TapeScope scope(tape);
    BackboneOutput out = vit_forward(frames, vit, {1, 2});
    CHECK(tape.node_count() == 0);
    CHECK(tape.saved_bytes() == 0);
    REQUIRE(out.taps.size() == 2);
    CHECK(out.taps[0].layer_index == 1);
    CHECK(out.taps[1].layer_index == 2);
    CHECK(out.taps[0].cls.shape() == std::vector<int64_t>{2, 3, 32});
    CHECK(out.taps[0].patches.shape() == std::vector<int64_t>{2, 3, 4, 32});
    CHECK(out.z_out.shape() == std::vector<int64_t>{2, 3, 32});
    CHECK_FALSE(out.z_out.requires_grad());

    BackboneOutput again = vit_forward(frames, vit, {1, 2});
    CHECK(bits_equal(out.z_out, again.z_out));
    CHECK(bits_equal(out.taps[0].patches, again.taps[0].patches));

    // the same forward outside the scope records and saves
    BackboneOutput recorded = vit_forward_recorded(frames, vit, {1, 2});
    CHECK(tape.node_count() > 0);
    CHECK(tape.saved_bytes() > 0);
    (void)recorded;

    CHECK_THROWS_AS(vit_forward(frames, vit, {0}), ConfigError);
    CHECK_THROWS_AS(vit_forward(frames, vit, {3}), ConfigError);
}

TEST_CASE("tap at the final layer is the pre-head state z_out is computed from") {
    ViTConfig cfg = tiny_cfg();
    nn::ParamStore store;
    Rng rng(9);
    ViTParams vit = make_vit(store, "vit", cfg, rng, DType::F64, false);
    Tensor frames = rand_tensor({1, 2, 3, 16, 16}, rng, DType::F64);
    BackboneOutput out = vit_forward(frames, vit, {2});
    Tensor z_again = vit.ln_final.forward(out.taps[0].cls);
    CHECK(max_abs_diff(z_again, out.z_out) == 0.0);
}

TEST_CASE("checkpoint round trip is bit exact and errors are precise") {
    const std::string path = "/tmp/s4v_test_ckpt.s4v";
    const std::string path2 = "/tmp/s4v_test_ckpt2.s4v";
    nn::ParamStore store;
    Rng rng(11);
    ViTConfig cfg = tiny_cfg();
    make_vit(store, "vit", cfg, rng, DType::F32, false);
    save_store(store, path);

    // bit-identical buffers after loading into a freshly built model
    nn::ParamStore store2;
    Rng rng2(999);  // different init seed, must be overwritten by the load
    make_vit(store2, "vit", cfg, rng2, DType::F32, false);
    load_into_store(store2, path);
    for (const auto& [name, t] : store.entries())
        CHECK(bits_equal(t, store2.at(name)));

    // save -> load -> save produces identical archives
    save_store(store2, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(c1 == c2);
    CHECK(!c1.empty());

    // wrong magic
    {
        std::ofstream bad("/tmp/s4v_bad_magic.s4v", std::ios::binary);
        bad << "NOPE" << std::string(64, '\0');
    }
    CHECK_THROWS_AS(load_archive("/tmp/s4v_bad_magic.s4v"), IoError);

    // truncation
    {
        std::ofstream trunc("/tmp/s4v_trunc.s4v", std::ios::binary);
        trunc.write(c1.data(), static_cast<std::streamsize>(c1.size() / 2));
    }
    CHECK_THROWS_AS(load_archive("/tmp/s4v_trunc.s4v"), IoError);

    // a missing name is reported by name
    TensorArchive arch = load_archive(path);
    arch.erase("vit.cls_token");
    save_archive(arch, "/tmp/s4v_missing.s4v");
    try {
        load_into_store(store2, "/tmp/s4v_missing.s4v");
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("vit.cls_token") != std::string::npos);
    }

    // an extra name is reported by name
    arch = load_archive(path);
    arch.emplace("vit.spurious", Tensor::zeros({2}, DType::F32));
    save_archive(arch, "/tmp/s4v_extra.s4v");
    try {
        load_into_store(store2, "/tmp/s4v_extra.s4v");
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("vit.spurious") != std::string::npos);
    }

    // per-tensor shape mismatch names the tensor
    arch = load_archive(path);
    arch.at("vit.cls_token") = Tensor::zeros({7}, DType::F32);
    save_archive(arch, "/tmp/s4v_shape.s4v");
    try {
        load_into_store(store2, "/tmp/s4v_shape.s4v");
        CHECK(false);
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("vit.cls_token") != std::string::npos);
        CHECK(msg.find("[7]") != std::string::npos);
    }
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("post-norm variant runs and differs from pre-norm") {
    ViTConfig cfg = tiny_cfg();
    nn::ParamStore s1, s2;
    Rng rng(13);
    ViTParams pre = make_vit(s1, "vit", cfg, rng, DType::F32, false);
    cfg.norm_style = ViTConfig::Norm::kPost;
    Rng rng2(13);
    ViTParams post = make_vit(s2, "vit", cfg, rng2, DType::F32, false);
    Rng frng(1);
    Tensor frames = rand_tensor({1, 1, 3, 16, 16}, frng, DType::F32);
    Tensor a = vit_forward(frames, pre, {2}).z_out;
    Tensor b = vit_forward(frames, post, {2}).z_out;
    CHECK_FALSE(bits_equal(a, b));
}
