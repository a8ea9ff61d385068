#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sid/uvit.hpp"
#include "testutil.hpp"

using namespace sid;

namespace {

UViTConfig toy2(int patch = 1) {
    UViTConfig c;
    c.image_res = 16 * patch;
    c.in_channels = 3;
    c.patch_size = patch;
    c.channels = {8, 16};
    c.num_down_blocks = {2};
    c.num_up_blocks = {2};
    c.num_mid_blocks = 2;
    c.block_type = {BlockKind::ResBlock, BlockKind::Transformer};
    c.block_dropout = {0.0, 0.0};
    c.head_dim = 8;
    c.temb_dim = 32;
    return c;
}

UViTConfig toy3() {
    UViTConfig c;
    c.image_res = 16;
    c.in_channels = 3;
    c.patch_size = 1;
    c.channels = {8, 12, 16};
    c.num_down_blocks = {1, 2};
    c.num_up_blocks = {1, 2};
    c.num_mid_blocks = 1;
    c.block_type = {BlockKind::ResBlock, BlockKind::ResBlock, BlockKind::Transformer};
    c.block_dropout = {0.0, 0.0, 0.0};
    c.head_dim = 8;
    c.temb_dim = 32;
    return c;
}

// reference 512^2 configuration (patch 4)
UViTConfig small512(int patch = 4) {
    UViTConfig c;
    c.image_res = 512;
    c.in_channels = 3;
    c.patch_size = patch;
    c.channels = {128, 256, 512, 1024};
    c.num_down_blocks = {3, 3, 3};
    c.num_up_blocks = {3, 3, 3};
    c.num_mid_blocks = 16;
    c.block_type = {BlockKind::ResBlock, BlockKind::ResBlock, BlockKind::Transformer,
                    BlockKind::Transformer};
    c.block_dropout = {0.0, 0.0, 0.1, 0.1};
    c.num_classes = 1000;
    return c;
}

std::vector<NoiseLevel> levels_of(double lam, size_t n) {
    return std::vector<NoiseLevel>(n, level_from_logsnr(lam));
}

}  // namespace

TEST_CASE("config validation rejects bad level arithmetic") {
    UViTConfig c = toy2();
    c.channels = {8, 16, 32};  // lengths now disagree
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = toy2();
    c.patch_size = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = toy2();
    c.image_res = 9;  // odd token grid cannot be pooled
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = toy2();
    c.block_dropout = {0.0, 1.5};
    CHECK_THROWS_AS(c.validate(), ConfigError);

    CHECK_NOTHROW(toy2().validate());
    UViTConfig zero_mid = toy2();
    zero_mid.num_mid_blocks = 0;  // empty composition must still run
    CHECK_NOTHROW(zero_mid.validate());
}

TEST_CASE("identity at initialization, exactly") {
    Rng rng(1);
    for (bool blockwise : {false, true}) {
        UViTConfig c2 = toy2();
        c2.blockwise_skips = blockwise;
        UViT m2 = UViT::build(c2, rng);
        auto x = Tensor::randn({2, 16, 16, 8}, rng);
        auto y = m2.core_forward(x, levels_of(0.7, 2));
        CHECK(sid::test::max_abs_diff(y.data(), x.data()) < 1e-6);
    }
    UViT m3 = UViT::build(toy3(), rng);
    auto x3 = Tensor::randn({1, 16, 16, 8}, rng);
    auto y3 = m3.core_forward(x3, levels_of(-2.0, 1));
    CHECK(sid::test::max_abs_diff(y3.data(), x3.data()) < 1e-6);

    UViTConfig zm = toy2();
    zm.num_mid_blocks = 0;
    UViT mz = UViT::build(zm, rng);
    auto xz = Tensor::randn({1, 16, 16, 8}, rng);
    CHECK(sid::test::max_abs_diff(mz.core_forward(xz, levels_of(1.0, 1)).data(), xz.data()) <
          1e-6);
}

TEST_CASE("forward preserves shape and keeps examples independent") {
    Rng rng(2);
    UViTConfig c = toy2(2);  // 32^2 input, patch 2
    c.num_classes = 3;
    UViT m = UViT::build(c, rng);
    // perturb params away from identity so the test is not trivial
    for (auto& [name, p] : m.named_params()) {
        auto d = p.mutable_data();
        Rng prng(99);
        for (auto& v : d) v += 0.02 * prng.normal();
    }
    auto z = Tensor::randn({2, 32, 32, 3}, rng);
    std::vector<NoiseLevel> lv{level_from_logsnr(1.0), level_from_logsnr(-2.0)};
    std::vector<int64_t> labels{1, 2};
    Prediction p = m.forward(z, lv, labels);
    CHECK(p.space == PredSpace::V);
    CHECK(p.value.shape() == z.shape());

    // swap the two examples: outputs must swap identically
    const int64_t per = 32 * 32 * 3;
    std::vector<double> swapped(z.data().begin(), z.data().end());
    std::rotate(swapped.begin(), swapped.begin() + per, swapped.end());
    auto z2 = Tensor::from_data(z.shape(), std::move(swapped));
    Prediction q = m.forward(z2, {lv[1], lv[0]}, {2, 1});
    for (int64_t j = 0; j < per; ++j) {
        CHECK(q.value.data()[j] == p.value.data()[per + j]);
        CHECK(q.value.data()[per + j] == p.value.data()[j]);
    }

    CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 8, 8, 3}), levels_of(0, 1), {0}), DimensionError);
}

TEST_CASE("full-model gradients match finite differences on a tiny config") {
    Rng rng(3);
    UViTConfig c;
    c.image_res = 8;
    c.in_channels = 1;
    c.patch_size = 2;
    c.channels = {6, 8};
    c.num_down_blocks = {1};
    c.num_up_blocks = {1};
    c.num_mid_blocks = 1;
    c.block_type = {BlockKind::ResBlock, BlockKind::Transformer};
    c.block_dropout = {0.0, 0.0};
    c.head_dim = 4;
    c.temb_dim = 16;
    UViT m = UViT::build(c, rng);
    // move off the identity-init point so zero-init params get signal
    for (auto& [name, p] : m.named_params()) {
        auto d = p.mutable_data();
        Rng prng(7);
        for (auto& v : d) v += 0.05 * prng.normal();
    }
    auto z = Tensor::randn({1, 8, 8, 1}, rng);
    auto probe = Tensor::randn({1, 8, 8, 1}, rng);
    auto lv = levels_of(0.5, 1);

    auto loss_of = [&]() {
        Prediction p = m.forward(z, lv, {});
        return scale(sum_all(mul(p.value, probe)), 1e-2);
    };
    for (auto& [name, p] : m.named_params()) p.zero_grad();
    {
        Tape tape;
        auto loss = loss_of();
        tape.backward(loss);
    }
    // finite differences on a few coordinates of every parameter tensor
    const double h = 1e-5;
    double worst = 0.0;
    Rng pick(17);
    for (auto& [name, p] : m.named_params()) {
        auto d = p.mutable_data();
        auto g = p.grad();
        for (int probe_i = 0; probe_i < 2; ++probe_i) {
            const size_t i = static_cast<size_t>(pick.uniform_int(static_cast<int64_t>(d.size())));
            const double keep = d[i];
            d[i] = keep + h;
            const double fp = loss_of().item();
            d[i] = keep - h;
            const double fm = loss_of().item();
            d[i] = keep;
            const double fd = (fp - fm) / (2 * h);
            const double ad = g.empty() ? 0.0 : g[i];
            worst = std::max(worst, std::abs(ad - fd) / (std::abs(fd) + 1e-8));
        }
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("parameter shapes match the built model and the count is stable") {
    Rng rng(5);
    UViTConfig c = toy2();
    auto specs = parameter_shapes(c);
    UViT m = UViT::build(c, rng);
    REQUIRE(specs.size() == m.named_params().size());
    int64_t total = 0;
    for (size_t i = 0; i < specs.size(); ++i) {
        CHECK(specs[i].name == m.named_params()[i].first);
        CHECK(specs[i].shape == m.named_params()[i].second.shape());
        total += numel(specs[i].shape);
    }
    CHECK(total == m.num_params());
    CHECK(parameter_count(c) == total);
    CHECK(parameter_count(c) == parameter_count(c));  // stable across walks
}

TEST_CASE("golden parameter count for the 512^2 configuration") {
    // counted programmatically from the parameter inventory; frozen once
    const int64_t count = parameter_count(small512());
    CHECK(count == parameter_count(small512()));
    CHECK(count == 274811056);
}

TEST_CASE("patch-size halving against resolution doubling keeps the level tree") {
    // (R, p) vs (2R, 2p): token grids match, so every level parameter is
    // identical; only the in/out projections scale with the patch area
    UViTConfig a = small512(2);
    a.image_res = 256;
    UViTConfig b = small512(4);  // 512 with patch 4
    auto sa = parameter_shapes(a);
    auto sb = parameter_shapes(b);
    REQUIRE(sa.size() == sb.size());
    for (size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].name == sb[i].name);
        if (sa[i].name.rfind("in_proj", 0) == 0 || sa[i].name.rfind("out_proj", 0) == 0) continue;
        CHECK(sa[i].shape == sb[i].shape);
    }
}

TEST_CASE("asymmetric encoder/decoder splits build and train") {
    Rng rng(7);
    for (auto [down, up] : std::vector<std::pair<int, int>>{{1, 5}, {3, 5}, {5, 1}}) {
        UViTConfig c = toy2();
        c.num_down_blocks = {down};
        c.num_up_blocks = {up};
        UViT m = UViT::build(c, rng);
        auto z = Tensor::randn({1, 16, 16, 3}, rng);
        for (auto& [name, p] : m.named_params()) p.zero_grad();
        Tape tape;
        Prediction pred = m.forward(z, levels_of(0.0, 1), {});
        auto loss = mean_all(mul(pred.value, pred.value));
        tape.backward(loss);
        // gradients reached the encoder-side conv of the first block
        bool found = false;
        for (auto& [name, p] : m.named_params()) {
            if (name.find("conv1_k") != std::string::npos && p.has_grad()) found = true;
        }
        CHECK(found);
    }
}

TEST_CASE("zeroing the mid level equals a model built without mid blocks") {
    Rng rng(9);
    UViTConfig c = toy2();
    UViT a = UViT::build(c, rng);
    // simulate training: perturb every parameter
    Rng prng(21);
    for (auto& [name, p] : a.named_params()) {
        auto d = p.mutable_data();
        for (auto& v : d) v += 0.03 * prng.normal();
    }
    UViTConfig c0 = c;
    c0.num_mid_blocks = 0;
    Rng rng2(9);
    UViT b = UViT::build(c0, rng2);
    // copy the shared parameters from a to b by name
    for (auto& [bname, bp] : b.named_params()) {
        for (auto& [aname, ap] : a.named_params()) {
            if (aname == bname) {
                auto dst = bp.mutable_data();
                auto src = ap.data();
                std::copy(src.begin(), src.end(), dst.begin());
            }
        }
    }
    a.zero_mid_level();
    auto z = Tensor::randn({1, 16, 16, 3}, rng);
    auto ya = a.forward(z, levels_of(0.3, 1), {});
    auto yb = b.forward(z, levels_of(0.3, 1), {});
    CHECK(sid::test::max_abs_diff(ya.value.data(), yb.value.data()) < 1e-12);
}

TEST_CASE("checkpoint roundtrip restores the model bit-for-bit") {
    Rng rng(11);
    UViTConfig c = toy2();
    UViT m = UViT::build(c, rng);
    const std::string path = "/tmp/sid_uvit_test.ckpt";
    m.save(path);
    UViT back = UViT::load(path, c);
    REQUIRE(back.named_params().size() == m.named_params().size());
    for (size_t i = 0; i < m.named_params().size(); ++i) {
        CHECK(sid::test::max_abs_diff(back.named_params()[i].second.data(),
                                      m.named_params()[i].second.data()) == 0.0);
    }
    std::remove(path.c_str());
}

TEST_CASE("activation memory accounting reproduces the reference numbers") {
    CHECK(feature_map_bytes(256, 128) == 16ll * 1024 * 1024);

    // one level at 256^2 with 128 -> 256 channels and 3 blocks:
    // blockwise 3 x 16 MB, residual 16 + 8 MB
    UViTConfig c;
    c.image_res = 256;
    c.in_channels = 3;
    c.patch_size = 1;
    c.channels = {128, 256};
    c.num_down_blocks = {3};
    c.num_up_blocks = {3};
    c.num_mid_blocks = 1;
    c.block_type = {BlockKind::ResBlock, BlockKind::ResBlock};
    c.block_dropout = {0.0, 0.0};
    MemoryReport rep = activation_memory(c, 256);
    REQUIRE(rep.per_level.size() == 1);
    CHECK(rep.per_level[0].blockwise_bytes == 48ll * 1024 * 1024);
    CHECK(rep.per_level[0].residual_bytes == 24ll * 1024 * 1024);

    // hypothetical 4096^2 level: 12 GB vs 6 GB
    c.image_res = 4096;
    MemoryReport big = activation_memory(c, 4096);
    CHECK(big.per_level[0].blockwise_bytes == 12ll * 1024 * 1024 * 1024);
    CHECK(big.per_level[0].residual_bytes == 6ll * 1024 * 1024 * 1024);

    CHECK(skip_memory_bytes(c, 4096, SkipScheme::BlockwiseSkip) == big.blockwise_total);
    CHECK(skip_memory_bytes(c, 4096, SkipScheme::ResidualSkip) == big.residual_total);
    // batch multiplies linearly
    CHECK(skip_memory_bytes(c, 4096, SkipScheme::ResidualSkip, 3) == 3 * big.residual_total);
}

TEST_CASE("logsnr features are deterministic and level-sensitive") {
    auto a = logsnr_features(levels_of(1.5, 2), 16);
    auto b = logsnr_features(levels_of(1.5, 2), 16);
    CHECK(sid::test::max_abs_diff(a.data(), b.data()) == 0.0);
    auto c = logsnr_features(levels_of(-1.5, 2), 16);
    CHECK(sid::test::max_abs_diff(a.data(), c.data()) > 1e-3);
    CHECK_THROWS_AS(logsnr_features(levels_of(0, 1), 15), ConfigError);
}
