#include <doctest.h>

#include "cavm/autodiff.hpp"
#include "cavm/codec.hpp"
#include "cavm/errors.hpp"
#include "cavm/ops.hpp"
#include "support.hpp"

using namespace cavm;
using namespace cavm::codec;
using cavm::testing::random_tensor;
using cavm::testing::randomize;
using T = Tensor<double>;

TEST_CASE("default geometry yields 8x8 fine and 4x4 coarse grids") {
    const CodecGeometry g;
    CHECK(g.fine_tokens() == 64);
    CHECK(g.coarse_tokens() == 16);
    CHECK(dose_variant_config(g).total_stride() == 16);
    CHECK(four_stage_config(g, 4).total_stride() == 16);
    CodecGeometry bad = g;
    bad.image_size = 40;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("token maps round-trip and order tokens row-major") {
    Rng rng(1);
    const T map = random_tensor({3, 2, 4}, rng);
    const T tokens = tokens_from_map(map);
    REQUIRE(tokens.shape() == Shape{8, 3});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 8; ++p) CHECK(tokens[p * 3 + c] == map[c * 8 + p]);
    CHECK(cavm::testing::bit_equal(map_from_tokens(tokens, 2, 4), map));
    CHECK_THROWS_AS(map_from_tokens(tokens, 3, 3), ShapeError);
}

TEST_CASE("encoders and decoder produce the documented shapes") {
    Rng rng(2);
    const CodecGeometry g;
    nn::ParameterStore<float> store;
    const auto f_dv = Encoder<float>::create(store, "dv", dose_variant_config(g), rng);
    const auto f_di = Encoder<float>::create(store, "di", four_stage_config(g, 4), rng);
    const auto f_ce = Encoder<float>::create(store, "ce", four_stage_config(g, 1), rng);
    const auto f_d = Decoder<float>::create(store, "dec", g, rng);
    const auto x = random_tensor<float>({4, 64, 64}, rng, 0, 1);
    const auto y = random_tensor<float>({1, 64, 64}, rng, 0, 1);
    for (const auto& t : {encode_dose_variant(x, f_dv), encode_dose_invariant(x, f_di), encode_contrast(y, f_ce)}) {
        CHECK(t.fine.shape() == Shape{64, 32});
        CHECK(t.coarse.shape() == Shape{16, 64});
    }
    CHECK(decode(f_di(x), f_ce(y), f_d).shape() == Shape{1, 64, 64});
    CHECK_THROWS_AS(f_dv(y), ShapeError);
    CHECK_THROWS_AS(f_di(random_tensor<float>({4, 40, 40}, rng)), ShapeError);
    CHECK_THROWS_AS(decode(f_di(x), TokenPair<float>{f_ce(y).coarse, f_ce(y).fine}, f_d), ShapeError);
}

TEST_CASE("encoders and decoder pass finite-difference checks") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(10 + seed);
        const CodecGeometry g = cavm::testing::tiny_geometry();
        nn::ParameterStore<double> store;
        const auto f_dv = Encoder<double>::create(store, "dv", dose_variant_config(g), rng);
        const auto f_ce = Encoder<double>::create(store, "ce", four_stage_config(g, 1), rng);
        const auto f_d = Decoder<double>::create(store, "dec", g, rng);
        const auto bridge = TokenBridge<double>::create(store, "bridge", g, rng);
        randomize(store, rng, 0.6);
        const T x = random_tensor({4, 16, 16}, rng, 0, 1, true);
        const T y = random_tensor({1, 16, 16}, rng, 0, 1, true);
        auto reduce = [](const TokenPair<double>& p) { return ops::sum(ops::mul(p.fine, p.fine)) + ops::sum(p.coarse); };

        CHECK(grad_check([&](auto& v) {
                  Encoder<double> e = f_dv;
                  e.down[0].weight = v[1];
                  e.refine[1].weight = v[2];
                  return reduce(e(v[0]));
              },
                         {x, f_dv.down[0].weight, f_dv.refine[1].weight}) < 1e-6);
        CHECK(grad_check([&](auto& v) {
                  Encoder<double> e = f_ce;
                  e.down[2].weight = v[1];
                  return reduce(e(v[0]));
              },
                         {y, f_ce.down[2].weight}) < 1e-6);
        const auto di = f_ce(y.detach());
        const T fine = random_tensor({4, 8}, rng, -1, 1, true), coarse = random_tensor({1, 8}, rng, -1, 1, true);
        CHECK(grad_check([&](auto& v) {
                  Decoder<double> d = f_d;
                  d.up[3].weight = v[2];
                  d.fuse_fine.weight = v[3];
                  const T img = d(di, bridge(TokenPair<double>{v[0], v[1]}));
                  return ops::sum(ops::mul(img, img));
              },
                         {fine, coarse, f_d.up[3].weight, f_d.fuse_fine.weight}) < 1e-6);
    }
}

TEST_CASE("token sequences stack blocks and validate placeholders") {
    Rng rng(3);
    TokenSequence<double> seq;
    seq.scale = Scale::fine;
    seq.blocks = {random_tensor({4, 8}, rng), Tensor<double>::full({4, 8}, 0.0)};
    seq.roles = {BlockRole::input_x, BlockRole::placeholder};
    CHECK_NOTHROW(seq.validate(0.0));
    CHECK(seq.length() == 8);
    const T m = seq.matrix();
    CHECK(m.shape() == Shape{8, 8});
    const auto back = TokenSequence<double>::from_matrix(Scale::fine, m, 4, seq.roles);
    CHECK(cavm::testing::bit_equal(back.blocks[0], seq.blocks[0]));
    CHECK_THROWS_AS(seq.validate(1.0), ShapeError);
    CHECK_THROWS_AS(seq.validate(0.0, 6), ShapeError);
    seq.roles.pop_back();
    CHECK_THROWS_AS(seq.validate(0.0), ShapeError);
}

TEST_CASE("bridge is a per-scale affine map") {
    Rng rng(4);
    const CodecGeometry g = cavm::testing::tiny_geometry();
    nn::ParameterStore<double> store;
    const auto bridge = TokenBridge<double>::create(store, "b", g, rng);
    CHECK(store.parameter_count() == 2 * (8 * 8 + 8));
}
