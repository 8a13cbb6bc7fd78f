#include <cmath>

#include "arvit/blocks/attention_blocks.hpp"
#include "arvit/core/errors.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace arvit;
using arvit::testing::check_module;
using arvit::testing::random_tensor;

namespace {

Tensor run_block(ParameterStore& store, const ResidualBlock& block, const Tensor& x,
                 Mode mode = Mode::kTrain) {
  Tape tape;
  ForwardContext ctx(tape, store, mode);
  return block.forward(ctx, tape.constant(x)).value();
}

Tensor half_plane_mask(std::size_t h, std::size_t w) {
  Tensor m({1, h, w}, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w / 2; ++j) m.at({0, i, j}) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("match_mask") {
  Rng rng(1);
  SUBCASE("identity resize") {
    Tensor m = random_tensor({1, 5, 7}, rng, 0, 1);
    CHECK(bitwise_equal(match_mask(RoiMask::from_plane(m), 5, 7, 3), m));
  }
  SUBCASE("constant field") {
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{3, 3}, {7, 5}, {1, 1}, {12, 9}}) {
      Tensor m = match_mask(RoiMask::ones(10, 10), h, w, 4);
      CHECK(m.shape() == Shape{1, h, w});
      for (Real v : m.data()) CHECK(v == 1.0);
    }
  }
  SUBCASE("area average fixture") {
    Tensor src({1, 4, 4}, 0.0);
    src.at({0, 0, 0}) = src.at({0, 0, 1}) = src.at({0, 1, 0}) = src.at({0, 1, 1}) = 1.0;
    Tensor m = match_mask(RoiMask::from_plane(src), 2, 2, 1);
    CHECK(m.vec() == std::vector<Real>{1, 0, 0, 0});
  }
  SUBCASE("range preserved for non-integer ratios") {
    for (int t = 0; t < 20; ++t) {
      Tensor src = random_tensor({1, 9, 11}, rng, 0, 1);
      Tensor m = match_mask(RoiMask::from_plane(src), 4, 3, 2);
      for (Real v : m.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
  SUBCASE("invalid values rejected") {
    CHECK_THROWS_AS(RoiMask::from_plane(Tensor::full({2, 2}, 1.5)), InputError);
  }
}

TEST_CASE("basic residual block") {
  Rng rng(2);
  SUBCASE("zero residual branch gives relu(x)") {
    ParameterStore store;
    auto block = ResidualBlock::build(store, rng, "b", {3, 3, 1, false});
    CHECK_FALSE(block.has_projection());
    for (std::size_t i = 0; i < store.size(); ++i) {
      for (Real& v : store.value(i).data()) v = 0.0;
    }
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor y = run_block(store, block, x);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == std::max(0.0, x[i]));
  }
  SUBCASE("stride-2 block halves spatial size") {
    ParameterStore store;
    auto block = ResidualBlock::build(store, rng, "b", {2, 4, 2, true});
    CHECK(block.has_projection());
    CHECK(run_block(store, block, random_tensor({1, 2, 8, 8}, rng)).shape() == Shape{1, 4, 4, 4});
    CHECK(run_block(store, block, random_tensor({1, 2, 7, 7}, rng)).shape() == Shape{1, 4, 4, 4});
  }
  SUBCASE("kernels are 3x3") {
    ParameterStore store;
    auto block = ResidualBlock::build(store, rng, "b", {2, 4, 1, true});
    CHECK(store.value(block.conv1().weight).shape() == Shape{4, 2, 3, 3});
    CHECK(store.value(block.conv2().weight).shape() == Shape{4, 4, 3, 3});
    CHECK(store.value(block.projection()->weight).shape() == Shape{4, 2, 1, 1});
  }
  SUBCASE("composition oracle") {
    ParameterStore store;
    auto block = ResidualBlock::build(store, rng, "b", {2, 3, 2, true});
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (store.entry(i).trainable) store.value(i) = random_tensor(store.value(i).shape(), rng);
    }
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    Tensor got = run_block(store, block, x);

    Tape tape;
    auto p = [&](const char* name) { return tape.constant(store.value(*store.find(name))); };
    Var xv = tape.constant(x);
    Var h = conv2d(xv, p("b.conv1.weight"), p("b.conv1.bias"), 2, 1);
    h = relu(batch_norm_train(h, p("b.bn1.gamma"), p("b.bn1.beta"), 1e-5, nullptr));
    h = conv2d(h, p("b.conv2.weight"), p("b.conv2.bias"), 1, 1);
    h = batch_norm_train(h, p("b.bn2.gamma"), p("b.bn2.beta"), 1e-5, nullptr);
    Var s = conv2d(xv, p("b.proj.weight"), p("b.proj.bias"), 2, 0);
    s = batch_norm_train(s, p("b.proj_bn.gamma"), p("b.proj_bn.beta"), 1e-5, nullptr);
    Tensor expected = relu(add(h, s)).value();
    CHECK(arvit::testing::rel_diff(got, expected) < 1e-12);
  }
  SUBCASE("channel mismatch") {
    ParameterStore store;
    auto block = ResidualBlock::build(store, rng, "b", {2, 2, 1, true});
    CHECK_THROWS_AS(run_block(store, block, random_tensor({1, 3, 4, 4}, rng)), DimensionError);
  }
}

TEST_CASE("ROI-mask attention block") {
  Rng rng(3);
  ParameterStore store;
  auto block = ResidualBlock::build(store, rng, "ra", {2, 2, 1, true});
  Tensor x = random_tensor({2, 2, 6, 6}, rng);

  auto run_ra = [&](const std::vector<RoiMask>& masks) {
    Tape tape;
    ForwardContext ctx(tape, store, Mode::kEval);
    return ra_block(ctx, tape.constant(x), masks, block).value();
  };
  const Tensor plain = run_block(store, block, x, Mode::kEval);

  SUBCASE("ones mask is bitwise the plain block") {
    std::vector<RoiMask> ones(2, RoiMask::ones(12, 12));
    CHECK(bitwise_equal(run_ra(ones), plain));
  }
  SUBCASE("zero mask annihilates") {
    std::vector<RoiMask> zeros(2, RoiMask::from_plane(Tensor::zeros({12, 12})));
    for (Real v : run_ra(zeros).data()) CHECK(v == 0.0);
  }
  SUBCASE("half-plane mask") {
    std::vector<RoiMask> half(2, RoiMask::from_plane(half_plane_mask(12, 12)));
    Tensor y = run_ra(half);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 6; ++i)
          for (std::size_t j = 0; j < 6; ++j) {
            if (j < 3) {
              CHECK(y.at({n, c, i, j}) == plain.at({n, c, i, j}));
            } else {
              CHECK(y.at({n, c, i, j}) == 0.0);
            }
          }
  }
  SUBCASE("mask count must match batch") {
    std::vector<RoiMask> one(1, RoiMask::ones(6, 6));
    CHECK_THROWS_AS(run_ra(one), InputError);
  }
}

TEST_CASE("channel attention") {
  Rng rng(4);
  SUBCASE("weights in (0,1) and gated = weight * x per channel") {
    ParameterStore store;
    auto ca = ChannelAttention::build(store, rng, "ca", {8, 4, PoolCombine::kSum});
    Tape tape;
    ForwardContext ctx(tape, store, Mode::kEval);
    Tensor x = random_tensor({3, 8, 4, 5}, rng, -10, 10);
    auto out = ca.forward(ctx, tape.constant(x));
    const Tensor& w = out.weights.value();
    const Tensor& g = out.gated.value();
    CHECK(w.shape() == Shape{3, 8});
    for (Real v : w.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t i = 0; i < 20; ++i) {
          const std::size_t at = (n * 8 + c) * 20 + i;
          CHECK(std::abs(g[at] - w.at({n, c}) * x[at]) <= 1e-12);
        }
  }
  SUBCASE("identical planes with a channel-symmetric MLP give equal weights") {
    ParameterStore store;
    auto ca = ChannelAttention::build(store, rng, "ca", {4, 2, PoolCombine::kSum});
    // fc2 columns made identical so the MLP treats channels symmetrically.
    Tensor& w2 = store.value(ca.fc2().weight);
    for (std::size_t r = 0; r < w2.dim(0); ++r)
      for (std::size_t c = 1; c < w2.dim(1); ++c) w2.at({r, c}) = w2.at({r, 0});
    Tensor plane = random_tensor({3, 3}, rng);
    Tensor x({1, 4, 3, 3});
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < 9; ++i) x[c * 9 + i] = plane[i];
    Tape tape;
    ForwardContext ctx(tape, store, Mode::kEval);
    const Tensor w = ca.forward(ctx, tape.constant(x)).weights.value();
    for (std::size_t c = 1; c < 4; ++c) CHECK(w[c] == w[0]);
  }
  SUBCASE("hand evaluation, C=2") {
    ParameterStore store;
    auto ca = ChannelAttention::build(store, rng, "ca", {2, 2, PoolCombine::kSum});
    store.value(ca.fc1().weight) = Tensor::from({2, 1}, {0.1, -0.2});
    store.value(ca.fc1().bias) = Tensor::from({1}, {0.05});
    store.value(ca.fc2().weight) = Tensor::from({1, 2}, {0.4, -0.8});
    store.value(ca.fc2().bias) = Tensor::from({2}, {0.1, 0.2});
    Tensor x = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, -1, 0, 2, 0.5});
    // avg = (2.5, 0.375), max = (4, 2) -> v = (6.5, 2.375)
    const double hidden = std::max(0.0, 6.5 * 0.1 + 2.375 * -0.2 + 0.05);
    const double w0 = 1.0 / (1.0 + std::exp(-(hidden * 0.4 + 0.1)));
    const double w1 = 1.0 / (1.0 + std::exp(-(hidden * -0.8 + 0.2)));
    Tape tape;
    ForwardContext ctx(tape, store, Mode::kEval);
    auto out = ca.forward(ctx, tape.constant(x));
    const Tensor& g = out.gated.value();
    const std::vector<double> expected{1 * w0, 2 * w0, 3 * w0, 4 * w0, -1 * w1, 0, 2 * w1, 0.5 * w1};
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(g[i] - expected[i]) < 1e-14);
  }
  SUBCASE("configuration validation") {
    ParameterStore store;
    CHECK_THROWS_AS(ChannelAttention::build(store, rng, "ca", {6, 4, PoolCombine::kSum}), ConfigError);
    CHECK_THROWS_AS(ChannelAttention::build(store, rng, "ca", {6, 0, PoolCombine::kSum}), ConfigError);
    auto ca = ChannelAttention::build(store, rng, "cat", {6, 3, PoolCombine::kConcat});
    CHECK(store.value(ca.fc1().weight).shape() == Shape{12, 2});
    Tape tape;
    ForwardContext ctx(tape, store, Mode::kEval);
    CHECK_THROWS_AS(ca.forward(ctx, tape.constant(Tensor::zeros({1, 4, 2, 2}))), DimensionError);
  }
}

TEST_CASE("block gradients match finite differences") {
  Rng rng(5);
  for (bool norm : {false, true}) {
    INFO("norm " << norm);
    {
      ParameterStore store;
      auto block = ResidualBlock::build(store, rng, "b", {2, 3, 2, norm});
      auto r = check_module(store, random_tensor({2, 2, 4, 4}, rng),
                            [&](ForwardContext& ctx, Var x) { return block.forward(ctx, x); });
      CHECK(r.max_rel_error < 1e-4);
    }
    {
      ParameterStore store;
      auto block = ResidualBlock::build(store, rng, "ra", {2, 2, 1, norm});
      Tensor m = random_tensor({1, 8, 8}, rng, 0, 1);
      std::vector<RoiMask> masks{RoiMask::from_plane(m), RoiMask::from_plane(half_plane_mask(8, 8))};
      auto r = check_module(store, random_tensor({2, 2, 4, 4}, rng),
                            [&](ForwardContext& ctx, Var x) { return ra_block(ctx, x, masks, block); });
      CHECK(r.max_rel_error < 1e-4);
    }
  }
  for (PoolCombine combine : {PoolCombine::kSum, PoolCombine::kConcat}) {
    ParameterStore store;
    auto ca = ChannelAttention::build(store, rng, "ca", {4, 2, combine});
    auto r = check_module(store, random_tensor({2, 4, 3, 3}, rng),
                          [&](ForwardContext& ctx, Var x) { return ca.forward(ctx, x).gated; });
    CHECK(r.max_rel_error < 1e-4);
  }
}
