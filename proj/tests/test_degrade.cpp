#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "indigo/degrade.hpp"
#include "indigo/winn.hpp"

using namespace indigo;

namespace {

template <typename S>
Tensor<S> eval_h(const DegradationOp& op, const Tensor<S>& x) {
  Tape<S> tp;
  return tp.value(degradation_graph(tp, op, tp.constant(x)));
}

}  // namespace

TEST_CASE("box downsample oracle") {
  // 4x4 image with known 2x2 block means
  auto x = Tensor<float>::from({1, 4, 4}, {1, 1, 2, 2,   //
                                           1, 1, 2, 2,   //
                                           3, 3, 8, 0,   //
                                           3, 3, 0, 8});
  DegradationOp op;
  op.kind = DegradationKind::kBox;
  op.factor = 2;
  auto y = eval_h(op, x);
  CHECK(bitwise_equal(y, Tensor<float>::from({1, 2, 2}, {1, 2, 3, 4})));

  op.factor = 4;
  CHECK(eval_h(op, x).value() == doctest::Approx(2.5));
}

TEST_CASE("parity downsample equals the lazy coarse branch") {
  Rng rng(60);
  auto x = rng.uniform_tensor<float>({2, 8, 8}, 0.0, 1.0);
  DegradationOp op;
  op.kind = DegradationKind::kParity;
  for (std::size_t k : {2u, 4u, 8u}) {
    op.factor = k;
    Tensor<float> want = x;
    for (std::size_t f = k; f > 1; f /= 2) want = polyphase_component(want, 0, 0);
    CHECK(bitwise_equal(eval_h(op, x), want));
  }
}

TEST_CASE("every downsample maps a constant image to a constant") {
  auto x = Tensor<double>::full({1, 16, 16}, 0.37);
  for (DegradationKind k : {DegradationKind::kParity, DegradationKind::kBox,
                            DegradationKind::kGaussianBlur, DegradationKind::kBlockQuantize}) {
    DegradationOp op;
    op.kind = k;
    op.factor = 2;
    op.qstep = 0.05;
    auto y = eval_h(op, x);
    REQUIRE(y.shape() == Shape{1, 8, 8});
    INFO(degradation_name(k));
    CHECK(y.array().maxCoeff() - y.array().minCoeff() < 1e-12);
    if (k == DegradationKind::kBlockQuantize) {
      // the floor-based quantizer moves the DC coefficient by up to one step,
      // i.e. the constant shifts by at most qstep / block
      CHECK(std::abs(y.flat(0) - 0.37) <= op.qstep / static_cast<double>(op.block));
    } else {
      CHECK(max_abs(sub(y, Tensor<double>::full({1, 8, 8}, 0.37))) < 1e-12);
    }
  }
}

TEST_CASE("gaussian blur weights sum to one and shapes follow k") {
  Rng rng(61);
  auto x = rng.uniform_tensor<double>({1, 16, 16}, 0.0, 1.0);
  DegradationOp op;
  op.kind = DegradationKind::kGaussianBlur;
  op.radius = 2;
  for (std::size_t k : {2u, 4u, 8u}) {
    op.factor = k;
    auto y = eval_h(op, x);
    CHECK(y.shape() == Shape{1, 16 / k, 16 / k});
    // replicate padding + unit-sum kernel keep values inside the input hull
    CHECK(y.array().minCoeff() >= x.array().minCoeff() - 1e-12);
    CHECK(y.array().maxCoeff() <= x.array().maxCoeff() + 1e-12);
  }
}

TEST_CASE("block cosine transform round-trips exactly with qstep 0") {
  Rng rng(62);
  auto x = rng.uniform_tensor<double>({1, 8, 8}, 0.0, 1.0);
  DegradationOp bq;
  bq.kind = DegradationKind::kBlockQuantize;
  bq.factor = 2;
  bq.block = 4;
  bq.qstep = 0.0;
  DegradationOp box;
  box.kind = DegradationKind::kBox;
  box.factor = 2;
  CHECK(max_abs_diff(eval_h(bq, x), eval_h(box, x)) < 1e-12);
}

TEST_CASE("block quantizer is non-invertible: distinct inputs collide") {
  // perturb one pixel so every cosine coefficient moves by less than half a
  // deadzone bin: the two images then quantize identically
  Rng rng(63);
  auto x = rng.uniform_tensor<float>({1, 8, 8}, 0.3, 0.7);
  DegradationOp op;
  op.kind = DegradationKind::kBlockQuantize;
  op.factor = 2;
  op.block = 4;
  op.qstep = 0.5;
  op.noise_sigma = 0.0;

  auto x2 = x;
  x2.flat(5) += 0.01f;
  REQUIRE_FALSE(bitwise_equal(x, x2));
  auto y1 = eval_h(op, x);
  auto y2 = eval_h(op, x2);
  CHECK(bitwise_equal(y1, y2));

  // ...and a shift past a bin boundary does change the output
  auto x3 = x;
  x3.flat(5) += 2.5f;
  CHECK_FALSE(bitwise_equal(eval_h(op, x), eval_h(op, x3)));
}

TEST_CASE("degradation rejects indivisible shapes") {
  DegradationOp op;
  op.kind = DegradationKind::kBox;
  op.factor = 4;
  Tape<float> tp;
  CHECK_THROWS_AS(degradation_graph(tp, op, tp.constant(Tensor<float>::zeros({1, 6, 8}))),
                  ShapeError);
  op.kind = DegradationKind::kBlockQuantize;
  op.factor = 2;
  op.block = 4;
  CHECK_THROWS_AS(degradation_graph(tp, op, tp.constant(Tensor<float>::zeros({1, 6, 6}))),
                  ShapeError);
  DegradationOp bad;
  bad.factor = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("measurement noise has the requested variance") {
  DegradationOp op;
  op.kind = DegradationKind::kParity;
  op.factor = 2;
  op.noise_sigma = 0.05;
  auto x = Tensor<float>::zeros({1, 16, 16});
  Rng rng(64);
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  for (int rep = 0; rep < 1600; ++rep) {  // 1600 * 64 > 1e5 samples
    auto y = apply_degradation(op, x, rng);
    for (std::size_t i = 0; i < y.numel(); ++i) {
      sum += y.flat(i);
      sumsq += static_cast<double>(y.flat(i)) * y.flat(i);
      ++n;
    }
  }
  const double var = sumsq / n - (sum / n) * (sum / n);
  CHECK(var == doctest::Approx(0.0025).epsilon(0.05));
}

TEST_CASE("images are deterministic, in range, and non-degenerate") {
  DatasetSpec spec;
  spec.count = 1000;
  spec.seed = 7;
  auto a = generate_image(spec, 123);
  auto b = generate_image(spec, 123);
  CHECK(bitwise_equal(a, b));
  CHECK_FALSE(bitwise_equal(a, generate_image(spec, 124)));
  CHECK_THROWS_AS(generate_image(spec, 1000), ConfigError);

  // 10-bin intensity histogram over the full set covers at least half of [0,1]
  std::set<int> bins;
  for (std::size_t i = 0; i < spec.count; ++i) {
    auto img = generate_image(spec, i);
    CHECK(img.array().minCoeff() >= 0.0f);
    CHECK(img.array().maxCoeff() <= 1.0f);
    for (std::size_t p = 0; p < img.numel(); ++p)
      bins.insert(std::min(9, static_cast<int>(img.flat(p) * 10.0f)));
  }
  CHECK(bins.size() >= 5);
}

TEST_CASE("make_pairs is reproducible and honours the operator") {
  DatasetSpec spec;
  spec.count = 8;
  spec.seed = 11;
  DegradationOp op;
  op.kind = DegradationKind::kParity;
  op.factor = 2;
  op.noise_sigma = 0.0;

  Rng r1(65), r2(65);
  auto p1 = make_pairs(spec, op, r1);
  auto p2 = make_pairs(spec, op, r2);
  REQUIRE(p1.size() == 8);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(bitwise_equal(p1[i].first, p2[i].first));
    CHECK(bitwise_equal(p1[i].second, p2[i].second));
    CHECK(bitwise_equal(p1[i].second, polyphase_component(p1[i].first, 0, 0)));
  }

  // independent noise per pair
  op.noise_sigma = 0.05;
  auto p3 = make_pairs(spec, op, r1);
  CHECK_FALSE(bitwise_equal(sub(p3[0].second, polyphase_component(p3[0].first, 0, 0)),
                            sub(p3[1].second, polyphase_component(p3[1].first, 0, 0))));
}

TEST_CASE("psnr oracle") {
  auto x = Tensor<float>::full({1, 4, 4}, 0.5f);
  CHECK(psnr(x, x) == 99.0);

  auto y = x;
  for (std::size_t i = 0; i < y.numel(); ++i) y.flat(i) += 0.1f;  // MSE = 0.01
  CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-4));

  // scale invariance when peak scales along
  auto xs = scale(x, 0.5f), ys = scale(y, 0.5f);
  CHECK(psnr(xs, ys, 0.5) == doctest::Approx(psnr(x, y)).epsilon(1e-6));

  CHECK_THROWS_AS(psnr(x, Tensor<float>::zeros({1, 2, 2})), ShapeError);
  CHECK_THROWS_AS(psnr(x, x, 0.0), ConfigError);
}

TEST_CASE("nearest upsample inverts parity downsampling on blocky images") {
  // blocky image = constant on 2x2 blocks: NN(parity(x)) == x
  Rng rng(66);
  auto coarse = rng.uniform_tensor<float>({1, 4, 4}, 0.0, 1.0);
  auto x = upsample_nearest2x(coarse);
  DegradationOp op;
  op.kind = DegradationKind::kParity;
  op.factor = 2;
  CHECK(bitwise_equal(nearest_upsample(eval_h(op, x), 2), x));
  CHECK(nearest_upsample(coarse, 4).shape() == Shape{1, 16, 16});
}

TEST_CASE("H is differentiable where it needs to be") {
  // the baseline solver differentiates |y - H(x)|^2 wrt x; check the linear
  // kinds against finite differences and the quantizer's a.e.-zero gradient
  Rng rng(67);
  auto y = rng.uniform_tensor<double>({1, 4, 4}, 0.0, 1.0);
  for (DegradationKind k : {DegradationKind::kParity, DegradationKind::kBox,
                            DegradationKind::kGaussianBlur, DegradationKind::kBlockQuantize}) {
    DegradationOp op;
    op.kind = k;
    op.factor = 2;
    Program<double> p = [&](Tape<double>& tp, const std::vector<ValueId>& in) {
      return sum_squares(tp, sub(tp, tp.constant(y), degradation_graph(tp, op, in[0])));
    };
    auto x = rng.uniform_tensor<double>({1, 8, 8}, 0.31, 0.52);
    auto ev = evaluate(p, {x});
    auto g = gradient(ev.tape, ev.output);
    auto fd = finite_difference_gradient(p, {x}, 0, 1e-6);
    INFO(degradation_name(k));
    if (k == DegradationKind::kBlockQuantize) {
      // piecewise-constant quantizer: zero gradient almost everywhere
      CHECK(max_abs(g.at(ev.inputs[0])) == 0.0);
    } else {
      CHECK(max_rel_error(g.at(ev.inputs[0]), fd) < 1e-6);
    }
  }
}

TEST_CASE("winn trained on box pairs beats the zero-parameter baseline") {
  DatasetSpec spec;
  spec.count = 48;
  spec.seed = 21;
  DegradationOp op;
  op.kind = DegradationKind::kBox;
  op.factor = 2;
  Rng prng(68);
  auto pairs = make_pairs(spec, op, prng);

  WinnConfig wc;
  wc.levels = 1;
  Rng mrng(69);
  auto m = create_winn<float>(wc, mrng);

  auto mse = [&](const WinnModel<float>& model) {
    double acc = 0.0;
    for (const auto& [x, y] : pairs) {
      auto pyr = winn_forward(model, x);
      auto d = sub(pyr.coarse, y);
      acc += sum_squares(d).value() / static_cast<double>(y.numel());
    }
    return acc / static_cast<double>(pairs.size());
  };
  const double baseline = mse(m);  // zero-parameter model: coarse = lazy EE

  TrainConfig tc;
  tc.epochs = 50;
  tc.opt.kind = OptimizerConfig::Kind::kAdam;
  tc.opt.lr = 2e-3;
  Rng trng(70);
  train_winn(pairs, m, tc, trng);
  const double trained = mse(m);
  INFO("baseline " << baseline << " trained " << trained);
  CHECK(trained < 0.25 * baseline);
}
