#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "indigo/autodiff.hpp"
#include "indigo/rng.hpp"

using namespace indigo;

namespace {

template <typename S>
struct Tols;
template <>
struct Tols<float> {
  static constexpr double step = 1e-3, tol = 1e-3;
};
template <>
struct Tols<double> {
  static constexpr double step = 1e-6, tol = 1e-6;
};

// Analytic vs central-difference gradient for every input of a scalar program.
template <typename S>
void check_grad(const Program<S>& p, const std::vector<Tensor<S>>& inputs) {
  auto ev = evaluate(p, inputs);
  auto gm = gradient(ev.tape, ev.output);
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    auto fd = finite_difference_gradient(p, inputs, a, Tols<S>::step);
    const double re = max_rel_error(gm.at(ev.inputs[a]), fd);
    INFO("arg " << a << " max rel err " << re);
    CHECK(re < Tols<S>::tol);
  }
}

// Uniform values in +-(lo, hi): bounded away from zero so ReLU-style kinks
// and quantizer cell edges stay clear of the FD step. Conv instances use a
// smaller range: FD noise grows with the loss magnitude (cubic in the value
// scale) while gradients grow only quadratically.
template <typename S>
Tensor<S> signed_margin_tensor(Rng& rng, const Shape& shape, double lo = 0.1, double hi = 1.1) {
  Tensor<S> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double u = lo + (hi - lo) * rng.uniform();
    t.flat(i) = static_cast<S>(rng.uniform() < 0.5 ? -u : u);
  }
  return t;
}

// Linear probe loss sum(y * c): keeps |loss| comparable to the gradient scale,
// so float32 FD stays well inside tolerance, while still driving a dense
// adjoint through the op under test.
template <typename S>
ValueId probe_loss(Tape<S>& t, ValueId y, const Tensor<S>& probe) {
  return reduce_sum(t, mul(t, y, t.constant(probe)));
}

}  // namespace

TEST_CASE("tensor shape contract") {
  auto t = Tensor<float>::from({2, 2}, {1.f, 2.f, 3.f, 4.f});
  CHECK(t.numel() == 4);
  CHECK(t(1, 0) == 3.f);
  CHECK(Tensor<double>::scalar(2.5).rank() == 0);
  CHECK(Tensor<double>::scalar(2.5).numel() == 1);
  CHECK_THROWS_AS(t.value(), ShapeError);
  CHECK_THROWS_AS((Tensor<float>::from({3}, {1.f})), ShapeError);

  // mismatch diagnostics carry both shapes
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({3, 2});
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("(2,3)") != std::string::npos);
    CHECK(std::string(e.what()).find("(3,2)") != std::string::npos);
  }
}

TEST_CASE("rng determinism and distribution") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

  Rng c(7);
  const double g0 = c.gaussian();
  (void)c.gaussian();
  Rng d(7);
  CHECK(d.gaussian() == g0);  // pair order is fixed

  Rng u(3);
  for (int i = 0; i < 10000; ++i) {
    const double v = u.uniform();
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }

  // moments over 1e5 draws: mean within 4 standard errors, variance close
  Rng g(12345);
  const int n = 100000;
  double s1 = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = g.gaussian();
    s1 += v;
    s2 += v * v;
  }
  const double mean = s1 / n, var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / n));

  // distinct streams differ immediately
  Rng s0 = Rng::stream(9, 0), sx = Rng::stream(9, 1);
  CHECK(s0.next_u64() != sx.next_u64());
}

TEST_CASE("conv2d forward oracle") {
  auto x = Tensor<double>::from({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  auto w = Tensor<double>::from({1, 1, 2, 2}, {1, 0, -1, 2});
  auto y = conv2d(x, w, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2});
  CHECK(y(0, 0, 0) == doctest::Approx(7.0));
  CHECK(y(0, 0, 1) == doctest::Approx(9.0));

  // stride 2 on a 4x4 ramp with an all-ones 2x2 kernel = non-overlapping sums
  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = i + 1;
  auto x2 = Tensor<double>::from({1, 4, 4}, ramp);
  auto w2 = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  auto y2 = conv2d(x2, w2, 2, 0);
  REQUIRE(y2.shape() == Shape{1, 2, 2});
  CHECK(y2(0, 0, 0) == 14.0);
  CHECK(y2(0, 0, 1) == 22.0);
  CHECK(y2(0, 1, 0) == 46.0);
  CHECK(y2(0, 1, 1) == 54.0);

  // zero padding contributes nothing at the corners
  auto yp = conv2d(x, w, 1, 1);
  REQUIRE(yp.shape() == Shape{1, 3, 4});
  CHECK(yp(0, 0, 0) == doctest::Approx(2.0));  // only w(1,1)=2 over x(0,0)=1

  // bias shifts every output of its channel
  auto bias = Tensor<double>::from({1}, {10.0});
  auto yb = conv2d(x, w, &bias, 1, 0);
  CHECK(yb(0, 0, 0) == doctest::Approx(17.0));
}

TEST_CASE("conv2d identity kernel is exact") {
  Rng rng(11);
  auto x = rng.uniform_tensor<float>({3, 5, 5}, 0.0, 1.0);
  auto w = Tensor<float>::zeros({3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w.flat(((c * 3 + c) * 3 + 1) * 3 + 1) = 1.f;
  auto y = conv2d(x, w, 1, 1);
  CHECK(bitwise_equal(x, y));
}

TEST_CASE("depthwise conv oracle") {
  auto x = Tensor<double>::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto w = Tensor<double>::from({2, 1, 1}, {2, 3});
  auto y = depthwise_conv2d(x, w, 1, 0);
  CHECK(y(0, 1, 1) == 8.0);
  CHECK(y(1, 0, 0) == 15.0);
  CHECK(y(1, 1, 1) == 24.0);
}

TEST_CASE("polyphase split and merge") {
  auto x = Tensor<double>::from({1, 2, 2}, {1, 2, 3, 4});  // [[a,b],[c,d]]
  CHECK(polyphase_component(x, 0, 0).flat(0) == 1.0);
  CHECK(polyphase_component(x, 0, 1).flat(0) == 2.0);
  CHECK(polyphase_component(x, 1, 0).flat(0) == 3.0);
  CHECK(polyphase_component(x, 1, 1).flat(0) == 4.0);

  Rng rng(5);
  auto big = rng.gaussian_tensor<float>({2, 6, 8});
  auto m = polyphase_merge(polyphase_component(big, 0, 0), polyphase_component(big, 0, 1),
                           polyphase_component(big, 1, 0), polyphase_component(big, 1, 1));
  CHECK(bitwise_equal(big, m));

  CHECK_THROWS_AS(polyphase_component(Tensor<double>::zeros({1, 3, 4}), 0, 0), ShapeError);
}

TEST_CASE("concat and slice channels") {
  Rng rng(6);
  auto a = rng.gaussian_tensor<double>({2, 3, 3});
  auto b = rng.gaussian_tensor<double>({1, 3, 3});
  auto cat = concat_channels(a, b);
  REQUIRE(cat.shape() == Shape{3, 3, 3});
  CHECK(bitwise_equal(slice_channels(cat, 0, 2), a));
  CHECK(bitwise_equal(slice_channels(cat, 2, 3), b));
  CHECK_THROWS_AS(slice_channels(cat, 2, 2), ShapeError);
  CHECK_THROWS_AS(slice_channels(cat, 0, 4), ShapeError);
}

TEST_CASE("replicate pad oracle") {
  auto x = Tensor<double>::from({1, 2, 2}, {1, 2, 3, 4});
  auto y = replicate_pad2d(x, 1);
  REQUIRE(y.shape() == Shape{1, 4, 4});
  CHECK(y(0, 0, 0) == 1.0);
  CHECK(y(0, 0, 3) == 2.0);
  CHECK(y(0, 3, 0) == 3.0);
  CHECK(y(0, 3, 3) == 4.0);
  CHECK(y(0, 1, 2) == 2.0);
}

TEST_CASE("deadzone quantizer") {
  auto x = Tensor<double>::from({4}, {0.74, -0.74, 0.49, 1.0});
  auto y = quantize_deadzone(x, 0.5);
  CHECK(y(0) == 0.5);
  CHECK(y(1) == -0.5);
  CHECK(y(2) == 0.0);
  CHECK(y(3) == 1.0);
  CHECK(bitwise_equal(quantize_deadzone(x, 0.0), x));  // step 0: identity
}

TEST_CASE("upsample nearest") {
  auto x = Tensor<double>::from({1, 1, 2}, {3, 7});
  auto y = upsample_nearest2x(x);
  REQUIRE(y.shape() == Shape{1, 2, 4});
  CHECK(y(0, 0, 0) == 3.0);
  CHECK(y(0, 1, 1) == 3.0);
  CHECK(y(0, 0, 2) == 7.0);
  CHECK(y(0, 1, 3) == 7.0);
}

TEST_CASE("gradient contract: scalar loss, fan-out, untouched leaves") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::from({2}, {3.0, -1.0}));
  auto unused = t.leaf(Tensor<double>::from({3}, {0.0, 0.0, 0.0}));
  auto frozen = t.constant(Tensor<double>::from({2}, {1.0, 1.0}));
  auto y = sum_squares(t, add(t, x, x));  // fan-out: d/dx sum((2x)^2) = 8x
  (void)frozen;
  auto g = gradient(t, y);
  CHECK(g.at(x)(0) == doctest::Approx(24.0));
  CHECK(g.at(x)(1) == doctest::Approx(-8.0));
  CHECK(g.contains(unused));
  CHECK(max_abs(g.at(unused)) == 0.0);
  CHECK_FALSE(g.contains(frozen));
  CHECK(g.at(unused).shape() == Shape{3});

  auto vec = add(t, x, x);
  CHECK_THROWS_AS(gradient(t, vec), Error);  // non-scalar loss
}

TEST_CASE_TEMPLATE("gradcheck elementwise and reductions", S, float, double) {
  for (int i = 0; i < 10; ++i) {
    Rng rng = Rng::stream(100, static_cast<std::uint64_t>(i));
    const Shape sh{2, 3, 4};
    auto a = signed_margin_tensor<S>(rng, sh);
    auto b = signed_margin_tensor<S>(rng, sh);

    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, add(t, in[0], in[1]));
    }, {a, b});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, sub(t, in[0], in[1]));
    }, {a, b});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, mul(t, in[0], in[1]));
    }, {a, b});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, affine(t, in[0], S(1.7), S(-0.3)));
    }, {a});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, leaky_relu(t, in[0], S(0.1)));
    }, {a});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, relu(t, in[0]));
    }, {a});
    // reduce_sum feeding a scalar product exercises its backward non-trivially
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      auto r = reduce_sum(t, in[0]);
      return mul(t, r, r);
    }, {a});
    // scalar-times-tensor broadcast
    auto s = signed_margin_tensor<S>(rng, {});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, mul(t, in[0], in[1]));
    }, {s, a});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, mul(t, in[1], in[0]));
    }, {s, a});
  }
}

TEST_CASE_TEMPLATE("gradcheck conv2d", S, float, double) {
  for (int i = 0; i < 10; ++i) {
    Rng rng = Rng::stream(200, static_cast<std::uint64_t>(i));
    const int stride = 1 + static_cast<int>(rng.uniform_index(2));
    const int pad = static_cast<int>(rng.uniform_index(2));
    const std::size_t cin = 1 + rng.uniform_index(2), cout = 1 + rng.uniform_index(2);
    const std::size_t k = rng.uniform_index(2) ? 3 : 1;
    const std::size_t h = 4 + rng.uniform_index(2);
    auto x = signed_margin_tensor<S>(rng, {cin, h, h}, 0.08, 0.48);
    auto w = signed_margin_tensor<S>(rng, {cout, cin, k, k}, 0.08, 0.48);
    auto b = signed_margin_tensor<S>(rng, {cout}, 0.08, 0.48);
    const Shape out_shape{cout, conv_out_extent(h, k, stride, pad, "t"),
                          conv_out_extent(h, k, stride, pad, "t")};
    auto probe = signed_margin_tensor<S>(rng, out_shape, 0.08, 0.48);
    INFO("stride " << stride << " pad " << pad << " k " << k);
    check_grad<S>([stride, pad, probe](Tape<S>& t, const std::vector<ValueId>& in) {
      return probe_loss(t, conv2d(t, in[0], in[1], in[2], stride, pad), probe);
    }, {x, w, b});
  }
}

TEST_CASE_TEMPLATE("gradcheck depthwise conv2d", S, float, double) {
  for (int i = 0; i < 10; ++i) {
    Rng rng = Rng::stream(300, static_cast<std::uint64_t>(i));
    const int stride = 1 + static_cast<int>(rng.uniform_index(2));
    const int pad = static_cast<int>(rng.uniform_index(2));
    const std::size_t c = 1 + rng.uniform_index(3);
    auto x = signed_margin_tensor<S>(rng, {c, 5, 5}, 0.08, 0.48);
    auto w = signed_margin_tensor<S>(rng, {c, 3, 3}, 0.08, 0.48);
    auto b = signed_margin_tensor<S>(rng, {c}, 0.08, 0.48);
    const std::size_t oe = conv_out_extent(5, 3, stride, pad, "t");
    auto probe = signed_margin_tensor<S>(rng, {c, oe, oe}, 0.08, 0.48);
    check_grad<S>([stride, pad, probe](Tape<S>& t, const std::vector<ValueId>& in) {
      return probe_loss(t, depthwise_conv2d(t, in[0], in[1], in[2], stride, pad), probe);
    }, {x, w, b});
    // separable form: depthwise then 1x1 pointwise
    auto pw = signed_margin_tensor<S>(rng, {2, c, 1, 1}, 0.08, 0.48);
    auto probe2 = signed_margin_tensor<S>(rng, {2, 5, 5}, 0.08, 0.48);
    check_grad<S>([probe2](Tape<S>& t, const std::vector<ValueId>& in) {
      auto d = depthwise_conv2d(t, in[0], in[1], 1, 1);
      return probe_loss(t, conv2d(t, d, in[2], 1, 0), probe2);
    }, {x, w, pw});
  }
}

TEST_CASE_TEMPLATE("gradcheck structure ops", S, float, double) {
  for (int i = 0; i < 10; ++i) {
    Rng rng = Rng::stream(400, static_cast<std::uint64_t>(i));
    auto a = signed_margin_tensor<S>(rng, {2, 4, 4});
    auto b = signed_margin_tensor<S>(rng, {1, 4, 4});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, concat_channels(t, in[0], in[1]));
    }, {a, b});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, slice_channels(t, in[0], 1, 2));
    }, {a});
    check_grad<S>([i](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, polyphase_component(t, in[0], i % 2, (i / 2) % 2));
    }, {a});
    auto q0 = signed_margin_tensor<S>(rng, {2, 2, 2});
    auto q1 = signed_margin_tensor<S>(rng, {2, 2, 2});
    auto q2 = signed_margin_tensor<S>(rng, {2, 2, 2});
    auto q3 = signed_margin_tensor<S>(rng, {2, 2, 2});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, polyphase_merge(t, in[0], in[1], in[2], in[3]));
    }, {q0, q1, q2, q3});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, upsample_nearest2x(t, in[0]));
    }, {a});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, replicate_pad2d(t, in[0], 2));
    }, {a});
  }
}

TEST_CASE_TEMPLATE("gradcheck linear and channel bias", S, float, double) {
  for (int i = 0; i < 10; ++i) {
    Rng rng = Rng::stream(500, static_cast<std::uint64_t>(i));
    auto w = signed_margin_tensor<S>(rng, {3, 4});
    auto x = signed_margin_tensor<S>(rng, {4});
    auto b = signed_margin_tensor<S>(rng, {3});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, linear(t, in[0], in[1], in[2]));
    }, {w, x, b});

    auto img = signed_margin_tensor<S>(rng, {3, 4, 4});
    check_grad<S>([](Tape<S>& t, const std::vector<ValueId>& in) {
      return sum_squares(t, bias_add_channels(t, in[0], in[1]));
    }, {img, b});
  }
}

TEST_CASE_TEMPLATE("quantizer has zero gradient", S, float, double) {
  Rng rng(600);
  // values centered inside quantizer cells so the FD probe stays in-cell
  Tensor<S> x({3, 4, 4});
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double cell = static_cast<double>(rng.uniform_index(5)) - 2.0;
    x.flat(i) = static_cast<S>(0.5 * (cell + 0.4 + 0.2 * rng.uniform()));
  }
  Program<S> p = [](Tape<S>& t, const std::vector<ValueId>& in) {
    return reduce_sum(t, quantize_deadzone(t, in[0], S(0.5)));
  };
  auto ev = evaluate(p, {x});
  auto g = gradient(ev.tape, ev.output);
  CHECK(max_abs(g.at(ev.inputs[0])) == 0.0);
  auto fd = finite_difference_gradient(p, {x}, 0, Tols<S>::step);
  CHECK(max_abs(fd) == 0.0);
}

TEST_CASE_TEMPLATE("gradcheck composite two-layer conv net", S, float, double) {
  // x -> conv3x3 -> relu -> conv3x3 -> mse against a fixed target
  for (int i = 0; i < 3; ++i) {
    Rng rng = Rng::stream(700, static_cast<std::uint64_t>(i));
    auto x = signed_margin_tensor<S>(rng, {1, 6, 6});
    auto w1 = signed_margin_tensor<S>(rng, {2, 1, 3, 3});
    auto b1 = signed_margin_tensor<S>(rng, {2});
    auto w2 = signed_margin_tensor<S>(rng, {1, 2, 3, 3});
    auto b2 = signed_margin_tensor<S>(rng, {1});
    auto target = rng.gaussian_tensor<S>({1, 6, 6});
    auto probe = signed_margin_tensor<S>(rng, {1, 6, 6});
    auto prog = [target, probe](Tape<S>& t, const std::vector<ValueId>& in) {
      auto h = relu(t, conv2d(t, in[0], in[1], in[2], 1, 1));
      auto y = conv2d(t, h, in[3], in[4], 1, 1);
      auto d = sub(t, y, t.constant(target));
      // the quadratic loss is the realistic shape but float FD noise scales
      // with its magnitude; probe the linear form in float
      if constexpr (std::is_same_v<S, double>) return sum_squares(t, d);
      return probe_loss(t, d, probe);
    };
    check_grad<S>(prog, {x, w1, b1, w2, b2});
  }
}

TEST_CASE("tape rejects malformed graphs") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::zeros({2, 4, 4}));
  CHECK_THROWS_AS(add(t, x, ValueId{99}), Error);
  CHECK_THROWS_AS(conv2d(t, x, x, 1, 0), ShapeError);  // weight must be rank 4
  auto w = t.constant(Tensor<double>::zeros({1, 3, 3, 3}));
  CHECK_THROWS_AS(conv2d(t, x, w, 1, 0), ShapeError);  // channel mismatch
}
