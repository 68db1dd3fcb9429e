#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sstream>

#include "doctest.h"
#include "dfkd/errors.hpp"
#include "dfkd/nn.hpp"
#include "dfkd/rng.hpp"
#include "testutil.hpp"

using namespace dfkd;
using nn::Mode;
using nn::Network;
using nn::Shape;

namespace {

// Builds dy = proj for the scalar probe proj . flatten(y), runs backward and
// compares input and parameter gradients against central differences.
void gradcheck(Network& net, const Mat& x, Mode mode, double tol = 2e-6) {
  Rng rng(42, 99);
  const Shape out = net.output_shape();
  const Mat proj = rng.normal_mat(out.flat(), static_cast<int>(x.cols()));

  net.forward(x, mode);
  net.zero_grad();
  const Mat dx = net.backward(proj, true);

  const Mat dx_num = testutil::numeric_grad_input(net, x, proj, mode);
  CHECK(testutil::rel_error(dx, dx_num) < tol);

  for (nn::Param* p : net.params()) {
    const Mat dp_num = testutil::numeric_grad_param(net, *p, x, proj, mode);
    CHECK(testutil::rel_error(p->grad, dp_num) < tol);
  }
}

}  // namespace

TEST_CASE("dense gradients") {
  Rng rng(1, 0);
  Network net({5, 1, 1});
  net.emplace<nn::Dense>(4, rng);
  const Mat x = rng.normal_mat(5, 3);
  gradcheck(net, x, Mode::Train);
}

TEST_CASE("conv gradients (stride 1, padded)") {
  Rng rng(2, 0);
  Network net({2, 6, 6});
  net.emplace<nn::Conv2d>(3, 3, 1, 1, rng);
  const Mat x = rng.normal_mat(2 * 6 * 6, 4);
  gradcheck(net, x, Mode::Train);
}

TEST_CASE("conv gradients (stride 2, no padding)") {
  Rng rng(3, 0);
  Network net({3, 7, 7});
  net.emplace<nn::Conv2d>(2, 3, 2, 0, rng);
  const Mat x = rng.normal_mat(3 * 7 * 7, 2);
  gradcheck(net, x, Mode::Train);
}

TEST_CASE("conv shapes cross the chunk boundary consistently") {
  Rng rng(4, 0);
  Network net({1, 4, 4});
  net.emplace<nn::Conv2d>(2, 3, 1, 1, rng);
  const Mat x = rng.normal_mat(16, 70);  // spans two 32-sample chunks + remainder
  const Mat y = net.forward(x, Mode::Train);
  // per-sample forward must equal batched forward
  for (int b : {0, 31, 32, 63, 69}) {
    const Mat yb = net.forward(x.col(b), Mode::Train);
    CHECK((yb - y.col(b)).norm() == 0.0);
  }
}

TEST_CASE("batchnorm train-mode gradients (spatial and flat)") {
  Rng rng(5, 0);
  {
    Network net({3, 4, 4});
    net.emplace<nn::BatchNorm>();
    const Mat x = rng.normal_mat(3 * 16, 5);
    gradcheck(net, x, Mode::Train, 5e-6);
  }
  {
    Network net({7, 1, 1});
    net.emplace<nn::BatchNorm>();
    const Mat x = rng.normal_mat(7, 6);
    gradcheck(net, x, Mode::Train, 5e-6);
  }
}

TEST_CASE("batchnorm eval-mode backward is the running-stat affine map") {
  Rng rng(6, 0);
  Network net({4, 1, 1});
  auto* bn = net.emplace<nn::BatchNorm>();
  // move the running stats off the initial (0,1)
  for (int i = 0; i < 10; ++i) net.forward(rng.normal_mat(4, 8), Mode::Train);
  const Mat x = rng.normal_mat(4, 3);
  const Mat proj = rng.normal_mat(4, 3);
  net.forward(x, Mode::Eval);
  const Mat dx = net.backward(proj, false);
  const Mat dx_num = testutil::numeric_grad_input(net, x, proj, Mode::Eval);
  CHECK(testutil::rel_error(dx, dx_num) < 1e-6);
  CHECK(bn->running_mean().size() == 4);
}

TEST_CASE("batchnorm stat capture exposes batch moments and their gradients") {
  Rng rng(7, 0);
  Network net({2, 3, 3});
  auto* bn = net.emplace<nn::BatchNorm>();
  bn->set_capture(true);
  const Mat x = rng.normal_mat(18, 5);
  net.forward(x, Mode::Eval);

  // captured statistics match direct computation
  for (int c = 0; c < 2; ++c) {
    const auto block = x.middleRows(c * 9, 9);
    const double mean = block.mean();
    CHECK(bn->batch_mean()[c] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(bn->batch_var()[c] ==
          doctest::Approx((block.array() - mean).square().mean()).epsilon(1e-12));
  }

  // d(g_mean . mean + g_var . var)/dx via injected stat grads, against
  // finite differences of the scalar written the same way
  const Vec g_mean = rng.normal_mat(2, 1);
  const Vec g_var = rng.normal_mat(2, 1);
  bn->set_stat_grads(g_mean, g_var);
  const Mat dx = net.backward(Mat::Zero(18, 5), false);

  const auto stat_scalar = [&](const Mat& xx) {
    double total = 0.0;
    for (int c = 0; c < 2; ++c) {
      const auto block = xx.middleRows(c * 9, 9);
      const double mean = block.mean();
      const double var = (block.array() - mean).square().mean();
      total += g_mean[c] * mean + g_var[c] * var;
    }
    return total;
  };
  const Mat dx_num = testutil::numeric_grad(stat_scalar, x);
  CHECK(testutil::rel_error(dx, dx_num) < 1e-6);
}

TEST_CASE("activation and pooling gradients") {
  Rng rng(8, 0);
  {
    Network net({6, 1, 1});
    net.emplace<nn::ReLU>();
    gradcheck(net, Mat(rng.normal_mat(6, 4) * 2.0), Mode::Train);
  }
  {
    Network net({6, 1, 1});
    net.emplace<nn::LeakyReLU>(0.2);
    gradcheck(net, Mat(rng.normal_mat(6, 4) * 2.0), Mode::Train);
  }
  {
    Network net({6, 1, 1});
    net.emplace<nn::Sigmoid>();
    gradcheck(net, rng.normal_mat(6, 4), Mode::Train);
  }
  {
    Network net({2, 4, 4});
    net.emplace<nn::MaxPool2>();
    gradcheck(net, rng.normal_mat(32, 3), Mode::Train);
  }
  {
    Network net({2, 3, 3});
    net.emplace<nn::Upsample2>();
    gradcheck(net, rng.normal_mat(18, 3), Mode::Train);
  }
}

TEST_CASE("composite stack gradients") {
  Rng rng(9, 0);
  Network net({1, 8, 8});
  net.emplace<nn::Conv2d>(4, 3, 1, 1, rng);
  net.emplace<nn::BatchNorm>();
  net.emplace<nn::ReLU>();
  net.emplace<nn::MaxPool2>();
  net.emplace<nn::Dense>(6, rng);
  net.emplace<nn::BatchNorm>();
  net.emplace<nn::ReLU>();
  net.emplace<nn::Dense>(3, rng);
  const Mat x = rng.normal_mat(64, 5);
  gradcheck(net, x, Mode::Train, 1e-5);
}

TEST_CASE("upsample-generator stack gradients") {
  Rng rng(10, 0);
  Network net({6, 1, 1});
  net.emplace<nn::Dense>(2 * 2 * 2, rng);
  net.emplace<nn::BatchNorm>(false);
  net.emplace<nn::LeakyReLU>(0.2);
  net.emplace<nn::Reshape>(Shape{2, 2, 2});
  net.emplace<nn::Upsample2>();
  net.emplace<nn::Conv2d>(1, 3, 1, 1, rng);
  net.emplace<nn::Sigmoid>();
  const Mat x = rng.normal_mat(6, 4);
  gradcheck(net, x, Mode::Train, 1e-5);
}

TEST_CASE("network serialization round-trips bitwise") {
  Rng rng(11, 0);
  Network a({1, 4, 4});
  a.emplace<nn::Conv2d>(2, 3, 1, 1, rng);
  a.emplace<nn::BatchNorm>();
  a.emplace<nn::ReLU>();
  a.emplace<nn::Dense>(3, rng);
  for (int i = 0; i < 3; ++i) a.forward(rng.normal_mat(16, 5), Mode::Train);

  std::stringstream buf;
  a.save(buf);

  Rng rng2(99, 7);  // different init must be fully overwritten
  Network b({1, 4, 4});
  b.emplace<nn::Conv2d>(2, 3, 1, 1, rng2);
  b.emplace<nn::BatchNorm>();
  b.emplace<nn::ReLU>();
  b.emplace<nn::Dense>(3, rng2);
  b.load(buf);

  const Mat x = rng.normal_mat(16, 4);
  const Mat ya = a.forward(x, Mode::Eval);
  const Mat yb = b.forward(x, Mode::Eval);
  CHECK((ya - yb).norm() == 0.0);
}

TEST_CASE("adam state serialization keeps the trajectory bitwise") {
  Rng rng(12, 0);
  auto build = [&](std::uint64_t seed) {
    Rng r(seed, 0);
    Network net({4, 1, 1});
    net.emplace<nn::Dense>(4, r);
    return net;
  };
  Network a = build(5);
  nn::Adam opt_a(a.params(), 1e-2);

  // a few steps to populate moments
  const Mat x = rng.normal_mat(4, 8);
  auto step = [&](Network& net, nn::Adam& opt) {
    const Mat y = net.forward(x, Mode::Train);
    net.zero_grad();
    net.backward(y, true);  // d/dy of 0.5*||y||^2
    opt.step();
  };
  for (int i = 0; i < 4; ++i) step(a, opt_a);

  std::stringstream buf;
  a.save(buf);
  opt_a.save(buf);

  Network b = build(17);
  nn::Adam opt_b(b.params(), 1e-2);
  b.load(buf);
  opt_b.load(buf);

  for (int i = 0; i < 3; ++i) {
    step(a, opt_a);
    step(b, opt_b);
  }
  const Mat ya = a.forward(x, Mode::Eval);
  const Mat yb = b.forward(x, Mode::Eval);
  CHECK((ya - yb).norm() == 0.0);
}

TEST_CASE("shape validation throws argument errors") {
  Rng rng(13, 0);
  Network net({2, 4, 4});
  net.emplace<nn::Conv2d>(2, 3, 1, 1, rng);
  CHECK_THROWS_AS(net.forward(Mat::Zero(31, 2), Mode::Train), argument_error);
  CHECK_THROWS_AS(nn::MaxPool2({1, 5, 4}), argument_error);
  CHECK_THROWS_AS(nn::Reshape({1, 4, 4}, {1, 3, 3}), argument_error);
}

TEST_CASE("rng state save/load resumes the exact stream") {
  Rng a(123, 4);
  for (int i = 0; i < 7; ++i) a.normal();  // leave a Box-Muller spare cached
  std::stringstream buf;
  a.save(buf);
  Rng b(0, 0);
  b.load(buf);
  CHECK(a == b);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
  for (int i = 0; i < 10; ++i) CHECK(a.uniform_int(97) == b.uniform_int(97));
}
