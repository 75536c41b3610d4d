#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "oracles.hpp"
#include "vgpo/diffnet.hpp"

using namespace vgpo;

namespace {

std::vector<Architecture> arch_matrix() {
  return {
      Architecture{2, 1, {8, 8}, Activation::tanh},
      Architecture{1, 2, {6}, Activation::tanh},
      Architecture{2, 3, {5, 4, 3}, Activation::tanh},
      Architecture{3, 1, {}, Activation::tanh},
  };
}

NetInput make_input(const std::vector<double>& x, double tau, std::size_t c) { return NetInput{x, tau, c}; }

}  // namespace

TEST(Architecture, ParamCountMatchesLayerShapes) {
  for (const auto& arch : arch_matrix()) {
    const Mlp net(arch);
    std::size_t expected = 0;
    for (std::size_t l = 0; l < net.layer_count(); ++l) expected += net.fan_in(l) * net.fan_out(l) + net.fan_out(l);
    EXPECT_EQ(arch.param_count(), expected);
    EXPECT_EQ(net.param_count(), expected);
    EXPECT_EQ(net.fan_in(0), arch.state_dim + 3 + arch.context_count);
    EXPECT_EQ(net.fan_out(net.layer_count() - 1), arch.state_dim);
  }
  EXPECT_EQ(Architecture{}.param_count(), 6u * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
}

TEST(Architecture, RejectsDegenerateShapes) {
  EXPECT_THROW(Mlp(Architecture{0, 1, {4}, Activation::tanh}), std::invalid_argument);
  EXPECT_THROW(Mlp(Architecture{2, 0, {4}, Activation::tanh}), std::invalid_argument);
  EXPECT_THROW(Mlp(Architecture{2, 1, {4, 0}, Activation::tanh}), std::invalid_argument);
}

TEST(InitParams, DeterministicPerSeedWithZeroBiases) {
  const Mlp net(arch_matrix()[0]);
  const auto a = net.init_params(7), b = net.init_params(7), c = net.init_params(8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.fan_in(l)));
    for (std::size_t k = 0; k < net.fan_in(l) * net.fan_out(l); ++k)
      EXPECT_LE(std::abs(a[net.weight_offset(l) + k]), bound);
    for (std::size_t k = 0; k < net.fan_out(l); ++k) EXPECT_EQ(a[net.bias_offset(l) + k], 0.0);
  }
}

TEST(Forward, ZeroParamsGiveZeroOutput) {
  const Mlp net(arch_matrix()[0]);
  const ParamVector zero(net.param_count(), 0.0);
  const std::vector<double> x{0.3, -1.2};
  for (double v : net.forward(zero, make_input(x, 0.4, 0))) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityLinearLayer) {
  const Architecture arch{3, 1, {}, Activation::tanh};
  const Mlp net(arch);
  ParamVector p(net.param_count(), 0.0);
  for (std::size_t d = 0; d < 3; ++d) p[d * net.fan_in(0) + d] = 1.0;
  const std::vector<double> x{0.5, -2.0, 7.25};
  EXPECT_EQ(net.forward(p, make_input(x, 0.0, 0)), x);
}

TEST(Forward, MatchesNaiveReference) {
  oracle::Gen gen(11);
  for (const auto& arch : arch_matrix()) {
    const Mlp net(arch);
    for (int rep = 0; rep < 25; ++rep) {
      const ParamVector p(gen.normal_vec(net.param_count()));
      const auto x = gen.normal_vec(arch.state_dim);
      const double tau = gen.uniform(0.0, 1.0);
      const std::size_t c = gen.index(0, arch.context_count - 1);
      const auto got = net.forward(p, make_input(x, tau, c));
      const auto want = oracle::naive_forward(arch, p.values, x, tau, c);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t d = 0; d < got.size(); ++d) EXPECT_NEAR(got[d], want[d], 1e-12);
    }
  }
}

TEST(Forward, PureAndTapeConsistent) {
  const Mlp net(arch_matrix()[2]);
  const auto p = net.init_params(3);
  const std::vector<double> x{0.1, 0.2};
  const auto a = net.forward(p, make_input(x, 0.7, 2));
  const auto b = net.forward(p, make_input(x, 0.7, 2));
  Tape tape;
  const auto c = net.forward(p, make_input(x, 0.7, 2), tape);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Forward, RejectsBadInputs) {
  const Mlp net(arch_matrix()[0]);
  const auto p = net.init_params(1);
  const std::vector<double> x{0.0, 0.0}, short_x{0.0};
  const std::vector<double> nan_x{0.0, std::nan("")};
  EXPECT_THROW(net.forward(p, make_input(short_x, 0.5, 0)), std::invalid_argument);
  EXPECT_THROW(net.forward(p, make_input(x, 1.5, 0)), std::invalid_argument);
  EXPECT_THROW(net.forward(p, make_input(x, 0.5, 1)), std::invalid_argument);
  EXPECT_THROW(net.forward(p, make_input(nan_x, 0.5, 0)), std::invalid_argument);
  EXPECT_THROW(net.forward(ParamVector(3), make_input(x, 0.5, 0)), std::invalid_argument);
}

TEST(Grad, MatchesCentralDifferences) {
  oracle::Gen gen(5);
  for (const auto& arch : arch_matrix()) {
    const Mlp net(arch);
    ASSERT_LE(net.param_count(), 200u);
    const auto p = net.init_params(9);
    const auto x = gen.normal_vec(arch.state_dim);
    const double tau = 0.37;
    const std::size_t c = arch.context_count - 1;
    const auto up = gen.normal_vec(arch.state_dim);
    const auto g = net.grad(p, make_input(x, tau, c), up);

    auto f_params = [&](const std::vector<double>& v) {
      const auto out = net.forward(ParamVector(v), make_input(x, tau, c));
      double s = 0.0;
      for (std::size_t d = 0; d < out.size(); ++d) s += up[d] * out[d];
      return s;
    };
    EXPECT_LT(oracle::max_rel_error(g.params, oracle::central_diff(f_params, p.values)), 1e-5);

    const auto feat = net.features(make_input(x, tau, c));
    auto f_feat = [&](const std::vector<double>& v) {
      const auto out = net.forward_features(p, v);
      double s = 0.0;
      for (std::size_t d = 0; d < out.size(); ++d) s += up[d] * out[d];
      return s;
    };
    EXPECT_LT(oracle::max_rel_error(g.input, oracle::central_diff(f_feat, feat)), 1e-5);
  }
}

TEST(Grad, ZeroUpstreamAndBatchLinearity) {
  const Mlp net(arch_matrix()[0]);
  const auto p = net.init_params(2);
  const std::vector<double> x1{0.2, -0.4}, x2{1.0, 0.5};
  const std::vector<double> zero{0.0, 0.0}, up{0.7, -1.3};
  const auto gz = net.grad(p, make_input(x1, 0.5, 0), zero);
  for (double v : gz.params) EXPECT_EQ(v, 0.0);
  for (double v : gz.input) EXPECT_EQ(v, 0.0);

  const auto g1 = net.grad(p, make_input(x1, 0.2, 0), up);
  const auto g2 = net.grad(p, make_input(x2, 0.9, 0), up);
  std::vector<double> acc(net.param_count(), 0.0);
  net.accumulate_grad(p, make_input(x1, 0.2, 0), up, acc);
  net.accumulate_grad(p, make_input(x2, 0.9, 0), up, acc);
  for (std::size_t i = 0; i < acc.size(); ++i) EXPECT_NEAR(acc[i], g1.params[i] + g2.params[i], 1e-14);
}

TEST(Adam, ZeroGradientLeavesParamsAndDecaysMoments) {
  ParamVector p(std::vector<double>{1.0, -2.0});
  AdamState st;
  const AdamConfig cfg{0.1};
  const std::vector<double> g{1.0, 1.0}, z{0.0, 0.0};
  adam_update(p, g, st, cfg);
  const ParamVector after_first = p;
  const auto m = st.m, v = st.v;
  adam_update(p, z, st, cfg);
  // the first moment keeps pushing; params still change, but moments decay
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(st.m[i], cfg.beta1 * m[i]);
    EXPECT_DOUBLE_EQ(st.v[i], cfg.beta2 * v[i]);
  }
  ParamVector q(std::vector<double>{1.0, -2.0});
  AdamState fresh;
  adam_update(q, z, fresh, cfg);
  EXPECT_EQ(q.values, (std::vector<double>{1.0, -2.0}));
  EXPECT_NE(after_first, p);
}

TEST(Adam, ConstantGradientStepApproachesLr) {
  // with g constant, mhat = g and vhat = g^2 exactly, so each step is lr * |g| / (|g| + eps)
  for (double g : {3.0, -0.02, 1e-3}) {
    ParamVector p(1, 0.0);
    AdamState st;
    const AdamConfig cfg{0.01};
    double prev = 0.0, step = 0.0;
    for (int i = 0; i < 200; ++i) {
      adam_update(p, std::vector<double>{g}, st, cfg);
      step = p[0] - prev;
      prev = p[0];
    }
    EXPECT_NEAR(std::abs(step), cfg.lr * std::abs(g) / (std::abs(g) + cfg.eps), 1e-12);
    EXPECT_LT(step * g, 0.0);
  }
}

TEST(Adam, DeterministicAndValidated) {
  auto run = [] {
    ParamVector p(std::vector<double>{0.5, 0.5, 0.5});
    AdamState st;
    oracle::Gen gen(3);
    for (int i = 0; i < 20; ++i) adam_update(p, gen.normal_vec(3), st, AdamConfig{});
    return p;
  };
  EXPECT_EQ(run(), run());
  ParamVector p(2);
  AdamState st;
  EXPECT_THROW(adam_update(p, std::vector<double>{1.0}, st, AdamConfig{}), std::invalid_argument);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  const Architecture arch{2, 3, {5, 4}, Activation::tanh};
  const Mlp net(arch);
  auto p = net.init_params(4);
  p[0] = -0.0;
  p[1] = 1e-310;
  std::stringstream ss;
  write_checkpoint(ss, arch, p);
  const auto ck = read_checkpoint(ss);
  EXPECT_TRUE(ck.arch == arch);
  ASSERT_EQ(ck.params.size(), p.size());
  EXPECT_EQ(std::memcmp(ck.params.values.data(), p.values.data(), p.size() * sizeof(double)), 0);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const Architecture arch{2, 1, {4}, Activation::tanh};
  std::stringstream ss;
  write_checkpoint(ss, arch, Mlp(arch).init_params(0));
  std::string bytes = ss.str();

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream a(bad_magic);
  EXPECT_THROW(read_checkpoint(a), std::runtime_error);

  std::istringstream b(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_checkpoint(b), std::runtime_error);

  EXPECT_THROW(write_checkpoint(ss, arch, ParamVector(3)), std::invalid_argument);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), std::runtime_error);
}
