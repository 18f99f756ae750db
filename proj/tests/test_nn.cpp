#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pgdpo/nn.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

using namespace pgdpo;

namespace {

NetworkSpec spec_of(int in, int out, int hidden, int width,
                    OutputTransform tr) {
  NetworkSpec s;
  s.in_dim = in;
  s.out_dim = out;
  s.hidden_layers = hidden;
  s.width = width;
  s.transform = tr;
  s.norm_offset = Vec::Zero(in);
  s.norm_scale = Vec::Ones(in);
  return s;
}

double softplus_ref(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// straight-line reference forward for one sample
Vec forward_ref(const Mlp& net, const Vec& x) {
  const NetworkSpec& s = net.spec();
  Vec h = (x - s.norm_offset).cwiseQuotient(s.norm_scale);
  const auto& L = net.layers();
  for (size_t l = 0; l < L.size(); ++l) {
    Vec z = L[l].W * h + L[l].b.transpose();
    if (l + 1 < L.size()) {
      for (int i = 0; i < z.size(); ++i)
        z[i] = s.act == Activation::softplus ? softplus_ref(z[i])
                                             : std::max(z[i], 0.0);
    }
    h = z;
  }
  switch (s.transform) {
    case OutputTransform::neg_exp:
      return (-h.array().exp()).matrix();
    case OutputTransform::pos_exp:
      return h.array().exp().matrix();
    default:
      return h;
  }
}

double scalar_loss(Mlp& net, const Mat& X) {
  Tape tape;
  Tape::Id y = net.forward(tape, X);
  Tape::Id loss = tape.mean_all(tape.square(y));
  return tape.val(loss)(0, 0);
}

Mat random_batch(RngStream& rng, int rows, int cols, double lo, double hi) {
  Mat X(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) X(i, j) = rng.uniform(lo, hi);
  return X;
}

}  // namespace

TEST_CASE("zero-initialized final layer pins the initial output") {
  Mat X = random_batch(*new RngStream(1), 7, 3, -2.0, 2.0);
  for (auto [tr, want] : {std::pair{OutputTransform::neg_exp, -1.0},
                          std::pair{OutputTransform::pos_exp, 1.0},
                          std::pair{OutputTransform::identity, 0.0}}) {
    Mlp net(spec_of(3, 1, 2, 16, tr), 42);
    Mat y = net.forward(X);
    for (int i = 0; i < y.rows(); ++i) CHECK(y(i, 0) == want);
  }
}

TEST_CASE("zero-hidden-layer network is a pure affine map") {
  NetworkSpec s = spec_of(2, 1, 0, 32, OutputTransform::identity);
  s.norm_offset << 1.0, -0.5;
  s.norm_scale << 2.0, 4.0;
  Mlp net(s, 7);
  REQUIRE(net.layers().size() == 1);
  net.layers()[0].W << 3.0, -2.0;
  net.layers()[0].b << 0.25;

  Mat X(1, 2);
  X << 5.0, 3.0;
  // normalized input: ((5-1)/2, (3+0.5)/4) = (2, 0.875)
  const double want = 3.0 * 2.0 - 2.0 * 0.875 + 0.25;
  CHECK(net.forward(X)(0, 0) == doctest::Approx(want).epsilon(1e-15));

  // d out / d x_original = W / norm_scale
  Mat g = net.input_gradient(X);
  CHECK(g(0, 0) == doctest::Approx(3.0 / 2.0).epsilon(1e-15));
  CHECK(g(0, 1) == doctest::Approx(-2.0 / 4.0).epsilon(1e-15));
}

TEST_CASE("batched forward matches the straight-line reference") {
  RngStream rng(21);
  for (auto tr : {OutputTransform::identity, OutputTransform::neg_exp,
                  OutputTransform::raw_control}) {
    NetworkSpec s = spec_of(3, tr == OutputTransform::raw_control ? 4 : 1, 2,
                            8, tr);
    s.norm_offset << 0.2, -0.1, 0.4;
    s.norm_scale << 1.5, 0.8, 2.0;
    Mlp net(s, 99);
    // final layer starts at zero; give it generic values for the comparison
    for (auto* p : net.param_values())
      if (p->cwiseAbs().maxCoeff() == 0.0)
        for (int i = 0; i < p->size(); ++i)
          *(p->data() + i) = rng.uniform(-0.5, 0.5);
    Mat X = random_batch(rng, 9, 3, -2.0, 2.0);
    Mat Y = net.forward(X);
    for (int r = 0; r < X.rows(); ++r) {
      Vec want = forward_ref(net, X.row(r).transpose());
      CHECK((Y.row(r).transpose() - want).cwiseAbs().maxCoeff() <= 1e-12);
    }
    // relu variant of the same topology
    NetworkSpec sr = s;
    sr.act = Activation::relu;
    Mlp rnet(sr, 99);
    for (size_t l = 0; l < rnet.layers().size(); ++l) {
      rnet.layers()[l].W = net.layers()[l].W;
      rnet.layers()[l].b = net.layers()[l].b;
    }
    Mat Yr = rnet.forward(X);
    for (int r = 0; r < X.rows(); ++r) {
      Vec want = forward_ref(rnet, X.row(r).transpose());
      CHECK((Yr.row(r).transpose() - want).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("parameter gradients match central differences on 100 nets") {
  RngStream rng(31);
  const OutputTransform trs[] = {
      OutputTransform::identity, OutputTransform::neg_exp,
      OutputTransform::pos_exp, OutputTransform::raw_control};
  for (int trial = 0; trial < 100; ++trial) {
    const int in = 1 + trial % 3;
    const int hidden = trial % 3;
    const int width = 1 + (trial / 3) % 4;
    const int out = trs[trial % 4] == OutputTransform::raw_control
                        ? 1 + (trial / 5) % 3
                        : 1;
    NetworkSpec s = spec_of(in, out, hidden, width, trs[trial % 4]);
    for (int i = 0; i < in; ++i) {
      s.norm_offset[i] = rng.uniform(-0.5, 0.5);
      s.norm_scale[i] = rng.uniform(0.5, 2.0);
    }
    Mlp net(s, 1000 + trial);
    for (auto* p : net.param_values())
      for (int i = 0; i < p->size(); ++i)
        *(p->data() + i) = rng.uniform(-0.8, 0.8);
    Mat X = random_batch(rng, 3, in, -1.5, 1.5);

    net.zero_grad();
    {
      Tape tape;
      Tape::Id y = net.forward(tape, X);
      tape.backward(tape.mean_all(tape.square(y)));
    }
    for (auto [pv, pg] : {std::pair{net.param_values(), net.param_grads()}}) {
      for (size_t k = 0; k < pv.size(); ++k)
        for (int i = 0; i < pv[k]->size(); ++i) {
          double& th = *(pv[k]->data() + i);
          const double saved = th;
          const double h = 1e-5 * std::max(1.0, std::abs(saved));
          th = saved + h;
          const double lp = scalar_loss(net, X);
          th = saved - h;
          const double lm = scalar_loss(net, X);
          th = saved;
          const double fd = (lp - lm) / (2.0 * h);
          const double an = *(pg[k]->data() + i);
          CHECK(std::abs(fd - an) <= 1e-4 * std::max(std::abs(an), 1e-6));
        }
    }
  }
}

TEST_CASE("input gradients match central differences and the tape adjoint") {
  RngStream rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    NetworkSpec s =
        spec_of(3, 1, 1 + trial % 2, 6,
                trial % 2 ? OutputTransform::neg_exp : OutputTransform::identity);
    s.norm_offset << 0.1, 0.0, -0.2;
    s.norm_scale << 2.0, 0.5, 1.0;
    Mlp net(s, 500 + trial);
    for (auto* p : net.param_values())
      for (int i = 0; i < p->size(); ++i)
        *(p->data() + i) = rng.uniform(-0.7, 0.7);
    Mat X = random_batch(rng, 5, 3, -1.0, 1.0);
    Mat G = net.input_gradient(X);
    for (int r = 0; r < X.rows(); ++r)
      for (int j = 0; j < 3; ++j) {
        Mat Xp = X, Xm = X;
        const double h = 1e-6;
        Xp(r, j) += h;
        Xm(r, j) -= h;
        const double fd =
            (net.forward(Xp)(r, 0) - net.forward(Xm)(r, 0)) / (2.0 * h);
        CHECK(std::abs(fd - G(r, j)) <=
              1e-4 * std::max(std::abs(G(r, j)), 1e-8));
      }

    // adjoint of the normalized-input leaf agrees after unit conversion
    Tape tape;
    Tape::Id x_node = -1;
    Tape::Id y = net.forward(tape, X, &x_node);
    tape.backward(tape.sum_all(y));
    const Mat& adj = tape.adjoint(x_node);
    for (int r = 0; r < X.rows(); ++r)
      for (int j = 0; j < 3; ++j)
        CHECK(adj(r, j) / s.norm_scale[j] ==
              doctest::Approx(G(r, j)).epsilon(1e-10));
  }
}

TEST_CASE("loss touching one output column leaves other rows ungraded") {
  NetworkSpec s = spec_of(2, 3, 1, 4, OutputTransform::raw_control);
  Mlp net(s, 8);
  RngStream rng(9);
  for (auto* p : net.param_values())
    for (int i = 0; i < p->size(); ++i) *(p->data() + i) = rng.uniform(-1, 1);
  Mat X = random_batch(rng, 4, 2, -1.0, 1.0);
  net.zero_grad();
  Tape tape;
  Tape::Id y = net.forward(tape, X);
  Mat pick = Mat::Zero(4, 3);
  pick.col(0).setOnes();  // only the first output enters the loss
  tape.backward(tape.sum_all(tape.mul(y, tape.constant(pick))));
  const Layer& last = net.layers().back();
  CHECK(last.gW.row(0).cwiseAbs().maxCoeff() > 0.0);
  CHECK(last.gW.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(last.gW.row(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(last.gb(0, 1) == 0.0);
  CHECK(last.gb(0, 2) == 0.0);
}

TEST_CASE("adam first step and stationary coordinates") {
  Mat P(2, 2), G(2, 2);
  P << 1.0, -2.0, 0.5, 3.0;
  G << 0.4, -0.02, 0.0, 1.3;  // one exactly-zero gradient
  const Mat P0 = P;
  Adam opt({&P}, {&G}, 0.01);
  opt.step();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double delta = P(i, j) - P0(i, j);
      if (G(i, j) == 0.0) {
        CHECK(delta == 0.0);
      } else {
        // first bias-corrected step is lr * sign(g) up to eps rounding
        CHECK(std::abs(delta + 0.01 * (G(i, j) > 0 ? 1.0 : -1.0)) <= 1e-5);
      }
    }
  CHECK(opt.t == 1);
}

TEST_CASE("adam drives a quadratic to the origin") {
  Mat x(1, 1), g(1, 1);
  x(0, 0) = 1.0;
  Adam opt({&x}, {&g}, 0.1);
  for (int k = 0; k < 100; ++k) {
    g(0, 0) = 2.0 * x(0, 0);
    opt.step();
  }
  CHECK(std::abs(x(0, 0)) < 0.05);
}

TEST_CASE("deterministic initialization") {
  NetworkSpec s = spec_of(3, 2, 2, 8, OutputTransform::raw_control);
  Mlp a(s, 77), b(s, 77), c(s, 78);
  for (size_t l = 0; l < a.layers().size(); ++l) {
    CHECK((a.layers()[l].W - b.layers()[l].W).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.layers()[l].b - b.layers()[l].b).cwiseAbs().maxCoeff() == 0.0);
  }
  bool differ = false;
  for (size_t l = 0; l + 1 < a.layers().size(); ++l)
    differ = differ ||
             (a.layers()[l].W - c.layers()[l].W).cwiseAbs().maxCoeff() > 0.0;
  CHECK(differ);
}

TEST_CASE("softplus stays finite for extreme preactivations") {
  NetworkSpec s = spec_of(1, 1, 1, 4, OutputTransform::identity);
  Mlp net(s, 3);
  RngStream rng(4);
  for (auto* p : net.param_values())
    for (int i = 0; i < p->size(); ++i) *(p->data() + i) = rng.uniform(-1, 1);
  Mat X(2, 1);
  X << 700.0, -700.0;
  Mat Y = net.forward(X);
  CHECK(std::isfinite(Y(0, 0)));
  CHECK(std::isfinite(Y(1, 0)));
  Mat G = net.input_gradient(X);
  CHECK(std::isfinite(G(0, 0)));
  CHECK(std::isfinite(G(1, 0)));
}

TEST_CASE("checkpoint round trip is byte-identical") {
  NetworkSpec s = spec_of(3, 2, 1, 5, OutputTransform::raw_control);
  s.norm_offset << 0.1, 0.2, 0.3;
  s.norm_scale << 1.0, 2.0, 0.125;
  Mlp net(s, 123);
  RngStream rng(6);
  for (auto* p : net.param_values())
    for (int i = 0; i < p->size(); ++i)
      *(p->data() + i) = rng.uniform(-1.0, 1.0);

  Checkpoint ck;
  ck.meta = {{"config", "line one = x\nline two, with comma"},
             {"note", "plain value"}};
  Checkpoint::Entry e;
  e.name = "policy";
  e.net = net;
  e.has_adam = true;
  e.adam = Adam(net.param_values(), net.param_grads(), 3e-4);
  e.adam.t = 17;
  for (size_t k = 0; k < e.adam.m.size(); ++k) {  // ctor preallocated these
    e.adam.m[k].setConstant(0.25);
    e.adam.v[k].setConstant(0.0625);
  }
  ck.entries.push_back(std::move(e));

  const std::string p1 = "ck_roundtrip_a.txt", p2 = "ck_roundtrip_b.txt";
  save_checkpoint(p1, ck);
  Checkpoint lk = load_checkpoint(p1);
  save_checkpoint(p2, lk);

  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  CHECK(slurp(p1) == slurp(p2));
  CHECK(!slurp(p1).empty());

  REQUIRE(lk.find("policy") != nullptr);
  CHECK(lk.find("missing") == nullptr);
  CHECK(lk.meta == ck.meta);
  const Checkpoint::Entry& le = lk.entries[0];
  CHECK(le.net.spec().transform == OutputTransform::raw_control);
  CHECK(le.net.spec().norm_scale[2] == 0.125);
  auto pv = net.param_values();
  Mlp loaded = le.net;
  auto lv = loaded.param_values();
  REQUIRE(lv.size() == pv.size());
  for (size_t k = 0; k < pv.size(); ++k)
    CHECK((*lv[k] - *pv[k]).cwiseAbs().maxCoeff() == 0.0);  // bit-exact
  REQUIRE(le.has_adam);
  CHECK(le.adam.t == 17);
  CHECK(le.adam.lr == 3e-4);
  REQUIRE(le.adam.m.size() == pv.size());
  CHECK(le.adam.m[0](0, 0) == 0.25);
  CHECK(le.adam.v[0](0, 0) == 0.0625);

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("enum string round trips and spec validation") {
  CHECK(activation_from_string(to_string(Activation::softplus)) ==
        Activation::softplus);
  CHECK(activation_from_string(to_string(Activation::relu)) ==
        Activation::relu);
  for (auto t : {OutputTransform::identity, OutputTransform::neg_exp,
                 OutputTransform::pos_exp, OutputTransform::raw_control})
    CHECK(transform_from_string(to_string(t)) == t);
  CHECK_THROWS_AS(activation_from_string("tanh"), ConfigError);
  CHECK_THROWS_AS(transform_from_string("softmax"), ConfigError);

  NetworkSpec s = spec_of(3, 1, 2, 8, OutputTransform::identity);
  CHECK_NOTHROW(s.validate());
  s.width = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = spec_of(3, 1, -1, 8, OutputTransform::identity);
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = spec_of(3, 1, 2, 8, OutputTransform::identity);
  s.norm_scale[1] = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = spec_of(3, 1, 2, 8, OutputTransform::identity);
  s.norm_offset = Vec::Zero(2);  // wrong length
  CHECK_THROWS_AS(s.validate(), ConfigError);
}
