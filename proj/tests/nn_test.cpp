#include <gtest/gtest.h>

#include <cmath>

#include "ufdn/errors.hpp"
#include "ufdn/nn.hpp"
#include "ufdn/ops.hpp"
#include "ufdn/rng.hpp"

using namespace ufdn;

namespace {

Architecture small_arch(std::size_t size = 16) {
  Architecture a;
  a.image_size = size;
  a.latent_dim = 8;
  a.enc_widths = {};
  a.dx_widths = {};
  a.dv_hidden = {16};
  return a;
}

Tensor images(std::size_t batch, const Architecture& a, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_tensor({batch, a.channels, a.image_size, a.image_size}, rng, 0.0, 1.0);
}

Tensor code(std::size_t batch, std::size_t width, std::size_t hot) {
  Tensor v({batch, width});
  for (std::size_t b = 0; b < batch; ++b) v.mutable_values()[b * width + hot] = 1.0;
  return v;
}

}  // namespace

TEST(Architecture, DefaultsAndValidation) {
  const Architecture a = Architecture{}.resolved();
  EXPECT_EQ(a.stages(), 4u);
  EXPECT_EQ(a.enc_widths, (std::vector<std::size_t>{32, 64, 128, 256}));
  EXPECT_EQ(a.dx_widths, (std::vector<std::size_t>{32, 64, 128}));

  Architecture bad;
  bad.image_size = 24;
  EXPECT_THROW(bad.resolved(), ConfigError);
  bad = {};
  bad.enc_widths = {8, 8};
  EXPECT_THROW(bad.resolved(), ConfigError);
  bad = {};
  bad.domain_dim = 1;
  EXPECT_THROW(bad.resolved(), ConfigError);
}

TEST(Model, ParameterCountMatchesHandCount) {
  // 32x32x3, latent 64, N = 3, Dv hidden 64-64, no classifier.
  const std::size_t enc = (32 * 3 * 16 + 32) + (64 * 32 * 16 + 64) + (128 * 64 * 16 + 128) +
                          (256 * 128 * 16 + 256) + 2 * (1024 * 64 + 64);
  const std::size_t gen = (67 * 1024 + 1024) + (256 * 128 * 16 + 128) + (128 * 64 * 16 + 64) +
                          (64 * 32 * 16 + 32) + (32 * 3 * 16 + 3);
  const std::size_t dv = (64 * 64 + 64) + (64 * 64 + 64) + (64 * 3 + 3);
  const std::size_t dx = (32 * 3 * 16 + 32) + (64 * 32 * 16 + 64) + (128 * 64 * 16 + 128) +
                         (2048 + 1) + (2048 * 3 + 3);
  EXPECT_EQ(init_model(Architecture{}, 1).parameter_count(), enc + gen + dv + dx);

  Architecture with_cls;
  with_cls.num_classes = 10;
  EXPECT_EQ(init_model(with_cls, 1).parameter_count(), enc + gen + dv + dx + 64 * 10 + 10);
}

TEST(Model, InitIsDeterministicAndHeScaled) {
  const UfdnModel a = init_model(Architecture{}, 7), b = init_model(Architecture{}, 7);
  const UfdnModel c = init_model(Architecture{}, 8);
  for (Partition p : kAllPartitions)
    for (const auto& [name, t] : a.params(p)) {
      const Tensor& u = b.param(p, name);
      ASSERT_TRUE(std::equal(t.values().begin(), t.values().end(), u.values().begin())) << name;
    }
  EXPECT_NE(a.param(Partition::Encoder, "E.conv1.w")[0], c.param(Partition::Encoder, "E.conv1.w")[0]);

  for (const auto& layer : layer_table(Architecture{})) {
    const Tensor& w = a.param(layer.partition, layer.name + ".w");
    const Tensor& bias = a.param(layer.partition, layer.name + ".b");
    for (double v : bias.values()) ASSERT_EQ(v, 0.0);
    if (layer.fan_in < 256) continue;
    double s2 = 0;
    for (double v : w.values()) s2 += v * v;
    const double measured = std::sqrt(s2 / static_cast<double>(w.size()));
    const double expected = std::sqrt(2.0 / static_cast<double>(layer.fan_in));
    EXPECT_NEAR(measured / expected, 1.0, 0.1) << layer.name;
  }
}

TEST(Model, UnknownParameterIsContractError) {
  const UfdnModel m = init_model(small_arch(), 1);
  EXPECT_THROW(m.param(Partition::Encoder, "E.nope.w"), ContractError);
}

TEST(Forward, ShapesAndRanges) {
  for (std::size_t size : {8u, 16u, 32u}) {
    const Architecture a = small_arch(size);
    const UfdnModel m = init_model(a, 3);
    const Tensor x = images(2, a, 5);
    const GaussianLatent lat = encode(m, x);
    EXPECT_EQ(lat.mu.shape(), (Shape{2, 8}));
    EXPECT_EQ(lat.logvar.shape(), (Shape{2, 8}));
    const Tensor y = generate(m, lat.mu, code(2, 3, 1));
    EXPECT_EQ(y.shape(), x.shape()) << size;
    for (double v : y.values()) ASSERT_TRUE(v > 0.0 && v < 1.0);
    const ImageVerdict verdict = discriminate_image(m, x);
    EXPECT_EQ(verdict.realness.shape(), (Shape{2, 1}));
    EXPECT_EQ(verdict.domain.shape(), (Shape{2, 3}));
    EXPECT_EQ(discriminate_domain(m, lat.mu).shape(), (Shape{2, 3}));
  }
}

TEST(Forward, ShapeErrors) {
  const Architecture a = small_arch();
  const UfdnModel m = init_model(a, 3);
  Rng rng(1);
  EXPECT_THROW(encode(m, normal_tensor({2, 3, 8, 8}, rng, 1.0)), DimensionError);
  EXPECT_THROW(discriminate_image(m, normal_tensor({2, 1, 16, 16}, rng, 1.0)), DimensionError);
  EXPECT_THROW(generate(m, Tensor({2, 8}), code(2, 4, 0)), ConfigError);
  EXPECT_THROW(generate(m, Tensor({2, 7}), code(2, 3, 0)), DimensionError);
  EXPECT_THROW(classify_aux(m, Tensor({2, 8})), ConfigError);
}

TEST(Forward, LogvarIsClamped) {
  const Architecture a = small_arch(8);
  UfdnModel m = init_model(a, 3);
  auto& bias = m.params(Partition::Encoder)["E.logvar.b"];
  for (auto& v : bias.mutable_values()) v = 50.0;
  const Tensor high = encode(m, images(2, a, 1)).logvar;
  for (double v : high.values()) EXPECT_EQ(v, kLogvarMax);
  for (auto& v : bias.mutable_values()) v = -50.0;
  const Tensor low = encode(m, images(2, a, 1)).logvar;
  for (double v : low.values()) EXPECT_EQ(v, kLogvarMin);
}

TEST(Reparameterize, ClosedForms) {
  const Tensor mu({1, 3}, {0.5, -1.0, 2.0});
  const Tensor zero({1, 3}), ones = Tensor::full({1, 3}, 1.0);
  const Tensor z0 = reparameterize({mu, zero}, zero);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(z0[i], mu[i]);
  const Tensor lv({1, 3}, {0.0, std::log(4.0), -std::log(4.0)});
  const Tensor z1 = reparameterize({mu, lv}, ones);
  EXPECT_NEAR(z1[0], 1.5, 1e-12);
  EXPECT_NEAR(z1[1], 1.0, 1e-12);
  EXPECT_NEAR(z1[2], 2.5, 1e-12);
  EXPECT_THROW(reparameterize({mu, lv}, Tensor({1, 2})), DimensionError);
}

TEST(Reparameterize, MonteCarloMoments) {
  const std::size_t n = 100000;
  const double mu_v = 1.5, logvar_v = std::log(0.25);
  Rng rng(11);
  const Tensor z = reparameterize({Tensor::full({n, 1}, mu_v), Tensor::full({n, 1}, logvar_v)},
                                  normal_tensor({n, 1}, rng, 1.0));
  double m = 0, s2 = 0;
  for (double v : z.values()) m += v;
  m /= n;
  for (double v : z.values()) s2 += (v - m) * (v - m);
  EXPECT_NEAR(m, mu_v, 0.03 * mu_v);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.5, 0.03 * 0.5);
}

TEST(Reparameterize, NoiseCarriesNoGradient) {
  Graph g;
  const Tensor mu = g.leaf(Tensor({1, 2}, {0.1, 0.2}));
  const Tensor lv = g.leaf(Tensor({1, 2}, {0.0, 0.0}));
  const Tensor eps = g.leaf(Tensor({1, 2}, {1.0, -1.0}));
  const Gradients grads = g.backward(sum(reparameterize({mu, lv}, eps)));
  const Tensor ge = grads.of(eps), gm = grads.of(mu), gl = grads.of(lv);
  EXPECT_EQ(ge[0], 0.0);
  EXPECT_EQ(ge[1], 0.0);
  EXPECT_EQ(gm[0], 1.0);
  EXPECT_NEAR(gl[0], 0.5, 1e-12);
  EXPECT_NEAR(gl[1], -0.5, 1e-12);
}

TEST(Generator, OutputDependsOnDomainCode) {
  const Architecture a = small_arch(8);
  const UfdnModel m = init_model(a, 4);
  Rng rng(2);
  const Tensor z = normal_tensor({1, 8}, rng, 1.0);
  const Tensor v({1, 3}, {0.2, 0.5, 0.3});
  const double h = 1e-5;
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor up = v, down = v;
    up.mutable_values()[k] += h;
    down.mutable_values()[k] -= h;
    const Tensor diff = sub(generate(m, z, up), generate(m, z, down));
    double norm = 0;
    for (double d : diff.values()) norm += d * d;
    EXPECT_GT(std::sqrt(norm) / (2 * h), 1e-4) << "slot " << k;
  }
}

TEST(ImageDisc, BothHeadsReachTrunk) {
  const Architecture a = small_arch(16);
  const UfdnModel m = init_model(a, 4);
  const Tensor x = images(2, a, 9);
  for (int head = 0; head < 2; ++head) {
    Graph g;
    const UfdnModel t = m.tracked(g);
    const ImageVerdict v = discriminate_image(t, x);
    const Gradients grads = g.backward(sum(head == 0 ? v.realness : v.domain));
    const Tensor gw = grads.of(t.param(Partition::ImageDisc, "Dx.conv0.w"));
    double norm = 0;
    for (double d : gw.values()) norm += d * d;
    EXPECT_GT(norm, 0.0) << "head " << head;
  }
}

TEST(DomainDisc, SoftmaxRowsSumToOne) {
  const Architecture a = small_arch(8);
  const UfdnModel m = init_model(a, 4);
  Rng rng(3);
  const Tensor p = softmax(discriminate_domain(m, normal_tensor({5, 8}, rng, 1.0)));
  for (std::size_t b = 0; b < 5; ++b)
    EXPECT_NEAR(p[b * 3] + p[b * 3 + 1] + p[b * 3 + 2], 1.0, 1e-12);
}

TEST(Classifier, GradientReachesEncoder) {
  Architecture a = small_arch(8);
  a.num_classes = 10;
  const UfdnModel m = init_model(a, 4);
  EXPECT_EQ(m.params(Partition::Classifier).at("cls.w").shape(), (Shape{8, 10}));
  Graph g;
  const UfdnModel t = m.tracked(g);
  const Tensor logits = classify_aux(t, encode(t, images(3, a, 1)).mu);
  EXPECT_EQ(logits.shape(), (Shape{3, 10}));
  const std::vector<int> labels = {1, 4, 9};
  const Gradients grads = g.backward(softmax_cross_entropy(logits, labels));
  const Tensor gw = grads.of(t.param(Partition::Encoder, "E.conv0.w"));
  double norm = 0;
  for (double d : gw.values()) norm += d * d;
  EXPECT_GT(norm, 0.0);
}

TEST(Model, FrozenPartitionGetsZeroGradient) {
  const Architecture a = small_arch(8);
  const UfdnModel m = init_model(a, 4);
  Graph g;
  const UfdnModel t = m.tracked(g).frozen(Partition::Encoder);
  const Tensor x = images(2, a, 1);
  const Gradients grads = g.backward(sum(generate(t, encode(t, x).mu, code(2, 3, 0))));
  for (const auto& [name, p] : t.params(Partition::Encoder)) EXPECT_FALSE(p.tracked()) << name;
  const Tensor gfc = grads.of(t.param(Partition::Generator, "G.fc.w"));
  double norm = 0;
  for (double d : gfc.values()) norm += d * d;
  EXPECT_GT(norm, 0.0);
}
