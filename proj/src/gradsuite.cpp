#include "ufdn/gradsuite.hpp"

#include <cmath>

#include "ufdn/errors.hpp"
#include "ufdn/gradcheck.hpp"
#include "ufdn/nn.hpp"
#include "ufdn/objectives.hpp"
#include "ufdn/ops.hpp"
#include "ufdn/rng.hpp"

namespace ufdn {
namespace {

// Random projection to a scalar so every output slot gets its own upstream gradient.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, uniform_tensor(y.shape(), rng, -1.0, 1.0)));
}

// Keeps values at least `gap` away from a kink where the derivative jumps.
Tensor away_from(Tensor x, double kink, double gap) {
  for (double& v : x.mutable_values())
    if (std::abs(v - kink) < gap) v = kink + (v < kink ? -gap : gap);
  return x;
}

class CaseBuilder {
 public:
  explicit CaseBuilder(std::uint64_t seed) : seed_(seed) {}

  Tensor random(Shape shape, double lo = -1.0, double hi = 1.0) {
    Rng rng(mix_seed(seed_, ++draws_));
    return uniform_tensor(std::move(shape), rng, lo, hi);
  }
  std::uint64_t next_seed() { return mix_seed(seed_, ++draws_); }

  void add(std::string name, std::string kind, ScalarFn f, Tensor x) {
    cases.push_back({std::move(name), std::move(kind),
                     [f = std::move(f), x = std::move(x)] { return grad_check(f, x); }});
  }

  std::vector<GradCheckCase> cases;

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
};

// N = 3 domain slots followed by one attribute bit.
Tensor code_rows(const std::vector<int>& domains, const std::vector<int>& bits) {
  Tensor t({domains.size(), 4});
  auto v = t.mutable_values();
  for (std::size_t i = 0; i < domains.size(); ++i) {
    v[i * 4 + domains[i]] = 1.0;
    v[i * 4 + 3] = bits[i];
  }
  return t;
}

void add_op_cases(CaseBuilder& b) {
  {
    Tensor x = b.random({3, 4}), y = b.random({4, 2});
    const auto s = b.next_seed();
    b.add("matmul[a]", "op", [=](const Tensor& t) { return project(matmul(t, y), s); }, x);
    b.add("matmul[b]", "op", [=](const Tensor& t) { return project(matmul(x, t), s); }, y);
  }
  {
    const ConvGeometry g{2, 1};
    Tensor x = b.random({2, 2, 6, 6}), w = b.random({3, 2, 4, 4}), bias = b.random({3});
    const auto s = b.next_seed();
    b.add("conv2d[x]", "op", [=](const Tensor& t) { return project(conv2d(t, w, bias, g), s); }, x);
    b.add("conv2d[w]", "op", [=](const Tensor& t) { return project(conv2d(x, t, bias, g), s); }, w);
    b.add("conv2d[bias]", "op", [=](const Tensor& t) { return project(conv2d(x, w, t, g), s); }, bias);
  }
  {
    const ConvGeometry g{2, 1};
    Tensor x = b.random({2, 3, 3, 3}), w = b.random({3, 2, 4, 4}), bias = b.random({2});
    const auto s = b.next_seed();
    b.add("conv2d_transpose[x]", "op", [=](const Tensor& t) { return project(conv2d_transpose(t, w, bias, g), s); }, x);
    b.add("conv2d_transpose[w]", "op", [=](const Tensor& t) { return project(conv2d_transpose(x, t, bias, g), s); }, w);
    b.add("conv2d_transpose[bias]", "op", [=](const Tensor& t) { return project(conv2d_transpose(x, w, t, g), s); }, bias);
  }
  {
    Tensor x = b.random({3, 4}, -2, 2), other = b.random({3, 4}), pos = b.random({3, 4}, 0.2, 2.0);
    const auto s = b.next_seed();
    b.add("add", "op", [=](const Tensor& t) { return project(add(t, other), s); }, x);
    b.add("sub[a]", "op", [=](const Tensor& t) { return project(sub(t, other), s); }, x);
    b.add("sub[b]", "op", [=](const Tensor& t) { return project(sub(other, t), s); }, x);
    b.add("mul", "op", [=](const Tensor& t) { return project(mul(t, other), s); }, x);
    b.add("mul[self]", "op", [=](const Tensor& t) { return project(mul(t, t), s); }, x);
    b.add("mul[scalar]", "op", [=](const Tensor& t) { return project(mul(other, t), s); }, Tensor::scalar(0.7));
    b.add("neg", "op", [=](const Tensor& t) { return project(neg(t), s); }, x);
    b.add("scale", "op", [=](const Tensor& t) { return project(scale(t, -1.3), s); }, x);
    b.add("add_scalar", "op", [=](const Tensor& t) { return project(add_scalar(t, 0.4), s); }, x);
    b.add("exp", "op", [=](const Tensor& t) { return project(exp(t), s); }, x);
    b.add("log", "op", [=](const Tensor& t) { return project(log(t), s); }, pos);
    b.add("sigmoid", "op", [=](const Tensor& t) { return project(sigmoid(t), s); }, x);
    b.add("tanh", "op", [=](const Tensor& t) { return project(tanh(t), s); }, x);
    b.add("leaky_relu", "op", [=](const Tensor& t) { return project(leaky_relu(t, kLeakySlope), s); },
          away_from(x, 0.0, 0.05));
    b.add("clamp", "op", [=](const Tensor& t) { return project(clamp(t, -1.0, 1.0), s); },
          away_from(away_from(x, -1.0, 0.05), 1.0, 0.05));
  }
  {
    Tensor x = b.random({2, 3, 2, 2}), bias = b.random({3});
    const auto s = b.next_seed();
    b.add("add_bias[x]", "op", [=](const Tensor& t) { return project(add_bias(t, bias), s); }, x);
    b.add("add_bias[bias]", "op", [=](const Tensor& t) { return project(add_bias(x, t), s); }, bias);
  }
  {
    Tensor x = b.random({2, 3, 4});
    const auto s = b.next_seed();
    b.add("sum[all]", "op", [](const Tensor& t) { return mul(sum(t), sum(t)); }, x);
    b.add("sum[axes]", "op", [=](const Tensor& t) { return project(sum(t, std::vector<std::size_t>{1}), s); }, x);
    b.add("mean[all]", "op", [](const Tensor& t) { return mul(mean(t), mean(t)); }, x);
    b.add("mean[axes]", "op", [=](const Tensor& t) { return project(mean(t, std::vector<std::size_t>{0, 2}), s); }, x);
    b.add("reshape", "op", [=](const Tensor& t) { return project(reshape(t, {6, 4}), s); }, x);
    b.add("slice", "op", [=](const Tensor& t) { return project(slice(t, 2, 1, 2), s); }, x);
    const std::vector<std::size_t> rows = {1, 0, 1};
    b.add("gather_rows", "op", [=](const Tensor& t) { return project(gather_rows(t, rows), s); }, x);
  }
  {
    Tensor a = b.random({2, 3}), c = b.random({2, 2});
    const auto s = b.next_seed();
    b.add("concat[first]", "op", [=](const Tensor& t) { return project(concat({t, c}, 1), s); }, a);
    b.add("concat[second]", "op", [=](const Tensor& t) { return project(concat({a, t}, 1), s); }, c);
  }
  {
    Tensor logits = b.random({4, 3}, -3, 3);
    Tensor target({4, 3}, {0.2, 0.3, 0.5, 1, 0, 0, 0, 0, 1, 1.0 / 3, 1.0 / 3, 1.0 / 3});
    const std::vector<int> classes = {2, 0, 1, 1};
    b.add("softmax_cross_entropy[distribution]", "op",
          [=](const Tensor& t) { return softmax_cross_entropy(t, target); }, logits);
    b.add("softmax_cross_entropy[index]", "op",
          [=](const Tensor& t) { return softmax_cross_entropy(t, classes); }, logits);
  }
}

void add_loss_cases(CaseBuilder& b) {
  {
    Tensor mu = b.random({3, 4}, -2, 2), lv = b.random({3, 4}, -2, 2), noise = b.random({3, 4});
    const auto s = b.next_seed();
    b.add("kl_divergence[mu]", "loss", [=](const Tensor& t) { return kl_divergence({t, lv}); }, mu);
    b.add("kl_divergence[logvar]", "loss", [=](const Tensor& t) { return kl_divergence({mu, t}); }, lv);
    b.add("reparameterize[mu]", "loss", [=](const Tensor& t) { return project(reparameterize({t, lv}, noise), s); }, mu);
    b.add("reparameterize[logvar]", "loss", [=](const Tensor& t) { return project(reparameterize({mu, t}, noise), s); }, lv);
  }
  {
    Tensor x = b.random({2, 3, 4, 4}, 0, 1), target = b.random({2, 3, 4, 4}, 0, 1);
    b.add("recon_loss", "loss", [=](const Tensor& t) { return recon_loss(t, target); }, x);
  }
  {
    const std::vector<int> dom = {0, 2, 1}, bits = {1, 0, 1}, target_dom = {1, 0, 2};
    const Tensor v_true = code_rows(dom, bits), v_target = code_rows(target_dom, {0, 0, 1});
    Tensor logits = b.random({3, 4}, -2, 2), other = b.random({3, 4}, -2, 2);
    b.add("loss_domain_disc", "loss", [=](const Tensor& t) { return loss_domain_disc(t, v_true, 3); }, logits);
    b.add("loss_encoder_adv", "loss", [=](const Tensor& t) { return loss_encoder_adv(t, 3); }, logits);
    b.add("loss_cls[fake]", "loss", [=](const Tensor& t) { return loss_cls(t, v_target, other, v_true, 3); }, logits);
    b.add("loss_cls[real]", "loss", [=](const Tensor& t) { return loss_cls(other, v_target, t, v_true, 3); }, logits);
  }
  {
    Tensor real = b.random({4, 1}, -2, 2), fake = b.random({4, 1}, -2, 2);
    b.add("loss_gan[real]", "loss", [=](const Tensor& t) { return loss_gan(t, fake).discriminator; }, real);
    b.add("loss_gan[fake]", "loss", [=](const Tensor& t) { return loss_gan(real, t).discriminator; }, fake);
    b.add("loss_generator_adv", "loss", [=](const Tensor& t) { return loss_generator_adv(t); }, fake);
  }
  {
    Tensor logits = b.random({5, 4}, -2, 2);
    const std::vector<int> labels = {3, 0, -1, 2, 1};
    const std::vector<std::uint8_t> mask = {1, 1, 0, 0, 1};
    b.add("loss_aux", "loss", [=](const Tensor& t) { return loss_aux(t, labels, mask); }, logits);
  }
}

// Composite objectives of a tiny model, differentiated with respect to one
// parameter tensor of the partition each composite updates.
void add_composite_cases(CaseBuilder& b) {
  Architecture arch;
  arch.image_size = 8;
  arch.channels = 3;
  arch.latent_dim = 4;
  arch.domain_dim = 3;
  arch.attr_dim = 1;
  arch.num_classes = 3;
  arch.enc_widths = {2, 2};
  arch.dx_widths = {2};
  arch.dv_hidden = {5};
  const UfdnModel model = init_model(arch, b.next_seed());

  Batch batch;
  batch.images = b.random({2, 3, 8, 8}, 0, 1);
  batch.domains = {0, 2};
  batch.target_domains = {1, 0};
  batch.v_true = code_rows(batch.domains, {1, 0});
  batch.v_target = code_rows(batch.target_domains, {0, 0});
  batch.labels = {2, 1};
  batch.label_mask = {1, 1};
  batch.sprite_ids = {0, 1};
  const Tensor noise = b.random({2, 4});
  const ObjectiveConfig config{LossWeights{}, true};

  struct Target {
    const char* name;
    Composite which;
    Partition partition;
    const char* param;
  };
  const Target targets[] = {
      {"composite.domain_disc[Dv.out.w]", Composite::DomainDisc, Partition::DomainDisc, "Dv.out.w"},
      {"composite.image_disc[Dx.conv0.w]", Composite::ImageDisc, Partition::ImageDisc, "Dx.conv0.w"},
      {"composite.encoder[E.conv0.w]", Composite::Encoder, Partition::Encoder, "E.conv0.w"},
      {"composite.encoder[cls.w]", Composite::Encoder, Partition::Classifier, "cls.w"},
      {"composite.generator[G.fc.w]", Composite::Generator, Partition::Generator, "G.fc.w"},
  };
  for (const Target& t : targets) {
    auto f = [=](const Tensor& p) {
      UfdnModel m = model;
      m.params(t.partition)[t.param] = p;
      StepLosses terms;
      return composite_loss(t.which, m, batch, noise, config, terms);
    };
    b.add(t.name, "composite", f, model.param(t.partition, t.param));
  }
}

}  // namespace

std::string_view case_op(std::string_view name) {
  const auto bracket = name.find('[');
  return bracket == std::string_view::npos ? name : name.substr(0, bracket);
}

std::vector<GradCheckCase> default_gradcheck_cases(std::uint64_t seed) {
  CaseBuilder b(seed);
  add_op_cases(b);
  add_loss_cases(b);
  add_composite_cases(b);
  return std::move(b.cases);
}

std::vector<GradCheckOutcome> run_gradcheck(const std::vector<GradCheckCase>& cases,
                                            std::string_view scope, double tolerance) {
  std::vector<GradCheckOutcome> out;
  for (const auto& c : cases) {
    if (scope != "all" && case_op(c.name) != scope && c.name != scope) continue;
    const double err = c.run();
    out.push_back({c.name, err, err < tolerance});
  }
  if (out.empty()) throw ConfigError("gradcheck scope '" + std::string(scope) + "' matches no registered check");
  return out;
}

}  // namespace ufdn
