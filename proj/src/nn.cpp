#include "ufdn/nn.hpp"

#include <bit>
#include <cmath>

#include "ufdn/errors.hpp"
#include "ufdn/ops.hpp"
#include "ufdn/rng.hpp"

namespace ufdn {
namespace {

constexpr std::size_t kKernel = 4;
constexpr ConvGeometry kDown{2, 1};

const std::vector<std::size_t> kBaseEncoderWidths = {32, 64, 128, 256};

std::vector<std::size_t> default_widths(std::size_t count) {
  std::vector<std::size_t> w;
  for (std::size_t i = 0; i < count; ++i)
    w.push_back(i < kBaseEncoderWidths.size() ? kBaseEncoderWidths[i] : kBaseEncoderWidths.back());
  return w;
}

Tensor affine(const UfdnModel& m, Partition p, const std::string& name, const Tensor& x) {
  return add_bias(matmul(x, m.param(p, name + ".w")), m.param(p, name + ".b"));
}

Tensor flatten(const Tensor& x) { return reshape(x, {x.dim(0), x.size() / x.dim(0)}); }

void check_image(const Architecture& arch, const Tensor& x, const char* who) {
  if (x.rank() != 4 || x.dim(1) != arch.channels || x.dim(2) != arch.image_size ||
      x.dim(3) != arch.image_size)
    throw DimensionError(std::string(who) + ": expected [B," + std::to_string(arch.channels) + "," +
                         std::to_string(arch.image_size) + "," + std::to_string(arch.image_size) +
                         "], got " + shape_str(x.shape()));
}

void check_latent(const Architecture& arch, const Tensor& z, const char* who) {
  if (z.rank() != 2 || z.dim(1) != arch.latent_dim)
    throw DimensionError(std::string(who) + ": expected latent [B," +
                         std::to_string(arch.latent_dim) + "], got " + shape_str(z.shape()));
}

}  // namespace

std::size_t Architecture::stages() const {
  return static_cast<std::size_t>(std::countr_zero(image_size)) - 1;
}

Architecture Architecture::resolved() const {
  if (image_size < 8 || !std::has_single_bit(image_size))
    throw ConfigError("image_size must be a power of two >= 8, got " + std::to_string(image_size));
  if (channels != 1 && channels != 3)
    throw ConfigError("channels must be 1 or 3, got " + std::to_string(channels));
  if (latent_dim < 2) throw ConfigError("latent_dim must be >= 2");
  if (domain_dim < 2) throw ConfigError("domain_dim (N) must be >= 2");
  if (num_classes == 1) throw ConfigError("num_classes must be 0 (disabled) or >= 2");

  Architecture a = *this;
  const std::size_t s = stages();
  if (a.enc_widths.empty()) a.enc_widths = default_widths(s);
  if (a.dx_widths.empty()) a.dx_widths = default_widths(s - 1);
  if (a.enc_widths.size() != s)
    throw ConfigError("enc_widths needs " + std::to_string(s) + " entries for image_size " +
                      std::to_string(image_size));
  if (a.dx_widths.size() != s - 1)
    throw ConfigError("dx_widths needs " + std::to_string(s - 1) + " entries for image_size " +
                      std::to_string(image_size));
  if (a.dv_hidden.empty()) throw ConfigError("dv_hidden needs at least one layer");
  for (auto list : {&a.enc_widths, &a.dx_widths, &a.dv_hidden})
    for (auto w : *list)
      if (w == 0) throw ConfigError("layer widths must be positive");
  return a;
}

std::string_view partition_name(Partition p) {
  switch (p) {
    case Partition::Encoder: return "E";
    case Partition::Generator: return "G";
    case Partition::DomainDisc: return "Dv";
    case Partition::ImageDisc: return "Dx";
    case Partition::Classifier: return "cls";
  }
  return "?";
}

std::vector<LayerSpec> layer_table(const Architecture& raw) {
  const Architecture a = raw.resolved();
  const std::size_t s = a.stages(), k2 = kKernel * kKernel;
  std::vector<LayerSpec> t;

  // Encoder: stride-2 convs down to 2x2, then two affine heads.
  std::size_t in = a.channels;
  for (std::size_t i = 0; i < s; ++i) {
    t.push_back({Partition::Encoder, "E.conv" + std::to_string(i),
                 {a.enc_widths[i], in, kKernel, kKernel}, a.enc_widths[i], in * k2});
    in = a.enc_widths[i];
  }
  const std::size_t enc_flat = in * 4;
  t.push_back({Partition::Encoder, "E.mu", {enc_flat, a.latent_dim}, a.latent_dim, enc_flat});
  t.push_back({Partition::Encoder, "E.logvar", {enc_flat, a.latent_dim}, a.latent_dim, enc_flat});

  // Generator: affine to a 2x2 map, then transposed convs mirroring the encoder.
  const std::size_t g_in = a.latent_dim + a.code_dim();
  t.push_back({Partition::Generator, "G.fc", {g_in, enc_flat}, enc_flat, g_in});
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t from = a.enc_widths[s - 1 - i];
    const std::size_t to = i + 1 < s ? a.enc_widths[s - 2 - i] : a.channels;
    // each output pixel of a stride-2 4x4 transposed conv sees (4/2)^2 taps per channel
    t.push_back({Partition::Generator, "G.tconv" + std::to_string(i),
                 {from, to, kKernel, kKernel}, to, from * k2 / 4});
  }

  // Domain discriminator on the latent.
  in = a.latent_dim;
  for (std::size_t i = 0; i < a.dv_hidden.size(); ++i) {
    t.push_back({Partition::DomainDisc, "Dv.fc" + std::to_string(i), {in, a.dv_hidden[i]},
                 a.dv_hidden[i], in});
    in = a.dv_hidden[i];
  }
  t.push_back({Partition::DomainDisc, "Dv.out", {in, a.code_dim()}, a.code_dim(), in});

  // Image discriminator: convs down to 4x4, realness and domain heads.
  in = a.channels;
  for (std::size_t i = 0; i + 1 < s; ++i) {
    t.push_back({Partition::ImageDisc, "Dx.conv" + std::to_string(i),
                 {a.dx_widths[i], in, kKernel, kKernel}, a.dx_widths[i], in * k2});
    in = a.dx_widths[i];
  }
  const std::size_t dx_flat = in * 16;
  t.push_back({Partition::ImageDisc, "Dx.real", {dx_flat, 1}, 1, dx_flat});
  t.push_back({Partition::ImageDisc, "Dx.domain", {dx_flat, a.code_dim()}, a.code_dim(), dx_flat});

  if (a.has_classifier())
    t.push_back({Partition::Classifier, "cls", {a.latent_dim, a.num_classes}, a.num_classes,
                 a.latent_dim});
  return t;
}

const Tensor& UfdnModel::param(Partition p, const std::string& name) const {
  const auto& m = params(p);
  auto it = m.find(name);
  if (it == m.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t UfdnModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& m : params_)
    for (const auto& [_, t] : m) n += t.size();
  return n;
}

UfdnModel UfdnModel::tracked(Graph& graph) const {
  UfdnModel copy = *this;
  for (auto& m : copy.params_)
    for (auto& [_, t] : m) t = graph.leaf(t);
  return copy;
}

UfdnModel UfdnModel::frozen(Partition p) const {
  UfdnModel copy = *this;
  for (auto& [_, t] : copy.params(p)) t = t.detach();
  return copy;
}

UfdnModel init_model(const Architecture& arch, std::uint64_t seed) {
  UfdnModel model(arch);
  Rng rng(seed);
  for (const auto& layer : layer_table(model.arch())) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(layer.fan_in));
    auto& m = model.params(layer.partition);
    m[layer.name + ".w"] = normal_tensor(layer.weight_shape, rng, stddev);
    m[layer.name + ".b"] = Tensor({layer.bias_size});
  }
  return model;
}

GaussianLatent encode(const UfdnModel& model, const Tensor& x) {
  const auto& a = model.arch();
  check_image(a, x, "encode");
  Tensor h = x;
  for (std::size_t i = 0; i < a.stages(); ++i) {
    const std::string name = "E.conv" + std::to_string(i);
    h = leaky_relu(conv2d(h, model.param(Partition::Encoder, name + ".w"),
                          model.param(Partition::Encoder, name + ".b"), kDown),
                   kLeakySlope);
  }
  h = flatten(h);
  return {affine(model, Partition::Encoder, "E.mu", h),
          clamp(affine(model, Partition::Encoder, "E.logvar", h), kLogvarMin, kLogvarMax)};
}

Tensor reparameterize(const GaussianLatent& latent, const Tensor& noise) {
  if (latent.mu.shape() != latent.logvar.shape() || noise.shape() != latent.mu.shape())
    throw DimensionError("reparameterize: mu " + shape_str(latent.mu.shape()) + ", logvar " +
                         shape_str(latent.logvar.shape()) + ", noise " + shape_str(noise.shape()));
  return add(latent.mu, mul(exp(scale(latent.logvar, 0.5)), noise.detach()));
}

Tensor generate(const UfdnModel& model, const Tensor& z, const Tensor& v) {
  const auto& a = model.arch();
  check_latent(a, z, "generate");
  if (v.rank() != 2 || v.dim(1) != a.code_dim())
    throw ConfigError("generate: domain vector width " +
                      (v.rank() == 2 ? std::to_string(v.dim(1)) : shape_str(v.shape())) +
                      " does not match N+K = " + std::to_string(a.code_dim()));
  if (v.dim(0) != z.dim(0)) throw DimensionError("generate: batch of z and v differ");

  const std::size_t s = a.stages();
  Tensor h = leaky_relu(affine(model, Partition::Generator, "G.fc", concat({z, v}, 1)), kLeakySlope);
  h = reshape(h, {z.dim(0), a.enc_widths.back(), 2, 2});
  for (std::size_t i = 0; i < s; ++i) {
    const std::string name = "G.tconv" + std::to_string(i);
    h = conv2d_transpose(h, model.param(Partition::Generator, name + ".w"),
                         model.param(Partition::Generator, name + ".b"), kDown);
    h = i + 1 < s ? leaky_relu(h, kLeakySlope) : sigmoid(h);
  }
  return h;
}

Tensor discriminate_domain(const UfdnModel& model, const Tensor& z) {
  const auto& a = model.arch();
  check_latent(a, z, "discriminate_domain");
  Tensor h = z;
  for (std::size_t i = 0; i < a.dv_hidden.size(); ++i)
    h = leaky_relu(affine(model, Partition::DomainDisc, "Dv.fc" + std::to_string(i), h), kLeakySlope);
  return affine(model, Partition::DomainDisc, "Dv.out", h);
}

ImageVerdict discriminate_image(const UfdnModel& model, const Tensor& x) {
  const auto& a = model.arch();
  check_image(a, x, "discriminate_image");
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < a.stages(); ++i) {
    const std::string name = "Dx.conv" + std::to_string(i);
    h = leaky_relu(conv2d(h, model.param(Partition::ImageDisc, name + ".w"),
                          model.param(Partition::ImageDisc, name + ".b"), kDown),
                   kLeakySlope);
  }
  h = flatten(h);
  return {affine(model, Partition::ImageDisc, "Dx.real", h),
          affine(model, Partition::ImageDisc, "Dx.domain", h)};
}

Tensor classify_aux(const UfdnModel& model, const Tensor& z) {
  if (!model.arch().has_classifier())
    throw ConfigError("auxiliary classifier is disabled in this architecture");
  check_latent(model.arch(), z, "classify_aux");
  return affine(model, Partition::Classifier, "cls", z);
}

}  // namespace ufdn
