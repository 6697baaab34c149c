#include "ufdn/objectives.hpp"

#include <cmath>

#include "ufdn/errors.hpp"
#include "ufdn/ops.hpp"

namespace ufdn {
namespace {

Tensor batch_mean_of_sum(const Tensor& per_element, std::size_t batch) {
  return scale(sum(per_element), 1.0 / static_cast<double>(batch));
}

void check_code_shapes(const Tensor& logits, const Tensor& code, std::size_t num_domains,
                       const char* who) {
  if (logits.rank() != 2 || logits.shape() != code.shape())
    throw DimensionError(std::string(who) + ": logits " + shape_str(logits.shape()) +
                         " vs code " + shape_str(code.shape()));
  if (num_domains < 2 || num_domains > logits.dim(1))
    throw DimensionError(std::string(who) + ": " + std::to_string(num_domains) +
                         " domains do not fit logits " + shape_str(logits.shape()));
}

// Domain index of each row; rejects rows whose domain slots are not one-hot.
std::vector<int> one_hot_rows(const Tensor& code, std::size_t num_domains) {
  const std::size_t B = code.dim(0), width = code.dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    int hot = -1;
    for (std::size_t i = 0; i < num_domains; ++i) {
      const double v = code[b * width + i];
      if (v == 1.0 && hot < 0)
        hot = static_cast<int>(i);
      else if (v != 0.0)
        hot = -2;
    }
    if (hot < 0)
      throw ValidationError("domain code row " + std::to_string(b) + " is not one-hot");
    out[b] = hot;
  }
  return out;
}

// -mean_b sum_k [t log s(a) + (1-t) log(1-s(a))] over attribute columns.
Tensor attribute_bce(const Tensor& logits, const Tensor& bits) {
  Tensor p = sigmoid(logits);
  Tensor hit = mul(bits, log(p));
  Tensor miss = mul(sub(Tensor::scalar(1.0), bits), log(sub(Tensor::scalar(1.0), p)));
  return neg(batch_mean_of_sum(add(hit, miss), logits.dim(0)));
}

Tensor attribute_bits(const Tensor& code, std::size_t num_domains) {
  const std::size_t B = code.dim(0), width = code.dim(1), K = width - num_domains;
  std::vector<double> v(B * K);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k) {
      const double bit = code[b * width + num_domains + k];
      if (bit != 0.0 && bit != 1.0)
        throw ValidationError("attribute slot " + std::to_string(k) + " of row " +
                              std::to_string(b) + " is not a bit");
      v[b * K + k] = bit;
    }
  return Tensor({B, K}, std::move(v));
}

void check_logit_column(const Tensor& t, const char* who) {
  if (t.rank() != 2 || t.dim(1) != 1)
    throw DimensionError(std::string(who) + ": expected [B,1] logits, got " + shape_str(t.shape()));
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {recon, kl, e_adv, g_adv, cls, aux})
    if (!std::isfinite(w) || w < 0.0)
      throw ConfigError("loss weights must be finite and non-negative");
}

std::vector<std::pair<std::string, double>> StepLosses::terms() const {
  return {{"recon", recon}, {"kl", kl},   {"e_adv", e_adv}, {"g_adv", g_adv},
          {"dx_adv", dx_adv}, {"dv", dv}, {"cls", cls},     {"aux", aux}};
}

Tensor kl_divergence(const GaussianLatent& latent) {
  if (latent.mu.shape() != latent.logvar.shape() || latent.mu.rank() != 2)
    throw DimensionError("kl_divergence: mu " + shape_str(latent.mu.shape()) + " vs logvar " +
                         shape_str(latent.logvar.shape()));
  Tensor per = sub(add(mul(latent.mu, latent.mu), exp(latent.logvar)), add_scalar(latent.logvar, 1.0));
  return scale(batch_mean_of_sum(per, latent.mu.dim(0)), 0.5);
}

Tensor recon_loss(const Tensor& reconstruction, const Tensor& target) {
  if (reconstruction.shape() != target.shape() || reconstruction.rank() == 0)
    throw DimensionError("recon_loss: shapes " + shape_str(reconstruction.shape()) + " and " +
                         shape_str(target.shape()));
  Tensor diff = sub(reconstruction, target);
  return batch_mean_of_sum(mul(diff, diff), reconstruction.dim(0));
}

Tensor domain_code_loss(const Tensor& logits, const Tensor& code, std::size_t num_domains) {
  check_code_shapes(logits, code, num_domains, "domain_code_loss");
  const auto domains = one_hot_rows(code, num_domains);
  const std::size_t width = logits.dim(1);
  if (width == num_domains) return softmax_cross_entropy(logits, domains);
  Tensor ce = softmax_cross_entropy(slice(logits, 1, 0, num_domains), domains);
  Tensor bits = attribute_bits(code, num_domains);
  return add(ce, attribute_bce(slice(logits, 1, num_domains, width - num_domains), bits));
}

Tensor loss_domain_disc(const Tensor& domain_logits, const Tensor& v_true, std::size_t num_domains) {
  return domain_code_loss(domain_logits, v_true, num_domains);
}

Tensor loss_encoder_adv(const Tensor& domain_logits, std::size_t num_domains) {
  if (domain_logits.rank() != 2 || num_domains < 2 || num_domains > domain_logits.dim(1))
    throw DimensionError("loss_encoder_adv: logits " + shape_str(domain_logits.shape()) +
                         " for " + std::to_string(num_domains) + " domains");
  const std::size_t B = domain_logits.dim(0), width = domain_logits.dim(1);
  Tensor uniform = Tensor::full({B, num_domains}, 1.0 / static_cast<double>(num_domains));
  if (width == num_domains) return softmax_cross_entropy(domain_logits, uniform);
  Tensor ce = softmax_cross_entropy(slice(domain_logits, 1, 0, num_domains), uniform);
  Tensor half = Tensor::full({B, width - num_domains}, 0.5);
  return add(ce, attribute_bce(slice(domain_logits, 1, num_domains, width - num_domains), half));
}

Tensor loss_generator_adv(const Tensor& fake_logit) {
  check_logit_column(fake_logit, "loss_generator_adv");
  return neg(mean(log(sigmoid(fake_logit))));
}

GanLosses loss_gan(const Tensor& real_logit, const Tensor& fake_logit) {
  check_logit_column(real_logit, "loss_gan");
  check_logit_column(fake_logit, "loss_gan");
  Tensor real_term = neg(mean(log(sigmoid(real_logit))));
  Tensor fake_term = neg(mean(log(sub(Tensor::scalar(1.0), sigmoid(fake_logit)))));
  return {add(real_term, fake_term), loss_generator_adv(fake_logit)};
}

Tensor loss_cls(const Tensor& fake_logits, const Tensor& v_target, const Tensor& real_logits,
                const Tensor& v_true, std::size_t num_domains) {
  return add(domain_code_loss(fake_logits, v_target, num_domains),
             domain_code_loss(real_logits, v_true, num_domains));
}

Tensor loss_aux(const Tensor& class_logits, std::span<const int> labels,
                std::span<const std::uint8_t> mask) {
  if (class_logits.rank() != 2 || labels.size() != class_logits.dim(0) || mask.size() != labels.size())
    throw DimensionError("loss_aux: logits " + shape_str(class_logits.shape()) + " with " +
                         std::to_string(labels.size()) + " labels and " +
                         std::to_string(mask.size()) + " mask entries");
  std::vector<std::size_t> rows;
  std::vector<int> picked;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_logits.dim(1))
      throw ValidationError("label " + std::to_string(labels[i]) + " out of range for " +
                            std::to_string(class_logits.dim(1)) + " classes");
    rows.push_back(i);
    picked.push_back(labels[i]);
  }
  if (rows.empty()) return Tensor::scalar(0.0);
  return softmax_cross_entropy(gather_rows(class_logits, rows), picked);
}

void validate_batch(const Batch& batch, std::size_t num_domains) {
  const auto& t = batch.v_true;
  const auto& c = batch.v_target;
  if (t.rank() != 2 || t.shape() != c.shape() || t.dim(0) != batch.images.dim(0))
    throw DimensionError("batch domain codes " + shape_str(t.shape()) + " and " +
                         shape_str(c.shape()) + " do not match the image batch");
  const std::size_t width = t.dim(1);
  for (std::size_t b = 0; b < t.dim(0); ++b) {
    bool differs = false;
    for (std::size_t i = 0; i < num_domains; ++i)
      differs |= t[b * width + i] != c[b * width + i];
    if (!differs)
      throw ValidationError("manipulated domain vector equals the true one in row " +
                            std::to_string(b));
  }
}

std::vector<Partition> composite_partitions(Composite which, const ObjectiveConfig& config) {
  switch (which) {
    case Composite::DomainDisc: return {Partition::DomainDisc};
    case Composite::ImageDisc: return {Partition::ImageDisc};
    case Composite::Generator: return {Partition::Generator};
    case Composite::Encoder:
      if (config.uda_enabled) return {Partition::Encoder, Partition::Classifier};
      return {Partition::Encoder};
  }
  return {};
}

Tensor composite_loss(Composite which, const UfdnModel& model, const Batch& batch,
                      const Tensor& noise, const ObjectiveConfig& config, StepLosses& terms) {
  const auto& w = config.weights;
  const std::size_t N = model.arch().domain_dim;
  auto weighted = [](Tensor total, const Tensor& term, double weight) {
    return add(total, scale(term, weight));
  };

  switch (which) {
    case Composite::DomainDisc: {
      const UfdnModel m = model.frozen(Partition::Encoder);
      Tensor z = reparameterize(encode(m, batch.images), noise).detach();
      Tensor loss = loss_domain_disc(discriminate_domain(m, z), batch.v_true, N);
      terms.dv = terms.loss_dv = loss.item();
      return loss;
    }
    case Composite::ImageDisc: {
      const UfdnModel m = model.frozen(Partition::Encoder).frozen(Partition::Generator);
      Tensor z = reparameterize(encode(m, batch.images), noise);
      Tensor fake = generate(m, z, batch.v_target).detach();
      ImageVerdict real_v = discriminate_image(m, batch.images);
      ImageVerdict fake_v = discriminate_image(m, fake);
      Tensor loss = loss_gan(real_v.realness, fake_v.realness).discriminator;
      terms.dx_adv = loss.item();
      if (w.cls > 0) {
        Tensor cls = loss_cls(fake_v.domain, batch.v_target, real_v.domain, batch.v_true, N);
        terms.cls = cls.item();
        loss = weighted(loss, cls, w.cls);
      }
      terms.loss_dx = loss.item();
      return loss;
    }
    case Composite::Encoder: {
      const UfdnModel m = model.frozen(Partition::Generator)
                              .frozen(Partition::DomainDisc)
                              .frozen(Partition::ImageDisc);
      GaussianLatent lat = encode(m, batch.images);
      Tensor z = reparameterize(lat, noise);
      Tensor loss = Tensor::scalar(0.0);
      if (w.recon > 0) {
        Tensor recon = recon_loss(generate(m, z, batch.v_true), batch.images);
        terms.recon = recon.item();
        loss = weighted(loss, recon, w.recon);
      }
      if (w.kl > 0) {
        Tensor kl = kl_divergence(lat);
        terms.kl = kl.item();
        loss = weighted(loss, kl, w.kl);
      }
      if (w.e_adv > 0) {
        Tensor adv = loss_encoder_adv(discriminate_domain(m, z), N);
        terms.e_adv = adv.item();
        loss = weighted(loss, adv, w.e_adv);
      }
      if (config.uda_enabled && w.aux > 0) {
        Tensor aux = loss_aux(classify_aux(m, z), batch.labels, batch.label_mask);
        terms.aux = aux.item();
        loss = weighted(loss, aux, w.aux);
      }
      terms.loss_e = loss.item();
      return loss;
    }
    case Composite::Generator: {
      const UfdnModel m = model.frozen(Partition::Encoder).frozen(Partition::ImageDisc);
      Tensor z = reparameterize(encode(m, batch.images), noise).detach();
      Tensor loss = Tensor::scalar(0.0);
      if (w.recon > 0) {
        Tensor recon = recon_loss(generate(m, z, batch.v_true), batch.images);
        terms.recon = recon.item();
        loss = weighted(loss, recon, w.recon);
      }
      if (w.g_adv > 0 || w.cls > 0) {
        ImageVerdict fake_v = discriminate_image(m, generate(m, z, batch.v_target));
        if (w.g_adv > 0) {
          Tensor adv = loss_generator_adv(fake_v.realness);
          terms.g_adv = adv.item();
          loss = weighted(loss, adv, w.g_adv);
        }
        if (w.cls > 0)
          loss = weighted(loss, domain_code_loss(fake_v.domain, batch.v_target, N), w.cls);
      }
      terms.loss_g = loss.item();
      return loss;
    }
  }
  throw ContractError("unknown composite");
}

CompositeResult composite_gradients(Composite which, const UfdnModel& model, const Batch& batch,
                                    const Tensor& noise, const ObjectiveConfig& config,
                                    StepLosses& terms) {
  Graph graph;
  const UfdnModel tracked = model.tracked(graph);
  Tensor loss = composite_loss(which, tracked, batch, noise, config, terms);
  CompositeResult result;
  result.value = loss.item();
  const bool reached = loss.tracked();
  Gradients grads;
  if (reached) grads = graph.backward(loss);
  for (Partition p : composite_partitions(which, config))
    for (const auto& [name, t] : tracked.params(p))
      result.gradients[name] = reached ? grads.of(t) : Tensor(t.shape());
  return result;
}

AssembledObjectives assemble_objectives(const UfdnModel& model, const Batch& batch,
                                        const Tensor& noise, const ObjectiveConfig& config) {
  config.weights.validate();
  validate_batch(batch, model.arch().domain_dim);
  AssembledObjectives out;
  for (Composite c : {Composite::DomainDisc, Composite::ImageDisc, Composite::Encoder,
                      Composite::Generator})
    out.gradients[static_cast<std::size_t>(c)] =
        composite_gradients(c, model, batch, noise, config, out.losses).gradients;
  return out;
}

}  // namespace ufdn
