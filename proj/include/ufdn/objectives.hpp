#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "ufdn/batch.hpp"
#include "ufdn/nn.hpp"

namespace ufdn {

struct LossWeights {
  double recon = 1.0;
  double kl = 1.0;
  double e_adv = 1.0;
  double g_adv = 1.0;
  double cls = 1.0;
  double aux = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct ObjectiveConfig {
  LossWeights weights;
  bool uda_enabled = false;  // adds the auxiliary classifier loss to the encoder composite
};

// ---------------------------------------------------------------------------
// Individual loss terms. All return scalar tensors and are batch means.

/// 0.5 * sum_d (mu^2 + exp(logvar) - logvar - 1).
Tensor kl_divergence(const GaussianLatent& latent);

/// Squared Frobenius norm of the difference per sample.
Tensor recon_loss(const Tensor& reconstruction, const Tensor& target);

/// Classification loss of a domain code: softmax cross-entropy over the
/// first `num_domains` columns plus binary cross-entropy per attribute column.
Tensor domain_code_loss(const Tensor& logits, const Tensor& code, std::size_t num_domains);

/// Domain discriminator objective: classify the true domain code.
Tensor loss_domain_disc(const Tensor& domain_logits, const Tensor& v_true, std::size_t num_domains);

/// Encoder objective against the domain discriminator: cross-entropy between
/// the predicted distribution and the uniform one (0.5 per attribute bit).
Tensor loss_encoder_adv(const Tensor& domain_logits, std::size_t num_domains);

struct GanLosses {
  Tensor discriminator;  // -E[log s(real)] - E[log(1 - s(fake))]
  Tensor generator;      // -E[log s(fake)]
};

GanLosses loss_gan(const Tensor& real_logit, const Tensor& fake_logit);
Tensor loss_generator_adv(const Tensor& fake_logit);

/// Domain classification of both the translated (fake) and the real images.
Tensor loss_cls(const Tensor& fake_logits, const Tensor& v_target, const Tensor& real_logits,
                const Tensor& v_true, std::size_t num_domains);

/// Cross-entropy of the auxiliary classifier over rows where mask != 0; zero
/// when the mask is empty.
Tensor loss_aux(const Tensor& class_logits, std::span<const int> labels,
                std::span<const std::uint8_t> mask);

// ---------------------------------------------------------------------------
// Composites: one per parameter partition that is updated.

enum class Composite { DomainDisc, ImageDisc, Encoder, Generator };

/// Named loss values from one step. A term whose weight is zero in the
/// composite that would evaluate it is not computed and stays 0.
struct StepLosses {
  double recon = 0, kl = 0, e_adv = 0, g_adv = 0, dx_adv = 0, dv = 0, cls = 0, aux = 0;
  double loss_e = 0, loss_g = 0, loss_dv = 0, loss_dx = 0;

  /// (name, value) for the logged terms, in log order.
  std::vector<std::pair<std::string, double>> terms() const;
};

using GradientMap = ParamMap;

/// Builds the composite loss on `model`, whose parameters may be graph
/// leaves. Every partition the composite must not move is detached first, so
/// gradients on those partitions are exactly zero. Term values are written
/// into `terms`.
Tensor composite_loss(Composite which, const UfdnModel& model, const Batch& batch,
                      const Tensor& noise, const ObjectiveConfig& config, StepLosses& terms);

/// Partitions a composite's gradient map covers.
std::vector<Partition> composite_partitions(Composite which, const ObjectiveConfig& config);

struct CompositeResult {
  double value = 0;
  GradientMap gradients;  // keys: exactly the parameters of composite_partitions()
};

CompositeResult composite_gradients(Composite which, const UfdnModel& model, const Batch& batch,
                                    const Tensor& noise, const ObjectiveConfig& config,
                                    StepLosses& terms);

struct AssembledObjectives {
  StepLosses losses;
  std::array<GradientMap, 4> gradients;  // indexed by Composite

  const GradientMap& of(Composite c) const { return gradients[static_cast<std::size_t>(c)]; }
};

/// All four composites evaluated on the same parameters, batch and noise.
AssembledObjectives assemble_objectives(const UfdnModel& model, const Batch& batch,
                                        const Tensor& noise, const ObjectiveConfig& config);

/// Throws ValidationError unless v_target's domain slots differ from v_true's
/// in every row.
void validate_batch(const Batch& batch, std::size_t num_domains);

}  // namespace ufdn
