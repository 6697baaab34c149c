#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ufdn/tensor.hpp"

namespace ufdn {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

/// Layer sizes of the four networks and the auxiliary classifier.
///
/// Every stride-2 stage halves the image side; the encoder runs
/// log2(image_size) - 1 stages down to a 2x2 map and the generator mirrors it.
/// The image discriminator stops one stage earlier, at 4x4.
struct Architecture {
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t latent_dim = 64;
  std::size_t domain_dim = 3;  // N
  std::size_t attr_dim = 0;    // K
  std::size_t num_classes = 0; // 0 disables the auxiliary classifier
  std::vector<std::size_t> enc_widths;  // empty: default table
  std::vector<std::size_t> dx_widths;   // empty: default table
  std::vector<std::size_t> dv_hidden = {64, 64};

  std::size_t stages() const;
  std::size_t code_dim() const { return domain_dim + attr_dim; }
  bool has_classifier() const { return num_classes > 0; }

  /// Copy with the default width tables filled in. Throws ConfigError if the
  /// architecture is invalid.
  Architecture resolved() const;

  bool operator==(const Architecture&) const = default;
};

enum class Partition : std::size_t { Encoder, Generator, DomainDisc, ImageDisc, Classifier };
inline constexpr std::size_t kPartitionCount = 5;
inline constexpr std::array<Partition, kPartitionCount> kAllPartitions = {
    Partition::Encoder, Partition::Generator, Partition::DomainDisc, Partition::ImageDisc,
    Partition::Classifier};

std::string_view partition_name(Partition p);

using ParamMap = std::map<std::string, Tensor>;

struct LayerSpec {
  Partition partition;
  std::string name;  // parameters are "<name>.w" and "<name>.b"
  Shape weight_shape;
  std::size_t bias_size;
  std::size_t fan_in;
};

/// Every trainable layer of `arch`, in a fixed order.
std::vector<LayerSpec> layer_table(const Architecture& arch);

class UfdnModel {
 public:
  UfdnModel() = default;
  explicit UfdnModel(Architecture arch) : arch_(arch.resolved()) {}

  const Architecture& arch() const { return arch_; }

  ParamMap& params(Partition p) { return params_[static_cast<std::size_t>(p)]; }
  const ParamMap& params(Partition p) const { return params_[static_cast<std::size_t>(p)]; }
  const Tensor& param(Partition p, const std::string& name) const;

  std::size_t parameter_count() const;

  /// Copy whose parameters are all leaves of `graph`.
  UfdnModel tracked(Graph& graph) const;
  /// Copy with the given partition detached from any graph.
  UfdnModel frozen(Partition p) const;

 private:
  Architecture arch_;
  std::array<ParamMap, kPartitionCount> params_;
};

/// He-normal weights (stddev sqrt(2 / fan_in)), zero biases.
UfdnModel init_model(const Architecture& arch, std::uint64_t seed);

struct GaussianLatent {
  Tensor mu;
  Tensor logvar;  // clamped to [kLogvarMin, kLogvarMax]
};

GaussianLatent encode(const UfdnModel& model, const Tensor& x);

/// z = mu + exp(logvar / 2) * noise; noise is never differentiated.
Tensor reparameterize(const GaussianLatent& latent, const Tensor& noise);

/// Image in (0,1) from latent z [B,latent_dim] and domain code v [B,N+K].
Tensor generate(const UfdnModel& model, const Tensor& z, const Tensor& v);

/// Domain-code logits [B,N+K] predicted from the latent.
Tensor discriminate_domain(const UfdnModel& model, const Tensor& z);

struct ImageVerdict {
  Tensor realness;  // [B,1] logit
  Tensor domain;    // [B,N+K] logits
};

ImageVerdict discriminate_image(const UfdnModel& model, const Tensor& x);

/// Single affine layer latent_dim -> num_classes.
Tensor classify_aux(const UfdnModel& model, const Tensor& z);

}  // namespace ufdn
