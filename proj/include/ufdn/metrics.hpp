#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ufdn/data.hpp"
#include "ufdn/nn.hpp"
#include "ufdn/tensor.hpp"

namespace ufdn {

inline constexpr double kPsnrCap = 100.0;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Image metrics take [C,H,W] or [H,W] tensors with values in [0,1] and throw
// DimensionError on a shape mismatch.

double mse(const Tensor& a, const Tensor& b);
/// 10 log10(1 / mse) with peak 1; identical images give kPsnrCap.
double psnr(const Tensor& a, const Tensor& b);
/// Mean local SSIM over the valid window positions of each channel, averaged
/// over channels. Throws ConfigError if a side is shorter than the window.
double ssim(const Tensor& a, const Tensor& b);

/// Row-wise argmax with ties resolved to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);
/// Fraction of rows whose argmax equals the label. Throws ValidationError on
/// labels outside [0, C).
double accuracy(const Tensor& logits, std::span<const int> labels);

struct ProbeResult {
  double train_accuracy = 0;
  double heldout_accuracy = 0;
  std::size_t train_count = 0;
  std::size_t heldout_count = 0;
  std::size_t num_classes = 0;
  std::string skipped;  // reason the probe could not run, empty if it did
};

inline constexpr std::size_t kProbeIterations = 500;
inline constexpr double kProbeLearningRate = 0.1;

/// Softmax regression on standardized embeddings [M,d], trained by full-batch
/// gradient descent on a seeded 80/20 split. Labels are 0..C-1. Throws
/// ValidationError if fewer than two classes occur or M < 10 C.
ProbeResult linear_probe(const Tensor& embeddings, std::span<const int> labels, std::uint64_t seed);

/// Posterior means of every corpus sample, [M,latent_dim], in sample order.
Tensor embed_corpus(const UfdnModel& model, const MultiDomainCorpus& corpus);

/// CSV: header, then sprite_id,domain,class,mu_0..mu_{d-1} per sample.
void export_embeddings(const UfdnModel& model, const MultiDomainCorpus& corpus,
                       const std::filesystem::path& path);

/// Deterministic translation: encode to mu, decode under `code`.
Tensor translate_images(const UfdnModel& model, const Tensor& images, const DomainVector& code);

struct PairScore {
  int source = 0;
  int target = 0;
  std::size_t count = 0;
  double ssim = 0, mse = 0, psnr = 0;
  // The untranslated input scored against the same ground truth.
  double identity_ssim = 0, identity_mse = 0, identity_psnr = 0;
};

struct MetricReport {
  std::vector<PairScore> pairs;
  PairScore aggregate;  // means over all scored images; source/target unused
  std::vector<double> class_accuracy;        // per domain; empty without a classifier
  std::vector<std::size_t> class_counts;
  ProbeResult domain_probe;
  ProbeResult class_probe;
  std::size_t samples = 0;
  std::size_t sprites = 0;

  /// key=value lines.
  std::string to_text() const;
};

/// Scores every ordered domain pair against the paired ground truth, the
/// auxiliary classifier per domain if present, and linear probes on mu.
/// Attribute slots of target codes copy the source sample's attributes.
MetricReport evaluate_model(const UfdnModel& model, const MultiDomainCorpus& corpus,
                            std::uint64_t probe_seed);

}  // namespace ufdn
