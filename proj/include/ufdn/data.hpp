#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ufdn/batch.hpp"
#include "ufdn/tensor.hpp"

namespace ufdn {

inline constexpr int kGlyphClasses = 10;
inline constexpr int kMaxDomains = 3;

/// Name of a synthetic domain: photo, sketch or paint.
std::string domain_name(int domain);

/// Grayscale glyph [1,size,size] in [0,1]. Position, rotation and scale are
/// jittered by a stream derived from (sprite_id, jitter_seed). A thick stroke
/// is the attribute used by attribute-augmented corpora.
Tensor render_sprite(std::size_t sprite_id, int class_label, std::size_t size,
                     std::uint64_t jitter_seed, bool thick = false);

struct TransformOptions {
  std::size_t channels = 3;
  double texture_amplitude = 0.25;  // paint domain only
};

/// Renders a [1,S,S] canvas into domain `domain` as a [C,S,S] image:
/// 0 photo (tinted, smoothly shaded), 1 sketch (edge magnitude),
/// 2 paint (inverted, with a seeded low-frequency texture).
Tensor apply_domain_transform(const Tensor& canvas, int domain, std::uint64_t noise_seed,
                              const TransformOptions& options = {});

/// Domain code: N domain slots followed by attribute slots.
struct DomainVector {
  std::vector<double> values;
  std::size_t domain_slots = 0;

  std::size_t attribute_slots() const { return values.size() - domain_slots; }
  bool operator==(const DomainVector&) const = default;
};

DomainVector one_hot(int c, std::size_t num_domains);
DomainVector interpolate_domain(const DomainVector& v0, const DomainVector& v1, double t);
/// Appends attribute bits; throws ContractError if `v` already carries some.
DomainVector extend_with_attributes(const DomainVector& v, const std::vector<double>& bits);

struct Sample {
  Tensor image;  // [C,S,S]
  int domain = 0;
  int class_label = -1;
  std::size_t sprite_id = 0;
  std::vector<double> attributes;  // length K
};

struct MultiDomainCorpus {
  std::size_t num_domains = 0;
  std::size_t attr_dim = 0;
  std::size_t image_size = 0;
  std::size_t channels = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  /// sprite_id -> sample index per domain. Throws ValidationError if a sprite
  /// misses a domain, repeats one, or disagrees on class across domains.
  std::map<std::size_t, std::vector<std::size_t>> pairing() const;
  /// Corpus restricted to the given sprites (kept in sample order).
  MultiDomainCorpus subset(const std::vector<std::size_t>& sprite_ids) const;
  DomainVector code_of(const Sample& s) const;
};

struct CorpusSpec {
  std::size_t n_sprites = 100;
  std::size_t num_domains = 3;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t attr_dim = 0;  // 0 or 1 (thick stroke)
  std::uint64_t seed = 0;
  std::size_t first_sprite_id = 0;

  void validate() const;
};

MultiDomainCorpus make_corpus(const CorpusSpec& spec);

/// Writes images plus index.json. Refuses a non-empty directory unless
/// `force` is set.
void write_corpus(const MultiDomainCorpus& corpus, const std::filesystem::path& dir, bool force);
MultiDomainCorpus load_corpus(const std::filesystem::path& dir);

inline MultiDomainCorpus generate_corpus(const CorpusSpec& spec, const std::filesystem::path& dir,
                                         bool force = false) {
  spec.validate();
  MultiDomainCorpus c = make_corpus(spec);
  write_corpus(c, dir, force);
  return c;
}

// Binary PPM (3 channels) / PGM (1 channel) with maxval 255.
std::uint8_t encode_pixel(double v);
inline double decode_pixel(std::uint8_t b) { return b / 255.0; }
void write_pnm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pnm(const std::filesystem::path& path);

/// Lays out [C,S,S] images as a grid with `cols` columns.
Tensor tile_images(const std::vector<Tensor>& images, std::size_t cols);

struct BatchOptions {
  /// Domains whose class labels are visible to training; empty means all.
  std::vector<int> label_domains;
};

/// Deterministic shuffle per (seed, epoch); the final short batch is dropped.
std::vector<Batch> batch_iter(const MultiDomainCorpus& corpus, std::size_t batch_size,
                              std::uint64_t seed, std::uint64_t epoch,
                              const BatchOptions& options = {});

/// Stacks images of the given samples into [B,C,S,S].
Tensor stack_images(const MultiDomainCorpus& corpus, const std::vector<std::size_t>& indices);

}  // namespace ufdn
