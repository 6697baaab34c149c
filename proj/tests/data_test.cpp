#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ufdn/data.hpp"
#include "ufdn/errors.hpp"
#include "ufdn/rng.hpp"

using namespace ufdn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ufdn_data_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

TEST(Sprite, DeterministicAndBounded) {
  for (int cls = 0; cls < kGlyphClasses; ++cls) {
    const Tensor a = render_sprite(17, cls, 32, 5), b = render_sprite(17, cls, 32, 5);
    EXPECT_TRUE(bit_equal(a, b));
    EXPECT_EQ(a.shape(), (Shape{1, 32, 32}));
    double ink = 0;
    for (double v : a.values()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      ink += v;
    }
    EXPECT_GT(ink, 10.0) << "class " << cls;
  }
  EXPECT_THROW(render_sprite(0, 10, 32, 0), ValidationError);
  EXPECT_THROW(render_sprite(0, -1, 32, 0), ValidationError);
}

TEST(Sprite, DistinctIdsDiffer) {
  Rng rng(9);
  for (int n = 0; n < 100; ++n) {
    const int cls = static_cast<int>(rng.index(kGlyphClasses));
    const std::size_t a = rng.index(100000), b = a + 1 + rng.index(1000);
    const Tensor x = render_sprite(a, cls, 32, 1), y = render_sprite(b, cls, 32, 1);
    double d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - y[i]) * (x[i] - y[i]);
    ASSERT_GT(d, 0.0) << a << " vs " << b;
  }
}

TEST(DomainTransform, SketchOfConstantIsBlack) {
  const Tensor flat = Tensor::full({1, 16, 16}, 0.7);
  const Tensor edges = apply_domain_transform(flat, 1, 3);
  for (double v : edges.values()) EXPECT_LT(v, 1e-6);
}

TEST(DomainTransform, PaintWithoutTextureIsInversion) {
  const Tensor canvas = render_sprite(4, 3, 16, 2);
  const Tensor paint = apply_domain_transform(canvas, 2, 7, {3, 0.0});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 256; ++i) ASSERT_EQ(paint[c * 256 + i], 1.0 - canvas[i]);
}

TEST(DomainTransform, OutputsStayInUnitRange) {
  Rng rng(1);
  for (int n = 0; n < 1000; ++n) {
    const std::size_t id = rng.index(1 << 20);
    const Tensor canvas = render_sprite(id, static_cast<int>(id % 10), 16, 11, n % 2 == 0);
    for (int d = 0; d < 3; ++d) {
      const Tensor img = apply_domain_transform(canvas, d, id * 3 + static_cast<std::size_t>(d));
      for (double v : img.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    }
  }
  EXPECT_THROW(apply_domain_transform(render_sprite(0, 0, 8, 0), 3, 0), ValidationError);
}

TEST(DomainVector, OneHot) {
  EXPECT_EQ(one_hot(1, 3).values, (std::vector<double>{0, 1, 0}));
  EXPECT_EQ(one_hot(0, 2).values, (std::vector<double>{1, 0}));
  for (std::size_t n = 2; n < 6; ++n)
    for (int c = 0; c < static_cast<int>(n); ++c) {
      double s = 0;
      for (double v : one_hot(c, n).values) s += v;
      EXPECT_EQ(s, 1.0);
    }
  EXPECT_THROW(one_hot(3, 3), ValidationError);
  EXPECT_THROW(one_hot(-1, 3), ValidationError);
}

TEST(DomainVector, Interpolate) {
  const DomainVector a = one_hot(0, 3), b = one_hot(1, 3);
  EXPECT_EQ(interpolate_domain(a, b, 0.0), a);
  EXPECT_EQ(interpolate_domain(a, b, 1.0), b);
  EXPECT_EQ(interpolate_domain(a, b, 0.5).values, (std::vector<double>{0.5, 0.5, 0}));
  for (double t : {0.1, 0.3, 0.77}) {
    double s = 0;
    for (double v : interpolate_domain(a, b, t).values) s += v;
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
  EXPECT_THROW(interpolate_domain(a, one_hot(0, 2), 0.5), ValidationError);
}

TEST(DomainVector, ExtendWithAttributes) {
  const DomainVector v = extend_with_attributes(one_hot(0, 3), {1, 0});
  EXPECT_EQ(v.values, (std::vector<double>{1, 0, 0, 1, 0}));
  EXPECT_EQ(v.domain_slots, 3u);
  EXPECT_EQ(extend_with_attributes(one_hot(2, 3), {}), one_hot(2, 3));
  EXPECT_THROW(extend_with_attributes(v, {1}), ContractError);
}

TEST(Pnm, RoundTripAndRounding) {
  EXPECT_EQ(encode_pixel(0.5), 128);  // 127.5 rounds away from zero
  EXPECT_EQ(encode_pixel(-0.2), 0);
  EXPECT_EQ(encode_pixel(1.3), 255);
  for (int b = 0; b < 256; ++b) EXPECT_EQ(encode_pixel(decode_pixel(static_cast<std::uint8_t>(b))), b);

  const fs::path dir = scratch("pnm");
  fs::create_directories(dir);
  Rng rng(2);
  std::vector<double> bytes(3 * 5 * 7);
  for (auto& v : bytes) v = decode_pixel(static_cast<std::uint8_t>(rng.index(256)));
  const Tensor img({3, 5, 7}, bytes);
  write_pnm(dir / "a.ppm", img);
  EXPECT_TRUE(bit_equal(read_pnm(dir / "a.ppm"), img));
  const Tensor gray({1, 4, 4}, std::vector<double>(16, decode_pixel(42)));
  write_pnm(dir / "g.pgm", gray);
  EXPECT_TRUE(bit_equal(read_pnm(dir / "g.pgm"), gray));
  EXPECT_EQ(slurp(dir / "g.pgm").substr(0, 2), "P5");

  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(read_pnm(dir / "bad.ppm"), FormatError);
  EXPECT_THROW(read_pnm(dir / "missing.ppm"), IoError);
  fs::remove_all(dir);
}

TEST(Corpus, GenerateWritesEveryDomainOfEverySprite) {
  const fs::path dir = scratch("corpus");
  CorpusSpec spec;
  spec.n_sprites = 100;
  spec.image_size = 8;
  spec.seed = 4;
  const MultiDomainCorpus c = generate_corpus(spec, dir);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    files += e.is_regular_file() && e.path().extension() == ".ppm";
  EXPECT_EQ(files, 300u);
  EXPECT_EQ(c.size(), 300u);

  const MultiDomainCorpus loaded = load_corpus(dir);
  ASSERT_EQ(loaded.size(), 300u);
  const auto pairs = loaded.pairing();
  EXPECT_EQ(pairs.size(), 100u);
  for (const auto& [id, row] : pairs) {
    std::set<int> doms;
    for (std::size_t i : row) {
      doms.insert(loaded.samples[i].domain);
      EXPECT_EQ(loaded.samples[i].sprite_id, id);
      EXPECT_EQ(loaded.samples[i].class_label, static_cast<int>(id % 10));
    }
    EXPECT_EQ(doms.size(), 3u);
  }
  // Images survive the 8-bit round trip up to quantization.
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t k = 0; k < c.samples[i].image.size(); ++k)
      ASSERT_NEAR(loaded.samples[i].image[k], c.samples[i].image[k], 0.5 / 255 + 1e-12);

  EXPECT_THROW(generate_corpus(spec, dir), IoError);
  const fs::path again = scratch("corpus_again");
  generate_corpus(spec, again);
  EXPECT_EQ(slurp(dir / "index.json"), slurp(again / "index.json"));
  EXPECT_EQ(slurp(dir / "paint" / "000042.ppm"), slurp(again / "paint" / "000042.ppm"));
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST(Corpus, SpecValidation) {
  CorpusSpec spec;
  spec.image_size = 9;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = {};
  spec.n_sprites = 5;
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Corpus, PairingDetectsMissingDomain) {
  CorpusSpec spec;
  spec.n_sprites = 10;
  spec.image_size = 8;
  MultiDomainCorpus c = make_corpus(spec);
  c.samples.pop_back();
  EXPECT_THROW(c.pairing(), ValidationError);
}

TEST(Corpus, AttributesAreSharedAcrossDomains) {
  CorpusSpec spec;
  spec.n_sprites = 40;
  spec.image_size = 8;
  spec.attr_dim = 1;
  const MultiDomainCorpus c = make_corpus(spec);
  int ones = 0;
  for (const auto& [id, row] : c.pairing()) {
    for (std::size_t i : row) EXPECT_EQ(c.samples[i].attributes, c.samples[row[0]].attributes);
    ones += c.samples[row[0]].attributes[0] == 1.0;
  }
  EXPECT_GT(ones, 5);
  EXPECT_LT(ones, 35);
  EXPECT_EQ(c.code_of(c.samples[0]).values.size(), 4u);
}

TEST(Batches, CountDeterminismAndTargets) {
  CorpusSpec spec;
  spec.n_sprites = 35;
  spec.image_size = 8;
  spec.attr_dim = 1;
  const MultiDomainCorpus c = make_corpus(spec);  // 105 samples
  const auto a = batch_iter(c, 16, 7, 2), b = batch_iter(c, 16, 7, 2), other = batch_iter(c, 16, 7, 3);
  ASSERT_EQ(a.size(), 105u / 16);
  EXPECT_EQ(a[0].sprite_ids, b[0].sprite_ids);
  EXPECT_TRUE(bit_equal(a[3].v_target, b[3].v_target));
  EXPECT_NE(a[0].sprite_ids, other[0].sprite_ids);
  for (const Batch& batch : a) {
    EXPECT_EQ(batch.images.shape(), (Shape{16, 3, 8, 8}));
    for (std::size_t r = 0; r < batch.size(); ++r) {
      EXPECT_NE(batch.domains[r], batch.target_domains[r]);
      EXPECT_EQ(batch.v_true[r * 4 + static_cast<std::size_t>(batch.domains[r])], 1.0);
      EXPECT_EQ(batch.v_target[r * 4 + static_cast<std::size_t>(batch.target_domains[r])], 1.0);
      EXPECT_EQ(batch.label_mask[r], 1);
    }
  }
}

TEST(Batches, LabelMaskFollowsLabelDomains) {
  CorpusSpec spec;
  spec.n_sprites = 20;
  spec.image_size = 8;
  const MultiDomainCorpus c = make_corpus(spec);
  for (const Batch& batch : batch_iter(c, 10, 1, 0, {{0}}))
    for (std::size_t r = 0; r < batch.size(); ++r)
      EXPECT_EQ(batch.label_mask[r], batch.domains[r] == 0 ? 1 : 0);
  EXPECT_THROW(batch_iter(c, 61, 1, 0), ConfigError);
}

TEST(Tile, GridLayout) {
  const Tensor a = Tensor::full({1, 2, 2}, 0.25), b = Tensor::full({1, 2, 2}, 0.75);
  const Tensor g = tile_images({a, b, b}, 2);
  EXPECT_EQ(g.shape(), (Shape{1, 4, 4}));
  EXPECT_EQ(g[0], 0.25);
  EXPECT_EQ(g[2], 0.75);
  EXPECT_EQ(g[8], 0.75);
  EXPECT_EQ(g[10], 0.0);
}
