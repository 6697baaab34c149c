#include "ufdn/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "ufdn/errors.hpp"
#include "ufdn/rng.hpp"

namespace ufdn {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kSupersample = 4;
constexpr double kThinStroke = 0.11;
constexpr double kThickStroke = 0.2;
constexpr double kGlyphExtent = 0.85;   // fraction of the half-canvas the glyph unit spans
constexpr double kPhotoBackground = 0.08;
constexpr std::uint64_t kAttrStream = 0xA77;
constexpr std::uint64_t kTargetStream = 0x7A6;

struct P {
  double x, y;
};

double seg_dist(P p, P a, P b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(p.x - a.x - t * vx, p.y - a.y - t * vy);
}

bool inside_glyph(int cls, P p, double w) {
  auto near = [&](std::initializer_list<std::pair<P, P>> segs) {
    for (const auto& [a, b] : segs)
      if (seg_dist(p, a, b) < w) return true;
    return false;
  };
  const double r = std::hypot(p.x, p.y);
  switch (cls) {
    case 0: return near({{{-0.7, 0}, {0.7, 0}}});
    case 1: return near({{{0, -0.7}, {0, 0.7}}});
    case 2: return near({{{-0.7, 0}, {0.7, 0}}, {{0, -0.7}, {0, 0.7}}});
    case 3: return std::abs(r - 0.55) < w;
    case 4: return near({{{-0.6, 0.6}, {0, -0.7}}, {{0, -0.7}, {0.6, 0.6}}});
    case 5: return near({{{-0.6, -0.6}, {0.6, 0.6}}, {{-0.6, 0.6}, {0.6, -0.6}}});
    case 6:
      return near({{{-0.55, -0.55}, {0.55, -0.55}}, {{0.55, -0.55}, {0.55, 0.55}},
                   {{0.55, 0.55}, {-0.55, 0.55}}, {{-0.55, 0.55}, {-0.55, -0.55}}});
    case 7: return r < 0.34 + w;
    case 8: return near({{{-0.5, -0.7}, {-0.5, 0.6}}, {{-0.5, 0.6}, {0.55, 0.6}}});
    case 9: return near({{{-0.65, -0.6}, {0.65, -0.6}}, {{0, -0.6}, {0, 0.7}}});
    default: return false;
  }
}

void check_size(std::size_t size) {
  if (size < 8 || size > 64 || !std::has_single_bit(size))
    throw ConfigError("image size must be a power of two in [8, 64], got " + std::to_string(size));
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t sprite, int domain) {
  return mix_seed(mix_seed(seed, sprite), static_cast<std::uint64_t>(domain) + 1);
}

}  // namespace

std::string domain_name(int domain) {
  static const char* names[] = {"photo", "sketch", "paint"};
  if (domain < 0 || domain >= kMaxDomains)
    throw ValidationError("unknown domain " + std::to_string(domain));
  return names[domain];
}

Tensor render_sprite(std::size_t sprite_id, int class_label, std::size_t size,
                     std::uint64_t jitter_seed, bool thick) {
  if (class_label < 0 || class_label >= kGlyphClasses)
    throw ValidationError("unknown glyph class " + std::to_string(class_label));
  check_size(size);
  Rng rng(mix_seed(jitter_seed, sprite_id));
  const double dx = rng.uniform(-2.0, 2.0), dy = rng.uniform(-2.0, 2.0);
  const double angle = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
  const double scale = rng.uniform(0.9, 1.1);
  const double half = static_cast<double>(size) / 2.0;
  const double unit = half * kGlyphExtent * scale;
  const double c = std::cos(angle), s = std::sin(angle);
  const double w = thick ? kThickStroke : kThinStroke;

  Tensor out({1, size, size});
  auto px = out.mutable_values();
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      int hits = 0;
      for (int a = 0; a < kSupersample; ++a)
        for (int b = 0; b < kSupersample; ++b) {
          const double y = (static_cast<double>(i) + (a + 0.5) / kSupersample - half - dy) / unit;
          const double x = (static_cast<double>(j) + (b + 0.5) / kSupersample - half - dx) / unit;
          hits += inside_glyph(class_label, {c * x + s * y, -s * x + c * y}, w);
        }
      px[i * size + j] = static_cast<double>(hits) / (kSupersample * kSupersample);
    }
  return out;
}

Tensor apply_domain_transform(const Tensor& canvas, int domain, std::uint64_t noise_seed,
                              const TransformOptions& options) {
  if (canvas.rank() != 3 || canvas.dim(0) != 1 || canvas.dim(1) != canvas.dim(2))
    throw DimensionError("apply_domain_transform: expected [1,S,S], got " + shape_str(canvas.shape()));
  if (domain < 0 || domain >= kMaxDomains)
    throw ValidationError("unknown domain " + std::to_string(domain));
  const std::size_t S = canvas.dim(1), C = options.channels;
  if (C != 1 && C != 3) throw ConfigError("channels must be 1 or 3");
  Rng rng(noise_seed);
  Tensor out({C, S, S});
  auto o = out.mutable_values();
  auto p = [&](std::ptrdiff_t i, std::ptrdiff_t j) {
    const auto n = static_cast<std::ptrdiff_t>(S);
    i = std::clamp<std::ptrdiff_t>(i, 0, n - 1);
    j = std::clamp<std::ptrdiff_t>(j, 0, n - 1);
    return canvas[static_cast<std::size_t>(i) * S + static_cast<std::size_t>(j)];
  };
  auto coord = [&](std::size_t k) { return (static_cast<double>(k) + 0.5) / static_cast<double>(S) * 2 - 1; };

  if (domain == 0) {
    static constexpr double tint[3] = {1.0, 0.8, 0.55};
    const double phi = rng.uniform(0.0, 2 * std::numbers::pi);
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < S; ++j) {
          const double shade = 0.85 + 0.15 * (std::cos(phi) * coord(j) + std::sin(phi) * coord(i)) / std::numbers::sqrt2;
          const double fg = (C == 3 ? tint[ch] : 0.9) * shade;
          const double v = p(i, j);
          o[(ch * S + i) * S + j] = std::clamp(kPhotoBackground + v * (fg - kPhotoBackground), 0.0, 1.0);
        }
  } else if (domain == 1) {
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) {
        const auto a = static_cast<std::ptrdiff_t>(i), b = static_cast<std::ptrdiff_t>(j);
        const double gx = (p(a - 1, b + 1) + 2 * p(a, b + 1) + p(a + 1, b + 1)) -
                          (p(a - 1, b - 1) + 2 * p(a, b - 1) + p(a + 1, b - 1));
        const double gy = (p(a + 1, b - 1) + 2 * p(a + 1, b) + p(a + 1, b + 1)) -
                          (p(a - 1, b - 1) + 2 * p(a - 1, b) + p(a - 1, b + 1));
        const double e = std::min(1.0, 1.5 * std::hypot(gx, gy) / 4.0);
        for (std::size_t ch = 0; ch < C; ++ch) o[(ch * S + i) * S + j] = e;
      }
  } else {
    const double amp = options.texture_amplitude;
    for (std::size_t ch = 0; ch < C; ++ch) {
      double fx[3], fy[3], ph[3];
      for (int k = 0; k < 3; ++k) {
        fx[k] = rng.uniform(-1.5, 1.5);
        fy[k] = rng.uniform(-1.5, 1.5);
        ph[k] = rng.uniform(0.0, 2 * std::numbers::pi);
      }
      for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < S; ++j) {
          double tex = 0;
          for (int k = 0; k < 3; ++k)
            tex += std::sin(std::numbers::pi * (fx[k] * coord(j) + fy[k] * coord(i)) + ph[k]) / 3.0;
          o[(ch * S + i) * S + j] = std::clamp(1.0 - p(i, j) + amp * tex, 0.0, 1.0);
        }
    }
  }
  return out;
}

DomainVector one_hot(int c, std::size_t num_domains) {
  if (c < 0 || static_cast<std::size_t>(c) >= num_domains)
    throw ValidationError("domain " + std::to_string(c) + " out of range for N = " +
                          std::to_string(num_domains));
  DomainVector v{std::vector<double>(num_domains, 0.0), num_domains};
  v.values[static_cast<std::size_t>(c)] = 1.0;
  return v;
}

DomainVector interpolate_domain(const DomainVector& v0, const DomainVector& v1, double t) {
  if (v0.values.size() != v1.values.size() || v0.domain_slots != v1.domain_slots)
    throw ValidationError("interpolate_domain: vectors of different layout");
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("interpolate_domain: t outside [0,1]");
  DomainVector out = v0;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = (1.0 - t) * v0.values[i] + t * v1.values[i];
  return out;
}

DomainVector extend_with_attributes(const DomainVector& v, const std::vector<double>& bits) {
  if (v.attribute_slots() != 0)
    throw ContractError("domain vector already carries attribute slots");
  DomainVector out = v;
  out.values.insert(out.values.end(), bits.begin(), bits.end());
  return out;
}

std::map<std::size_t, std::vector<std::size_t>> MultiDomainCorpus::pairing() const {
  std::map<std::size_t, std::vector<std::size_t>> index;
  std::map<std::size_t, int> classes;
  constexpr std::size_t kMissing = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    auto& row = index.try_emplace(s.sprite_id, num_domains, kMissing).first->second;
    const auto d = static_cast<std::size_t>(s.domain);
    if (row[d] != kMissing)
      throw ValidationError("sprite " + std::to_string(s.sprite_id) + " repeats domain " +
                            std::to_string(s.domain));
    if (classes.try_emplace(s.sprite_id, s.class_label).first->second != s.class_label)
      throw ValidationError("sprite " + std::to_string(s.sprite_id) + " changes class across domains");
    row[d] = i;
  }
  for (const auto& [id, row] : index)
    for (std::size_t d = 0; d < num_domains; ++d)
      if (row[d] == kMissing)
        throw ValidationError("sprite " + std::to_string(id) + " has no image in domain " +
                              std::to_string(d));
  return index;
}

MultiDomainCorpus MultiDomainCorpus::subset(const std::vector<std::size_t>& sprite_ids) const {
  MultiDomainCorpus out = *this;
  out.samples.clear();
  for (const Sample& s : samples)
    if (std::find(sprite_ids.begin(), sprite_ids.end(), s.sprite_id) != sprite_ids.end())
      out.samples.push_back(s);
  return out;
}

DomainVector MultiDomainCorpus::code_of(const Sample& s) const {
  return extend_with_attributes(one_hot(s.domain, num_domains), s.attributes);
}

void CorpusSpec::validate() const {
  check_size(image_size);
  if (n_sprites < 10) throw ConfigError("n_sprites must be >= 10");
  if (num_domains < 2 || num_domains > static_cast<std::size_t>(kMaxDomains))
    throw ConfigError("domains must be 2 or 3");
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  if (attr_dim > 1) throw ConfigError("attr_dim must be 0 or 1");
}

MultiDomainCorpus make_corpus(const CorpusSpec& spec) {
  spec.validate();
  MultiDomainCorpus c{spec.num_domains, spec.attr_dim, spec.image_size, spec.channels, {}};
  const TransformOptions opts{spec.channels};
  for (std::size_t k = 0; k < spec.n_sprites; ++k) {
    const std::size_t id = spec.first_sprite_id + k;
    const int cls = static_cast<int>(id % kGlyphClasses);
    std::vector<double> attrs;
    if (spec.attr_dim == 1) attrs.push_back(static_cast<double>(mix_seed(spec.seed ^ kAttrStream, id) & 1));
    const Tensor canvas = render_sprite(id, cls, spec.image_size, spec.seed, !attrs.empty() && attrs[0] == 1.0);
    for (std::size_t d = 0; d < spec.num_domains; ++d) {
      const int dom = static_cast<int>(d);
      c.samples.push_back({apply_domain_transform(canvas, dom, sample_seed(spec.seed, id, dom), opts),
                           dom, cls, id, attrs});
    }
  }
  return c;
}

std::uint8_t encode_pixel(double v) {
  return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_pnm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw DimensionError("write_pnm: expected [1|3,H,W], got " + shape_str(image.shape()));
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  std::string bytes = (C == 3 ? "P6\n" : "P5\n") + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c)
        bytes.push_back(static_cast<char>(encode_pixel(image[(c * H + i) * W + j])));
  std::ofstream f(path, std::ios::binary);
  if (!f || !f.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw IoError("cannot write " + path.string());
}

Tensor read_pnm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::string magic;
  std::size_t W = 0, H = 0, maxval = 0;
  f >> magic >> W >> H >> maxval;
  if ((magic != "P6" && magic != "P5") || maxval != 255 || W == 0 || H == 0)
    throw FormatError(path.string() + ": not a binary 8-bit PPM/PGM");
  f.get();
  const std::size_t C = magic == "P6" ? 3 : 1;
  std::vector<char> raw(C * H * W);
  if (!f.read(raw.data(), static_cast<std::streamsize>(raw.size())))
    throw FormatError(path.string() + ": truncated pixel data");
  std::vector<double> v(raw.size());
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c)
        v[(c * H + i) * W + j] = decode_pixel(static_cast<std::uint8_t>(raw[(i * W + j) * C + c]));
  return Tensor({C, H, W}, std::move(v));
}

Tensor tile_images(const std::vector<Tensor>& images, std::size_t cols) {
  if (images.empty() || cols == 0) throw ValidationError("tile_images: nothing to tile");
  const Shape& s = images.front().shape();
  const std::size_t C = s[0], H = s[1], W = s[2];
  const std::size_t rows = (images.size() + cols - 1) / cols;
  Tensor grid({C, rows * H, cols * W});
  auto g = grid.mutable_values();
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].shape() != s) throw DimensionError("tile_images: mixed image shapes");
    const std::size_t r = n / cols, q = n % cols;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          g[(c * rows * H + r * H + i) * cols * W + q * W + j] = images[n][(c * H + i) * W + j];
  }
  return grid;
}

void write_corpus(const MultiDomainCorpus& corpus, const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_empty(dir, ec) && !force)
    throw IoError("output directory " + dir.string() + " is not empty (use --force)");
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json index;
  index["num_domains"] = corpus.num_domains;
  index["attr_dim"] = corpus.attr_dim;
  index["image_size"] = corpus.image_size;
  index["channels"] = corpus.channels;
  json entries = json::array();
  const char* ext = corpus.channels == 3 ? ".ppm" : ".pgm";
  for (const Sample& s : corpus.samples) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu", s.sprite_id);
    const fs::path rel = fs::path(domain_name(s.domain)) / (std::string(name) + ext);
    fs::create_directories(dir / rel.parent_path(), ec);
    write_pnm(dir / rel, s.image);
    entries.push_back({{"file", rel.generic_string()},
                       {"domain", s.domain},
                       {"class", s.class_label},
                       {"sprite_id", s.sprite_id},
                       {"attributes", s.attributes}});
  }
  index["samples"] = std::move(entries);
  std::ofstream f(dir / "index.json");
  if (!(f << index.dump(1) << '\n')) throw IoError("cannot write index.json in " + dir.string());
}

MultiDomainCorpus load_corpus(const fs::path& dir) {
  std::ifstream f(dir / "index.json");
  if (!f) throw IoError("no index.json in " + dir.string());
  json index;
  try {
    index = json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError("index.json: " + std::string(e.what()));
  }
  MultiDomainCorpus c;
  try {
    c.num_domains = index.at("num_domains");
    c.attr_dim = index.value("attr_dim", std::size_t{0});
    c.image_size = index.at("image_size");
    c.channels = index.at("channels");
    for (const auto& e : index.at("samples")) {
      Sample s;
      s.image = read_pnm(dir / e.at("file").get<std::string>());
      s.domain = e.at("domain");
      s.class_label = e.value("class", -1);
      s.sprite_id = e.at("sprite_id");
      s.attributes = e.value("attributes", std::vector<double>{});
      if (s.image.shape() != Shape{c.channels, c.image_size, c.image_size})
        throw FormatError(e.at("file").get<std::string>() + " has shape " + shape_str(s.image.shape()));
      if (s.domain < 0 || static_cast<std::size_t>(s.domain) >= c.num_domains ||
          s.attributes.size() != c.attr_dim)
        throw FormatError("index entry for " + e.at("file").get<std::string>() + " is inconsistent");
      c.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError("index.json: " + std::string(e.what()));
  }
  c.pairing();
  return c;
}

Tensor stack_images(const MultiDomainCorpus& corpus, const std::vector<std::size_t>& indices) {
  const std::size_t per = corpus.channels * corpus.image_size * corpus.image_size;
  std::vector<double> v;
  v.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    const auto px = corpus.samples.at(i).image.values();
    v.insert(v.end(), px.begin(), px.end());
  }
  return Tensor({indices.size(), corpus.channels, corpus.image_size, corpus.image_size}, std::move(v));
}

std::vector<Batch> batch_iter(const MultiDomainCorpus& corpus, std::size_t batch_size,
                              std::uint64_t seed, std::uint64_t epoch, const BatchOptions& options) {
  if (batch_size == 0 || batch_size > corpus.size())
    throw ConfigError("batch_size " + std::to_string(batch_size) + " does not fit a corpus of " +
                      std::to_string(corpus.size()));
  Rng rng(mix_seed(seed, epoch));
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  Rng target_rng(mix_seed(mix_seed(seed, epoch), kTargetStream));
  const std::size_t N = corpus.num_domains, width = N + corpus.attr_dim;
  std::vector<Batch> batches;
  for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
    Batch b;
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
    b.images = stack_images(corpus, idx);
    std::vector<double> vt(batch_size * width, 0.0), vc(batch_size * width, 0.0);
    for (std::size_t r = 0; r < batch_size; ++r) {
      const Sample& s = corpus.samples[idx[r]];
      const int target = static_cast<int>((static_cast<std::size_t>(s.domain) + 1 + target_rng.index(N - 1)) % N);
      vt[r * width + static_cast<std::size_t>(s.domain)] = 1.0;
      vc[r * width + static_cast<std::size_t>(target)] = 1.0;
      for (std::size_t k = 0; k < corpus.attr_dim; ++k) {
        vt[r * width + N + k] = s.attributes[k];
        vc[r * width + N + k] = static_cast<double>(target_rng.index(2));
      }
      const bool visible = options.label_domains.empty() ||
                           std::find(options.label_domains.begin(), options.label_domains.end(),
                                     s.domain) != options.label_domains.end();
      b.domains.push_back(s.domain);
      b.target_domains.push_back(target);
      b.labels.push_back(s.class_label);
      b.label_mask.push_back(visible && s.class_label >= 0 ? 1 : 0);
      b.sprite_ids.push_back(s.sprite_id);
    }
    b.v_true = Tensor({batch_size, width}, std::move(vt));
    b.v_target = Tensor({batch_size, width}, std::move(vc));
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace ufdn
