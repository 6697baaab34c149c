#include "ufdn/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ufdn/errors.hpp"
#include "ufdn/ops.hpp"
#include "ufdn/rng.hpp"

namespace ufdn {
namespace {

constexpr std::size_t kEvalChunk = 64;

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  if (a.rank() != 2 && a.rank() != 3)
    throw DimensionError(std::string(what) + ": expected [C,H,W] or [H,W], got " + shape_str(a.shape()));
}

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> g{};
  const double c = (kSsimWindow - 1) / 2.0;
  double total = 0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Valid-region separable Gaussian filter of one H x W plane.
std::vector<double> filter_valid(const double* p, std::size_t h, std::size_t w,
                                 const std::array<double, kSsimWindow>& g) {
  const std::size_t ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) s += g[k] * p[y * w + x + k];
      rows[y * ow + x] = s;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) s += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

double ssim_plane(const double* a, const double* b, std::size_t h, std::size_t w) {
  static const auto g = gaussian_taps();
  const std::size_t n = h * w;
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, g), mu_b = filter_valid(b, h, w, g);
  const auto e_aa = filter_valid(aa.data(), h, w, g), e_bb = filter_valid(bb.data(), h, w, g);
  const auto e_ab = filter_valid(ab.data(), h, w, g);
  double total = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) /
             ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
  }
  return total / static_cast<double>(mu_a.size());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

Tensor chunk_images(const MultiDomainCorpus& corpus, const std::vector<std::size_t>& idx,
                    std::size_t begin, std::size_t end) {
  return stack_images(corpus, std::vector<std::size_t>(idx.begin() + begin, idx.begin() + end));
}

Tensor image_at(const Tensor& batch, std::size_t i) {
  const std::size_t per = batch.size() / batch.dim(0);
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const auto v = batch.values();
  return Tensor(s, std::vector<double>(v.begin() + i * per, v.begin() + (i + 1) * per));
}

Tensor codes_tensor(const std::vector<DomainVector>& codes) {
  const std::size_t d = codes.front().values.size();
  std::vector<double> v;
  v.reserve(codes.size() * d);
  for (const auto& c : codes) v.insert(v.end(), c.values.begin(), c.values.end());
  return Tensor({codes.size(), d}, std::move(v));
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mse");
  const auto x = a.values(), y = b.values();
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double e = mse(a, b);
  if (e == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / e));
}

double ssim(const Tensor& a, const Tensor& b) {
  check_same(a, b, "ssim");
  const std::size_t c = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  if (h < kSsimWindow || w < kSsimWindow)
    throw ConfigError("ssim needs image sides >= " + std::to_string(kSsimWindow) + ", got " +
                      std::to_string(h) + "x" + std::to_string(w));
  double total = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    total += ssim_plane(a.values().data() + ch * h * w, b.values().data() + ch * h * w, h, w);
  return total / static_cast<double>(c);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows: expected [B,C], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  const auto v = logits.values();
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < cols; ++k)
      if (v[r * cols + k] > v[r * cols + best]) best = k;
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  if (labels.size() != pred.size())
    throw DimensionError("accuracy: " + std::to_string(pred.size()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  if (pred.empty()) throw ValidationError("accuracy of an empty batch");
  const int classes = static_cast<int>(logits.dim(1));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ValidationError("label " + std::to_string(labels[i]) + " outside [0," +
                            std::to_string(classes) + ")");
    hits += pred[i] == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ProbeResult linear_probe(const Tensor& embeddings, std::span<const int> labels, std::uint64_t seed) {
  if (embeddings.rank() != 2)
    throw DimensionError("linear_probe: expected [M,d], got " + shape_str(embeddings.shape()));
  const std::size_t m = embeddings.dim(0), d = embeddings.dim(1);
  if (labels.size() != m) throw DimensionError("linear_probe: label count differs from rows");
  std::set<int> distinct;
  for (int l : labels) {
    if (l < 0) throw ValidationError("linear_probe: negative label");
    distinct.insert(l);
  }
  if (distinct.size() < 2) throw ValidationError("linear_probe needs at least two classes");
  const std::size_t c = static_cast<std::size_t>(*distinct.rbegin()) + 1;
  if (m < 10 * c)
    throw ValidationError("linear_probe needs at least " + std::to_string(10 * c) + " rows for " +
                          std::to_string(c) + " classes, got " + std::to_string(m));

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x9E0BE));
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t n_train = (m * 4) / 5;

  // Standardize with training statistics.
  const auto e = embeddings.values();
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += e[order[i] * d + j];
  for (double& v : mean) v /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double t = e[order[i] * d + j] - mean[j];
      sd[j] += t * t;
    }
  for (double& v : sd) {
    v = std::sqrt(v / static_cast<double>(n_train));
    if (v < 1e-12) v = 1.0;
  }
  std::vector<double> x(m * d);
  std::vector<int> y(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = (e[order[i] * d + j] - mean[j]) / sd[j];
    y[i] = labels[order[i]];
  }

  std::vector<double> w(d * c, 0.0), b(c, 0.0), gw(d * c), gb(c), logits(c);
  auto scores = [&](std::size_t i) {
    for (std::size_t k = 0; k < c; ++k) {
      double s = b[k];
      for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * w[j * c + k];
      logits[k] = s;
    }
  };
  for (std::size_t it = 0; it < kProbeIterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n_train; ++i) {
      scores(i);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t k = 0; k < c; ++k) {
        const double g = logits[k] / z - (static_cast<int>(k) == y[i] ? 1.0 : 0.0);
        gb[k] += g;
        for (std::size_t j = 0; j < d; ++j) gw[j * c + k] += g * x[i * d + j];
      }
    }
    const double step = kProbeLearningRate / static_cast<double>(n_train);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= step * gw[k];
    for (std::size_t k = 0; k < c; ++k) b[k] -= step * gb[k];
  }

  auto hit_rate = [&](std::size_t begin, std::size_t end) {
    std::size_t hits = 0;
    for (std::size_t i = begin; i < end; ++i) {
      scores(i);
      hits += static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin()) == y[i];
    }
    return static_cast<double>(hits) / static_cast<double>(end - begin);
  };
  return {hit_rate(0, n_train), hit_rate(n_train, m), n_train, m - n_train, c, {}};
}

Tensor embed_corpus(const UfdnModel& model, const MultiDomainCorpus& corpus) {
  const std::size_t d = model.arch().latent_dim;
  std::vector<double> out;
  out.reserve(corpus.size() * d);
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t s = 0; s < idx.size(); s += kEvalChunk) {
    const Tensor mu = encode(model, chunk_images(corpus, idx, s, std::min(idx.size(), s + kEvalChunk))).mu;
    const auto v = mu.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return Tensor({corpus.size(), d}, std::move(out));
}

void export_embeddings(const UfdnModel& model, const MultiDomainCorpus& corpus,
                       const std::filesystem::path& path) {
  const Tensor mu = embed_corpus(model, corpus);
  const std::size_t d = model.arch().latent_dim;
  std::ostringstream os;
  os << "sprite_id,domain,class";
  for (std::size_t j = 0; j < d; ++j) os << ",mu_" << j;
  os << '\n';
  const auto v = mu.values();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Sample& s = corpus.samples[i];
    os << s.sprite_id << ',' << s.domain << ',' << s.class_label;
    for (std::size_t j = 0; j < d; ++j) os << ',' << fmt(v[i * d + j]);
    os << '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << os.str();
  if (!f) throw IoError("failed writing " + path.string());
}

Tensor translate_images(const UfdnModel& model, const Tensor& images, const DomainVector& code) {
  const std::size_t b = images.dim(0);
  std::vector<double> v;
  v.reserve(b * code.values.size());
  for (std::size_t i = 0; i < b; ++i) v.insert(v.end(), code.values.begin(), code.values.end());
  return generate(model, encode(model, images).mu, Tensor({b, code.values.size()}, std::move(v)));
}

MetricReport evaluate_model(const UfdnModel& model, const MultiDomainCorpus& corpus,
                            std::uint64_t probe_seed) {
  const auto pairing = corpus.pairing();
  const int n = static_cast<int>(corpus.num_domains);
  MetricReport r;
  r.samples = corpus.size();
  r.sprites = pairing.size();

  std::vector<std::vector<std::size_t>> by_domain(n);
  for (const auto& [_, idx] : pairing)
    for (int c = 0; c < n; ++c) by_domain[c].push_back(idx[c]);

  double sum_ssim = 0, sum_mse = 0, sum_psnr = 0, sum_issim = 0, sum_imse = 0, sum_ipsnr = 0;
  std::size_t total = 0;
  for (int c = 0; c < n; ++c)
    for (int t = 0; t < n; ++t) {
      if (t == c) continue;
      PairScore p{c, t};
      const auto& src = by_domain[c];
      for (std::size_t s = 0; s < src.size(); s += kEvalChunk) {
        const std::size_t e = std::min(src.size(), s + kEvalChunk);
        const Tensor in = chunk_images(corpus, src, s, e);
        const Tensor gt = chunk_images(corpus, by_domain[t], s, e);
        std::vector<DomainVector> codes;
        for (std::size_t i = s; i < e; ++i) {
          Sample target = corpus.samples[src[i]];
          target.domain = t;
          codes.push_back(corpus.code_of(target));
        }
        const Tensor out = generate(model, encode(model, in).mu, codes_tensor(codes));
        for (std::size_t i = 0; i < e - s; ++i) {
          const Tensor x = image_at(out, i), g = image_at(gt, i), id = image_at(in, i);
          p.ssim += ssim(x, g);
          p.mse += mse(x, g);
          p.psnr += psnr(x, g);
          p.identity_ssim += ssim(id, g);
          p.identity_mse += mse(id, g);
          p.identity_psnr += psnr(id, g);
        }
      }
      p.count = src.size();
      sum_ssim += p.ssim, sum_mse += p.mse, sum_psnr += p.psnr;
      sum_issim += p.identity_ssim, sum_imse += p.identity_mse, sum_ipsnr += p.identity_psnr;
      total += p.count;
      const double k = static_cast<double>(std::max<std::size_t>(p.count, 1));
      p.ssim /= k, p.mse /= k, p.psnr /= k;
      p.identity_ssim /= k, p.identity_mse /= k, p.identity_psnr /= k;
      r.pairs.push_back(p);
    }
  const double k = static_cast<double>(std::max<std::size_t>(total, 1));
  r.aggregate = {-1, -1, total, sum_ssim / k, sum_mse / k, sum_psnr / k,
                 sum_issim / k, sum_imse / k, sum_ipsnr / k};

  const Tensor mu = embed_corpus(model, corpus);
  if (model.arch().has_classifier()) {
    const auto pred = argmax_rows(classify_aux(model, mu));
    std::vector<std::size_t> hits(n, 0);
    r.class_counts.assign(n, 0);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const Sample& s = corpus.samples[i];
      if (s.class_label < 0) continue;
      ++r.class_counts[s.domain];
      hits[s.domain] += pred[i] == s.class_label;
    }
    for (int c = 0; c < n; ++c)
      r.class_accuracy.push_back(r.class_counts[c] ? static_cast<double>(hits[c]) / r.class_counts[c] : 0.0);
  }

  std::vector<int> domains, classes;
  std::vector<std::size_t> labelled;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    domains.push_back(corpus.samples[i].domain);
    if (corpus.samples[i].class_label >= 0) {
      labelled.push_back(i);
      classes.push_back(corpus.samples[i].class_label);
    }
  }
  auto run_probe = [&](const Tensor& emb, const std::vector<int>& labels) {
    try {
      return linear_probe(emb, labels, probe_seed);
    } catch (const ValidationError& e) {
      ProbeResult p;
      p.skipped = e.what();
      return p;
    }
  };
  r.domain_probe = run_probe(mu, domains);
  r.class_probe = labelled.empty() ? ProbeResult{.skipped = "no class labels"}
                                   : run_probe(gather_rows(mu, labelled), classes);
  return r;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os << "samples=" << samples << '\n' << "sprites=" << sprites << '\n';
  os << "translation.pairs=" << pairs.size() << '\n';
  auto scores = [&](const std::string& key, const PairScore& p) {
    os << key << ".count=" << p.count << '\n'
       << key << ".ssim=" << fmt(p.ssim) << '\n'
       << key << ".mse=" << fmt(p.mse) << '\n'
       << key << ".psnr=" << fmt(p.psnr) << '\n'
       << key << ".identity_ssim=" << fmt(p.identity_ssim) << '\n'
       << key << ".identity_mse=" << fmt(p.identity_mse) << '\n'
       << key << ".identity_psnr=" << fmt(p.identity_psnr) << '\n';
  };
  for (const auto& p : pairs)
    scores("translation." + domain_name(p.source) + "_to_" + domain_name(p.target), p);
  scores("translation.mean", aggregate);
  for (std::size_t c = 0; c < class_accuracy.size(); ++c) {
    os << "accuracy." << domain_name(static_cast<int>(c)) << '=' << fmt(class_accuracy[c]) << '\n';
    os << "accuracy." << domain_name(static_cast<int>(c)) << ".count=" << class_counts[c] << '\n';
  }
  auto probe = [&](const char* key, const ProbeResult& p) {
    if (!p.skipped.empty()) {
      os << "probe." << key << ".skipped=" << p.skipped << '\n';
      return;
    }
    os << "probe." << key << ".heldout_accuracy=" << fmt(p.heldout_accuracy) << '\n'
       << "probe." << key << ".train_accuracy=" << fmt(p.train_accuracy) << '\n'
       << "probe." << key << ".classes=" << p.num_classes << '\n'
       << "probe." << key << ".heldout_count=" << p.heldout_count << '\n';
  };
  probe("domain", domain_probe);
  probe("class", class_probe);
  return os.str();
}

}  // namespace ufdn
