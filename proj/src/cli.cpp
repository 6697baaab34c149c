#include "ufdn/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>

#include "CLI11.hpp"

#include "ufdn/config.hpp"
#include "ufdn/data.hpp"
#include "ufdn/errors.hpp"
#include "ufdn/metrics.hpp"
#include "ufdn/ops.hpp"
#include "ufdn/trainer.hpp"

namespace ufdn {
namespace fs = std::filesystem;
namespace {

// ---------------------------------------------------------------------------
// Shared helpers

std::optional<long> parse_int(std::string_view s) {
  long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

int parse_domain(const std::string& s, std::size_t n) {
  for (int d = 0; d < static_cast<int>(n); ++d)
    if (s == domain_name(d)) return d;
  if (const auto v = parse_int(s); v && *v >= 0 && static_cast<std::size_t>(*v) < n) return static_cast<int>(*v);
  throw ConfigError("unknown domain '" + s + "' (model has " + std::to_string(n) + " domains)");
}

DomainVector domain_code(int d, const Architecture& arch, const std::vector<double>& attrs) {
  std::vector<double> bits = attrs;
  if (bits.empty()) bits.assign(arch.attr_dim, 0.0);
  if (bits.size() != arch.attr_dim)
    throw ConfigError("--attr needs " + std::to_string(arch.attr_dim) + " values, got " +
                      std::to_string(bits.size()));
  const DomainVector v = one_hot(d, arch.domain_dim);
  return arch.attr_dim ? extend_with_attributes(v, bits) : v;
}

UfdnModel load_model(const fs::path& ckpt) { return load_checkpoint(ckpt).state.model; }

// Reads an image and checks it fits the model; returns [1,C,S,S].
Tensor load_input(const fs::path& path, const Architecture& arch) {
  const Tensor img = read_pnm(path);
  if (img.dim(0) != arch.channels || img.dim(1) != arch.image_size || img.dim(2) != arch.image_size)
    throw ConfigError("input " + path.string() + " is " + shape_str(img.shape()) + " but the checkpoint expects [" +
                      std::to_string(arch.channels) + "," + std::to_string(arch.image_size) + "," +
                      std::to_string(arch.image_size) + "]");
  return img.with_shape({1, img.dim(0), img.dim(1), img.dim(2)});
}

// Decodes one latent row under one code; returns [C,S,S].
Tensor render(const UfdnModel& model, const Tensor& z, const DomainVector& code) {
  const Tensor v({1, code.values.size()}, code.values);
  const Tensor y = generate(model, z, v);
  return y.with_shape({y.dim(1), y.dim(2), y.dim(3)});
}

Tensor latent_of(const UfdnModel& model, const Tensor& x) { return encode(model, x).mu; }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Commands

struct GenArgs {
  CorpusSpec spec;
  fs::path out;
  bool force = false;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  a.spec.validate();
  const auto corpus = generate_corpus(a.spec, a.out, a.force);
  out << "wrote " << corpus.size() << " images (" << a.spec.n_sprites << " sprites x " << a.spec.num_domains
      << " domains) to " << a.out.string() << '\n';
  return kExitOk;
}

struct TrainArgs {
  fs::path config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::vector<std::string> ablate;
  std::optional<fs::path> resume;
  bool force = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(a.config);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.steps) rc.train.steps = *a.steps;
  for (const auto& mode : a.ablate) {
    if (mode == "dv") rc.train.disable_dv = true;
    else if (mode == "dx") rc.train.disable_dx = true;
    else throw ConfigError("--ablate takes dv or dx, got '" + mode + "'");
  }
  rc.validate();

  fs::path corpus_dir = rc.data.corpus;
  if (corpus_dir.is_relative()) corpus_dir = a.config.parent_path() / corpus_dir;
  const MultiDomainCorpus corpus = load_corpus(corpus_dir);
  if (corpus.num_domains != rc.data.domains)
    throw ConfigError("corpus has " + std::to_string(corpus.num_domains) + " domains but data.domains is " +
                      std::to_string(rc.data.domains));
  if (corpus.image_size != rc.data.image_size)
    throw ConfigError("corpus images are " + std::to_string(corpus.image_size) + " px but data.image_size is " +
                      std::to_string(rc.data.image_size));

  TrainState start;
  if (a.resume) {
    start = load_checkpoint(*a.resume).state;
    if (!(start.model.arch() == rc.arch.resolved()))
      throw ConfigError("checkpoint " + a.resume->string() + " has a different architecture than the config");
  } else {
    start = initial_state(rc.arch, rc.train.seed);
  }
  if (non_empty_dir(a.out) && !a.force)
    throw IoError("output directory " + a.out.string() + " is not empty (use --force)");

  ensure_dir(a.out);
  {
    json resolved = {{"arch", to_json(rc.arch.resolved())},
                     {"train", to_json(rc.train)},
                     {"data", {{"corpus", fs::absolute(corpus_dir).string()},
                               {"domains", rc.data.domains},
                               {"image_size", rc.data.image_size}}},
                     {"eval", {{"heldout_corpus", rc.eval.heldout_corpus}, {"probe_seed", rc.eval.probe_seed}}}};
    std::ofstream f(a.out / "config.json");
    f << resolved.dump(2) << '\n';
    if (!f) throw IoError("cannot write " + (a.out / "config.json").string());
  }
  std::ofstream log(a.out / "train.log");
  if (!log) throw IoError("cannot write " + (a.out / "train.log").string());
  LoopOptions opts;
  opts.log = &log;
  opts.checkpoint_dir = a.out;
  TrainResult r;
  try {
    r = train_loop(std::move(start), corpus, rc.train, opts);
  } catch (const DivergenceError&) {
    log.flush();
    throw;
  }
  out << "trained to step " << r.state.step << "; " << r.checkpoints.size() << " checkpoint(s) in "
      << a.out.string() << '\n';
  return kExitOk;
}

struct TranslateArgs {
  fs::path checkpoint;
  std::vector<fs::path> inputs;
  std::vector<std::string> to;
  std::vector<double> attrs;
  fs::path out;
  bool grid = false;
};

int cmd_translate(const TranslateArgs& a, std::ostream& out) {
  const UfdnModel model = load_model(a.checkpoint);
  const Architecture& arch = model.arch();
  std::vector<int> targets;
  if (a.to.empty())
    for (int d = 0; d < static_cast<int>(arch.domain_dim); ++d) targets.push_back(d);
  for (const auto& t : a.to) targets.push_back(parse_domain(t, arch.domain_dim));
  std::vector<DomainVector> codes;
  for (int d : targets) codes.push_back(domain_code(d, arch, a.attrs));
  std::vector<Tensor> inputs;
  for (const auto& p : a.inputs) inputs.push_back(load_input(p, arch));

  std::vector<Tensor> images;
  for (const Tensor& x : inputs) {
    const Tensor z = latent_of(model, x);
    for (const auto& code : codes) images.push_back(render(model, z, code));
  }
  ensure_dir(a.out);
  if (a.grid) {
    write_pnm(a.out / "grid.ppm", tile_images(images, codes.size()));
    out << "wrote " << (a.out / "grid.ppm").string() << " (" << inputs.size() << " x " << codes.size() << ")\n";
    return kExitOk;
  }
  std::size_t k = 0;
  for (const auto& p : a.inputs)
    for (int d : targets) {
      const fs::path file = a.out / (p.stem().string() + "_to_" + domain_name(d) + (arch.channels == 1 ? ".pgm" : ".ppm"));
      write_pnm(file, images[k++]);
      out << file.string() << '\n';
    }
  return kExitOk;
}

struct InterpolateArgs {
  fs::path checkpoint, input, out;
  std::string from, to;
  std::size_t steps = 9;
  std::vector<double> attrs;
};

int cmd_interpolate(const InterpolateArgs& a, std::ostream& out) {
  if (a.steps < 2) throw ConfigError("--steps must be >= 2");
  const UfdnModel model = load_model(a.checkpoint);
  const Architecture& arch = model.arch();
  const DomainVector v0 = domain_code(parse_domain(a.from, arch.domain_dim), arch, a.attrs);
  const DomainVector v1 = domain_code(parse_domain(a.to, arch.domain_dim), arch, a.attrs);
  const Tensor z = latent_of(model, load_input(a.input, arch));
  std::vector<Tensor> frames;
  for (std::size_t i = 0; i < a.steps; ++i)
    frames.push_back(render(model, z, interpolate_domain(v0, v1, static_cast<double>(i) / (a.steps - 1))));
  ensure_dir(a.out);
  const char* ext = arch.channels == 1 ? ".pgm" : ".ppm";
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu%s", i, ext);
    write_pnm(a.out / name, frames[i]);
  }
  write_pnm(a.out / (std::string("strip") + ext), tile_images(frames, frames.size()));
  out << "wrote " << frames.size() << " frames to " << a.out.string() << '\n';
  return kExitOk;
}

struct ManipulateArgs {
  fs::path checkpoint, input, out;
  std::string base = "0";
  std::vector<std::string> settings;
};

std::size_t slot_index(const std::string& name, const Architecture& arch) {
  const std::size_t n = arch.domain_dim, k = arch.attr_dim;
  for (std::size_t d = 0; d < n; ++d)
    if (name == domain_name(static_cast<int>(d))) return d;
  auto indexed = [&](std::string_view prefix, std::size_t limit, std::size_t offset) -> std::optional<std::size_t> {
    if (!name.starts_with(prefix)) return std::nullopt;
    const auto v = parse_int(std::string_view(name).substr(prefix.size()));
    if (!v) return std::nullopt;
    if (*v < 0 || static_cast<std::size_t>(*v) >= limit)
      throw ConfigError("slot '" + name + "' out of range (" + std::to_string(limit) + " available)");
    return offset + static_cast<std::size_t>(*v);
  };
  if (auto i = indexed("attr", k, n)) return *i;
  if (auto i = indexed("a", k, n)) return *i;
  if (auto i = indexed("d", n, 0)) return *i;
  if (auto i = indexed("", n + k, 0)) return *i;
  throw ConfigError("unknown slot '" + name + "'; use a domain name, d<i>, a<i> or a slot index");
}

DomainVector apply_setting(DomainVector v, const std::string& setting, const Architecture& arch) {
  std::size_t pos = 0;
  while (pos <= setting.size()) {
    const std::size_t comma = std::min(setting.find(',', pos), setting.size());
    const std::string item = setting.substr(pos, comma - pos);
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects slot=value, got '" + item + "'");
    const std::string value = item.substr(eq + 1);
    double x = 0;
    const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), x);
    if (ec != std::errc() || p != value.data() + value.size() || !std::isfinite(x))
      throw ConfigError("slot value '" + value + "' is not a number");
    v.values[slot_index(item.substr(0, eq), arch)] = x;
    pos = comma + 1;
  }
  return v;
}

int cmd_manipulate(const ManipulateArgs& a, std::ostream& out) {
  const UfdnModel model = load_model(a.checkpoint);
  const Architecture& arch = model.arch();
  if (a.settings.empty()) throw ConfigError("manipulate needs at least one --set");
  const DomainVector base = domain_code(parse_domain(a.base, arch.domain_dim), arch, {});
  std::vector<DomainVector> codes;
  for (const auto& s : a.settings) codes.push_back(apply_setting(base, s, arch));
  const Tensor z = latent_of(model, load_input(a.input, arch));
  std::vector<Tensor> images;
  for (const auto& c : codes) images.push_back(render(model, z, c));
  ensure_dir(a.out);
  const char* ext = arch.channels == 1 ? ".pgm" : ".ppm";
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "setting_%03zu%s", i, ext);
    write_pnm(a.out / name, images[i]);
    out << (a.out / name).string() << '\n';
  }
  return kExitOk;
}

struct SampleArgs {
  fs::path checkpoint, out;
  std::size_t count = 4;
  std::uint64_t seed = 0;
};

int cmd_sample(const SampleArgs& a, std::ostream& out) {
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  const UfdnModel model = load_model(a.checkpoint);
  const Architecture& arch = model.arch();
  Rng rng(a.seed);
  const Tensor z = normal_tensor({a.count, arch.latent_dim}, rng);
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < a.count; ++i) {
    const Tensor zi = gather_rows(z, std::vector<std::size_t>{i});
    for (int d = 0; d < static_cast<int>(arch.domain_dim); ++d)
      images.push_back(render(model, zi, domain_code(d, arch, {})));
  }
  if (a.out.has_parent_path()) ensure_dir(a.out.parent_path());
  write_pnm(a.out, tile_images(images, arch.domain_dim));
  out << "wrote " << a.out.string() << " (" << a.count << " x " << arch.domain_dim << ")\n";
  return kExitOk;
}

struct EvaluateArgs {
  fs::path checkpoint, corpus, report;
  std::optional<fs::path> embeddings;
  std::uint64_t probe_seed = 0;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const UfdnModel model = load_model(a.checkpoint);
  const MultiDomainCorpus corpus = load_corpus(a.corpus);
  const Architecture& arch = model.arch();
  if (corpus.num_domains != arch.domain_dim || corpus.image_size != arch.image_size ||
      corpus.channels != arch.channels || corpus.attr_dim != arch.attr_dim)
    throw ConfigError("corpus geometry does not match the checkpoint architecture");
  corpus.pairing();  // translation metrics need it; fail before writing anything
  const MetricReport r = evaluate_model(model, corpus, a.probe_seed);
  const std::string text = r.to_text();
  if (a.report.has_parent_path()) ensure_dir(a.report.parent_path());
  std::ofstream f(a.report);
  f << text;
  if (!f) throw IoError("cannot write " + a.report.string());
  if (a.embeddings) export_embeddings(model, corpus, *a.embeddings);
  out << text;
  return kExitOk;
}

struct GradcheckArgs {
  std::string scope = "all";
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a, const CliEnv& env, std::ostream& out) {
  const auto cases = env.gradcheck_cases ? env.gradcheck_cases(a.seed) : default_gradcheck_cases(a.seed);
  const auto results = run_gradcheck(cases, a.scope);
  std::vector<std::string> offenders;
  for (const auto& r : results) {
    char line[160];
    std::snprintf(line, sizeof line, "%-40s max_rel_error=%s %s", r.name.c_str(), sci(r.max_rel_error).c_str(),
                  r.passed ? "ok" : "FAIL");
    out << line << '\n';
    if (!r.passed) offenders.push_back(r.name);
  }
  out << results.size() << " checks, " << offenders.size() << " failed (tolerance " << sci(kGradSuiteTolerance)
      << ")\n";
  if (offenders.empty()) return kExitOk;
  out << "offenders:";
  for (const auto& o : offenders) out << ' ' << o;
  out << '\n';
  return kExitVerification;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const CliEnv& env) {
  CLI::App app{"Unified feature disentanglement networks on synthetic multi-domain sprites", "ufdn"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Render a paired multi-domain sprite corpus");
  c_gen->add_option("--sprites", gen.spec.n_sprites, "Number of sprite identities")->capture_default_str();
  c_gen->add_option("--domains", gen.spec.num_domains, "Number of domains (2 or 3)")->capture_default_str();
  c_gen->add_option("--size", gen.spec.image_size, "Image side, power of two in [8,64]")->capture_default_str();
  c_gen->add_option("--channels", gen.spec.channels, "1 or 3")->capture_default_str();
  c_gen->add_option("--attributes", gen.spec.attr_dim, "Attribute bits (0 or 1: thick stroke)")->capture_default_str();
  c_gen->add_option("--seed", gen.spec.seed)->capture_default_str();
  c_gen->add_option("--first-id", gen.spec.first_sprite_id, "First sprite identity")->capture_default_str();
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_flag("--force", gen.force, "Write into a non-empty directory");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model from a config file");
  c_train->add_option("--config", train.config, "JSON config")->required();
  c_train->add_option("--out", train.out, "Output directory for checkpoints and the loss log")->required();
  c_train->add_option("--seed", train.seed, "Override train.seed");
  c_train->add_option("--steps", train.steps, "Override train.steps");
  c_train->add_option("--ablate", train.ablate, "Disable a discriminator: dv or dx");
  c_train->add_option("--resume", train.resume, "Continue from a checkpoint");
  c_train->add_flag("--force", train.force, "Write into a non-empty directory");

  TranslateArgs tr;
  auto* c_tr = app.add_subcommand("translate", "Translate images into other domains");
  c_tr->add_option("checkpoint", tr.checkpoint)->required();
  c_tr->add_option("inputs", tr.inputs, "Input PPM/PGM images")->required();
  c_tr->add_option("--to", tr.to, "Target domains (names or indices); all when omitted");
  c_tr->add_option("--attr", tr.attrs, "Attribute values of the target code");
  c_tr->add_option("--out", tr.out)->required();
  c_tr->add_flag("--grid", tr.grid, "Write one grid: row per input, column per domain");

  InterpolateArgs ip;
  auto* c_ip = app.add_subcommand("interpolate", "Decode along a path between two domain codes");
  c_ip->add_option("checkpoint", ip.checkpoint)->required();
  c_ip->add_option("input", ip.input)->required();
  c_ip->add_option("--from", ip.from)->required();
  c_ip->add_option("--to", ip.to)->required();
  c_ip->add_option("--steps", ip.steps, "Number of frames (>= 2)")->capture_default_str();
  c_ip->add_option("--attr", ip.attrs, "Attribute values of both endpoints");
  c_ip->add_option("--out", ip.out)->required();

  ManipulateArgs mp;
  auto* c_mp = app.add_subcommand("manipulate", "Decode with chosen domain-code slot values");
  c_mp->add_option("checkpoint", mp.checkpoint)->required();
  c_mp->add_option("input", mp.input)->required();
  c_mp->add_option("--base", mp.base, "Domain whose one-hot code the settings start from")->capture_default_str();
  c_mp->add_option("--set", mp.settings, "slot=value[,slot=value...]; one image per --set")->required();
  c_mp->add_option("--out", mp.out)->required();

  SampleArgs sm;
  auto* c_sm = app.add_subcommand("sample", "Render random latents under every domain");
  c_sm->add_option("checkpoint", sm.checkpoint)->required();
  c_sm->add_option("--count", sm.count)->capture_default_str();
  c_sm->add_option("--seed", sm.seed)->capture_default_str();
  c_sm->add_option("--out", sm.out, "Output grid image")->required();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Translation metrics, class accuracy and linear probes");
  c_ev->add_option("checkpoint", ev.checkpoint)->required();
  c_ev->add_option("--corpus", ev.corpus)->required();
  c_ev->add_option("--report", ev.report, "key=value report file")->required();
  c_ev->add_option("--embeddings", ev.embeddings, "Also export mu embeddings as CSV");
  c_ev->add_option("--probe-seed", ev.probe_seed)->capture_default_str();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
  c_gc->add_option("--scope", gc.scope, "all or an op name")->capture_default_str();
  c_gc->add_option("--seed", gc.seed)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_gen) return cmd_gen_data(gen, out);
    if (*c_train) return cmd_train(train, out);
    if (*c_tr) return cmd_translate(tr, out);
    if (*c_ip) return cmd_interpolate(ip, out);
    if (*c_mp) return cmd_manipulate(mp, out);
    if (*c_sm) return cmd_sample(sm, out);
    if (*c_ev) return cmd_evaluate(ev, out);
    if (*c_gc) return cmd_gradcheck(gc, env, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const IntegrityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace ufdn
