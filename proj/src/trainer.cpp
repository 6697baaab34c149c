#include "ufdn/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>

#include "ufdn/config.hpp"
#include "ufdn/errors.hpp"

namespace ufdn {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'U', 'F', 'D', 'N'};
constexpr std::uint8_t kFormatVersion = 1;
constexpr std::uint64_t kNoiseStream = 0x5EED5;

AdamHyper hyper_of(const TrainConfig& c) { return {c.lr, c.adam_beta1, c.adam_beta2, c.adam_eps}; }

void check_finite(std::uint64_t step, const StepLosses& terms, double total, const char* composite) {
  for (const auto& [name, value] : terms.terms())
    if (!std::isfinite(value)) throw DivergenceError(step, name);
  if (!std::isfinite(total)) throw DivergenceError(step, composite);
}

double to_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_map(ParamMap& m) {
  for (auto& [_, t] : m)
    for (double& v : t.mutable_values()) v = to_storage(v);
}

}  // namespace

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("train.steps must be > 0");
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train.lr must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    throw ConfigError("Adam betas must lie in [0,1)");
  if (!(adam_eps > 0)) throw ConfigError("train.adam_eps must be > 0");
  weights.validate();
}

ObjectiveConfig TrainConfig::objective() const {
  ObjectiveConfig o{weights, uda_enabled};
  if (disable_dv) o.weights.e_adv = 0.0;
  if (disable_dx) {
    o.weights.g_adv = 0.0;
    o.weights.cls = 0.0;
  }
  return o;
}

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::uint64_t t,
                 const AdamHyper& h) {
  if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape())
    throw ContractError("adam_update: parameter " + shape_str(param.shape()) + ", gradient " +
                        shape_str(grad.shape()) + ", moments " + shape_str(m.shape()));
  if (t == 0) throw ContractError("adam_update: step counter starts at 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  auto p = param.mutable_values();
  auto mv = m.mutable_values();
  auto vv = v.mutable_values();
  const auto g = grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    mv[i] = h.beta1 * mv[i] + (1.0 - h.beta1) * g[i];
    vv[i] = h.beta2 * vv[i] + (1.0 - h.beta2) * g[i] * g[i];
    p[i] -= h.lr * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + h.eps);
  }
}

void adam_step(ParamMap& params, const GradientMap& grads, AdamState& state, const AdamHyper& hyper) {
  ++state.t;
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ContractError("adam_step: no gradient for '" + name + "'");
    Tensor& m = state.m.try_emplace(name, p.shape()).first->second;
    Tensor& v = state.v.try_emplace(name, p.shape()).first->second;
    adam_update(p, g->second, m, v, state.t, hyper);
  }
}

Rng step_rng(std::uint64_t seed, std::uint64_t step) {
  return Rng(mix_seed(mix_seed(seed, kNoiseStream), step));
}

StepLosses train_step(UfdnModel& model, const Batch& batch, const TrainConfig& config,
                      OptimizerStates& opt, Rng& rng, std::uint64_t step,
                      const SubStepHook& hook) {
  const ObjectiveConfig objective = config.objective();
  validate_batch(batch, model.arch().domain_dim);
  const Tensor noise = normal_tensor({batch.size(), model.arch().latent_dim}, rng);
  const AdamHyper hyper = hyper_of(config);
  StepLosses losses;

  auto sub_step = [&](Composite which, const char* name) {
    const CompositeResult r = composite_gradients(which, model, batch, noise, objective, losses);
    check_finite(step, losses, r.value, name);
    for (Partition p : composite_partitions(which, objective))
      adam_step(model.params(p), r.gradients, opt[static_cast<std::size_t>(p)], hyper);
    if (hook) hook(which, model);
  };
  if (!config.disable_dv) sub_step(Composite::DomainDisc, "loss_dv");
  if (!config.disable_dx) sub_step(Composite::ImageDisc, "loss_dx");
  sub_step(Composite::Encoder, "loss_e");
  sub_step(Composite::Generator, "loss_g");
  return losses;
}

void round_to_storage(TrainState& state) {
  for (Partition p : kAllPartitions) round_map(state.model.params(p));
  for (auto& s : state.opt) {
    round_map(s.m);
    round_map(s.v);
  }
}

void save_checkpoint(const TrainState& state, const TrainConfig& config, const fs::path& path) {
  json tensors = json::array();
  std::vector<const Tensor*> payload;
  std::size_t offset = 0;
  auto add = [&](const std::string& name, const char* kind, const Tensor& t) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", t.shape()}, {"offset", offset}});
    payload.push_back(&t);
    offset += 4 * t.size();
  };
  json adam_t = json::object();
  for (Partition p : kAllPartitions) {
    const std::size_t i = static_cast<std::size_t>(p);
    for (const auto& [name, t] : state.model.params(p)) add(name, "param", t);
    for (const auto& [name, t] : state.opt[i].m) add(name, "adam_m", t);
    for (const auto& [name, t] : state.opt[i].v) add(name, "adam_v", t);
    adam_t[std::string(partition_name(p))] = state.opt[i].t;
  }
  const json manifest = {{"arch", to_json(state.model.arch())},
                         {"config", to_json(config)},
                         {"step", state.step},
                         {"seed", config.seed},
                         {"adam_t", adam_t},
                         {"tensors", tensors},
                         {"payload_bytes", offset}};
  const std::string text = manifest.dump();
  const auto len = static_cast<std::uint32_t>(text.size());

  std::string bytes(kMagic, 4);
  bytes.push_back(static_cast<char>(kFormatVersion));
  bytes.append(reinterpret_cast<const char*>(&len), 4);
  bytes += text;
  bytes.reserve(bytes.size() + offset);
  for (const Tensor* t : payload)
    for (double v : t->values()) {
      const float f = static_cast<float>(v);
      bytes.append(reinterpret_cast<const char*>(&f), 4);
    }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw IoError("cannot write checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  if (static_cast<std::uint8_t>(bytes[4]) != kFormatVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(static_cast<std::uint8_t>(bytes[4])));
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 5, 4);
  if (bytes.size() < 9 + static_cast<std::size_t>(len))
    throw IntegrityError(path.string() + ": manifest truncated");

  json manifest;
  LoadedCheckpoint out;
  try {
    manifest = json::parse(bytes.substr(9, len));
    out.config = train_config_from_json(manifest.at("config"), "config");
    out.state.model = UfdnModel(architecture_from_json(manifest.at("arch")));
    out.state.step = manifest.at("step").get<std::uint64_t>();
    for (Partition p : kAllPartitions)
      out.state.opt[static_cast<std::size_t>(p)].t =
          manifest.at("adam_t").at(std::string(partition_name(p))).get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  }

  std::map<std::string, std::pair<Partition, Shape>> expected;
  for (const auto& layer : layer_table(out.state.model.arch())) {
    expected[layer.name + ".w"] = {layer.partition, layer.weight_shape};
    expected[layer.name + ".b"] = {layer.partition, Shape{layer.bias_size}};
  }

  const char* cursor = bytes.data() + 9 + len;
  const std::size_t available = bytes.size() - 9 - len;
  std::size_t offset = 0;
  try {
    for (const auto& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name");
      const std::string kind = entry.at("kind");
      const Shape shape = entry.at("shape").get<Shape>();
      auto it = expected.find(name);
      if (it == expected.end()) throw IntegrityError("checkpoint tensor '" + name + "' is not part of the architecture");
      const auto& [partition, want] = it->second;
      if (shape != want)
        throw IntegrityError("checkpoint tensor '" + name + "' (" + kind + ") has shape " + shape_str(shape) +
                             ", architecture declares " + shape_str(want));
      if (entry.at("offset").get<std::size_t>() != offset)
        throw IntegrityError("checkpoint tensor '" + name + "' has an inconsistent offset");
      const std::size_t n = shape_size(shape);
      if (offset + 4 * n > available)
        throw IntegrityError(path.string() + ": payload truncated at tensor '" + name + "'");
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, cursor + offset + 4 * i, 4);
        values[i] = f;
      }
      offset += 4 * n;
      Tensor t(shape, std::move(values));
      auto& opt = out.state.opt[static_cast<std::size_t>(partition)];
      ParamMap* target = kind == "param"    ? &out.state.model.params(partition)
                         : kind == "adam_m" ? &opt.m
                         : kind == "adam_v" ? &opt.v
                                            : nullptr;
      if (!target) throw FormatError("checkpoint tensor '" + name + "' has unknown kind '" + kind + "'");
      if (!target->emplace(name, std::move(t)).second)
        throw IntegrityError("checkpoint tensor '" + name + "' (" + kind + ") appears twice");
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed tensor index: " + e.what());
  }
  if (offset != available)
    throw IntegrityError(path.string() + ": payload has " + std::to_string(available) +
                         " bytes, manifest declares " + std::to_string(offset));
  for (const auto& [name, entry] : expected)
    if (!out.state.model.params(entry.first).contains(name))
      throw IntegrityError("checkpoint lacks parameter '" + name + "'");
  return out;
}

std::string format_log_line(std::uint64_t step, const StepLosses& losses) {
  std::string line = std::to_string(step);
  char buf[64];
  for (const auto& [name, value] : losses.terms()) {
    std::snprintf(buf, sizeof buf, "%.17g", value);
    line += "\t" + name + "=" + buf;
  }
  return line;
}

TrainState initial_state(const Architecture& arch, std::uint64_t seed) {
  return {init_model(arch, seed), {}, 0};
}

TrainResult train_loop(TrainState start, const MultiDomainCorpus& corpus, const TrainConfig& config,
                       const LoopOptions& options) {
  config.validate();
  const Architecture& arch = start.model.arch();
  if (corpus.num_domains != arch.domain_dim || corpus.attr_dim != arch.attr_dim)
    throw ConfigError("corpus has N=" + std::to_string(corpus.num_domains) + ", K=" +
                      std::to_string(corpus.attr_dim) + " but the architecture expects N=" +
                      std::to_string(arch.domain_dim) + ", K=" + std::to_string(arch.attr_dim));
  if (corpus.image_size != arch.image_size || corpus.channels != arch.channels)
    throw ConfigError("corpus image geometry does not match the architecture");
  if (config.uda_enabled && !arch.has_classifier())
    throw ConfigError("uda_enabled needs an architecture with num_classes > 0");
  if (config.batch_size > corpus.size())
    throw ConfigError("batch_size exceeds corpus size");

  TrainResult result{std::move(start), {}, {}};
  TrainState& state = result.state;
  const std::size_t per_epoch = corpus.size() / config.batch_size;
  const BatchOptions batch_options{config.label_domains};
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<Batch> batches;

  auto checkpoint = [&](const fs::path& file) {
    round_to_storage(state);
    save_checkpoint(state, config, file);
    result.checkpoints.push_back(file);
  };

  for (std::uint64_t step = state.step; step < config.steps; ++step) {
    if (options.checkpoint_dir && config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%07llu.ufdn", static_cast<unsigned long long>(step));
      checkpoint(*options.checkpoint_dir / name);
    }
    const std::uint64_t epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      batches = batch_iter(corpus, config.batch_size, config.seed, epoch, batch_options);
      cached_epoch = epoch;
    }
    Rng rng = step_rng(config.seed, step);
    const StepLosses losses =
        train_step(state.model, batches[step % per_epoch], config, state.opt, rng, step);
    state.step = step + 1;
    result.trace.push_back(losses);
    if (options.log) *options.log << format_log_line(step, losses) << '\n';
    if (options.on_step) options.on_step(step, losses);
  }
  if (options.checkpoint_dir) checkpoint(*options.checkpoint_dir / "final.ufdn");
  return result;
}

}  // namespace ufdn
