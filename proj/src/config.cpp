#include "ufdn/config.hpp"

#include <fstream>
#include <set>

#include "ufdn/errors.hpp"

namespace ufdn {
namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string_view> ok(allowed);
  for (const auto& [key, _] : j.items())
    if (!ok.contains(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

}  // namespace

json to_json(const Architecture& a) {
  return {{"image_size", a.image_size}, {"channels", a.channels},     {"latent_dim", a.latent_dim},
          {"domain_dim", a.domain_dim}, {"attr_dim", a.attr_dim},     {"num_classes", a.num_classes},
          {"enc_widths", a.enc_widths}, {"dx_widths", a.dx_widths}, {"dv_hidden", a.dv_hidden}};
}

Architecture architecture_from_json(const json& j, const std::string& where) {
  check_keys(j, {"image_size", "channels", "latent_dim", "domain_dim", "attr_dim", "num_classes",
                 "enc_widths", "dx_widths", "dv_hidden"}, where);
  Architecture a;
  read(j, "image_size", a.image_size, where);
  read(j, "channels", a.channels, where);
  read(j, "latent_dim", a.latent_dim, where);
  read(j, "domain_dim", a.domain_dim, where);
  read(j, "attr_dim", a.attr_dim, where);
  read(j, "num_classes", a.num_classes, where);
  read(j, "enc_widths", a.enc_widths, where);
  read(j, "dx_widths", a.dx_widths, where);
  read(j, "dv_hidden", a.dv_hidden, where);
  return a;
}

json to_json(const LossWeights& w) {
  return {{"recon", w.recon}, {"kl", w.kl},   {"e_adv", w.e_adv},
          {"g_adv", w.g_adv}, {"cls", w.cls}, {"aux", w.aux}};
}

LossWeights weights_from_json(const json& j, const std::string& where) {
  check_keys(j, {"recon", "kl", "e_adv", "g_adv", "cls", "aux"}, where);
  LossWeights w;
  read(j, "recon", w.recon, where);
  read(j, "kl", w.kl, where);
  read(j, "e_adv", w.e_adv, where);
  read(j, "g_adv", w.g_adv, where);
  read(j, "cls", w.cls, where);
  read(j, "aux", w.aux, where);
  return w;
}

json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"weights", to_json(c.weights)},
          {"disable_dv", c.disable_dv},
          {"disable_dx", c.disable_dx},
          {"uda_enabled", c.uda_enabled},
          {"checkpoint_every", c.checkpoint_every},
          {"label_domains", c.label_domains}};
}

TrainConfig train_config_from_json(const json& j, const std::string& where) {
  check_keys(j, {"steps", "batch_size", "lr", "adam_beta1", "adam_beta2", "adam_eps", "seed",
                 "weights", "disable_dv", "disable_dx", "uda_enabled", "checkpoint_every",
                 "label_domains"}, where);
  TrainConfig c;
  read(j, "steps", c.steps, where);
  read(j, "batch_size", c.batch_size, where);
  read(j, "lr", c.lr, where);
  read(j, "adam_beta1", c.adam_beta1, where);
  read(j, "adam_beta2", c.adam_beta2, where);
  read(j, "adam_eps", c.adam_eps, where);
  read(j, "seed", c.seed, where);
  if (j.contains("weights")) c.weights = weights_from_json(j["weights"], where + ".weights");
  read(j, "disable_dv", c.disable_dv, where);
  read(j, "disable_dx", c.disable_dx, where);
  read(j, "uda_enabled", c.uda_enabled, where);
  read(j, "checkpoint_every", c.checkpoint_every, where);
  read(j, "label_domains", c.label_domains, where);
  return c;
}

void RunConfig::validate() const {
  if (data.corpus.empty()) throw ConfigError("data.corpus is required");
  if (data.domains == 0) throw ConfigError("data.domains is required");
  if (data.domains != arch.domain_dim)
    throw ConfigError("data.domains (" + std::to_string(data.domains) + ") differs from arch.domain_dim (" +
                      std::to_string(arch.domain_dim) + ")");
  if (data.image_size != arch.image_size)
    throw ConfigError("data.image_size differs from arch.image_size");
  arch.resolved();
  train.validate();
  if (train.uda_enabled && !arch.has_classifier())
    throw ConfigError("train.uda_enabled needs arch.num_classes > 0");
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"arch", "train", "data", "eval"}, "config");
  RunConfig rc;
  if (j.contains("arch")) rc.arch = architecture_from_json(j["arch"]);
  if (j.contains("train")) rc.train = train_config_from_json(j["train"]);
  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, {"corpus", "domains", "image_size"}, "data");
    read(d, "corpus", rc.data.corpus, "data");
    read(d, "domains", rc.data.domains, "data");
    read(d, "image_size", rc.data.image_size, "data");
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    check_keys(e, {"heldout_corpus", "probe_seed"}, "eval");
    read(e, "heldout_corpus", rc.eval.heldout_corpus, "eval");
    read(e, "probe_seed", rc.eval.probe_seed, "eval");
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace ufdn
