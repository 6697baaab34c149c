#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "ufdn/data.hpp"
#include "ufdn/nn.hpp"
#include "ufdn/objectives.hpp"
#include "ufdn/rng.hpp"

namespace ufdn {

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossWeights weights;
  bool disable_dv = false;
  bool disable_dx = false;
  bool uda_enabled = false;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::vector<int> label_domains;    // domains whose class labels training may read; empty: all

  void validate() const;
  /// Loss weights with the ablation flags applied.
  ObjectiveConfig objective() const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdamHyper {
  double lr, beta1, beta2, eps;
};

struct AdamState {
  ParamMap m, v;
  std::uint64_t t = 0;
};

using OptimizerStates = std::array<AdamState, kPartitionCount>;

/// One Adam step on a single tensor with bias correction for step `t` (>= 1).
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::uint64_t t,
                 const AdamHyper& hyper);

/// Advances `state` by one step and updates every parameter of `params`.
void adam_step(ParamMap& params, const GradientMap& grads, AdamState& state, const AdamHyper& hyper);

/// Noise stream for a step, derived from (seed, step index).
Rng step_rng(std::uint64_t seed, std::uint64_t step);

/// Called after each sub-step with the model as updated by it.
using SubStepHook = std::function<void(Composite, const UfdnModel&)>;

/// Sub-steps in the order Dv, Dx, E, G, each recomputing its forward pass on
/// the current parameters. Throws DivergenceError on a non-finite loss.
StepLosses train_step(UfdnModel& model, const Batch& batch, const TrainConfig& config,
                      OptimizerStates& opt, Rng& rng, std::uint64_t step = 0,
                      const SubStepHook& hook = {});

struct TrainState {
  UfdnModel model;
  OptimizerStates opt;
  std::uint64_t step = 0;  // steps completed
};

void save_checkpoint(const TrainState& state, const TrainConfig& config,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  TrainState state;
  TrainConfig config;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds parameters and optimizer moments to 32-bit precision, which is what
/// a checkpoint stores. Applied at every checkpoint so a resumed run and an
/// uninterrupted one see the same values.
void round_to_storage(TrainState& state);

/// One log line: step index, then tab-separated name=value entries.
std::string format_log_line(std::uint64_t step, const StepLosses& losses);

struct LoopOptions {
  std::ostream* log = nullptr;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(std::uint64_t, const StepLosses&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<StepLosses> trace;
  std::vector<std::filesystem::path> checkpoints;
};

/// Trains from `start` (a fresh or resumed state) until config.steps steps are
/// done. Batch order depends only on (seed, step index).
TrainResult train_loop(TrainState start, const MultiDomainCorpus& corpus, const TrainConfig& config,
                       const LoopOptions& options = {});

/// Fresh state: initialized model and empty optimizer moments.
TrainState initial_state(const Architecture& arch, std::uint64_t seed);

}  // namespace ufdn
