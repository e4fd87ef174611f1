#pragma once

// Dense-supervision training, end-of-dialogue evaluation, paired bootstrap
// significance and ablation orchestration.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbl/baseline.hpp"
#include "pbl/gamedata.hpp"
#include "pbl/listener.hpp"
#include "pbl/nn.hpp"
#include "pbl/pipeline.hpp"

namespace pbl {

// --- losses ----------------------------------------------------------------

// Sum over targets and tokens of -log p(label). Beliefs are T x 3 per
// target; labels hold Label values as ints.
double dense_mle_loss(std::span<const BeliefSequence, kTargetsPerPlayer> beliefs,
                      std::span<const std::vector<int>, kTargetsPerPlayer> labels);
// The same sum restricted to the final token.
double final_token_loss(std::span<const BeliefSequence, kTargetsPerPlayer> beliefs,
                        std::span<const std::vector<int>, kTargetsPerPlayer> labels);

struct Supervision {
  bool dense = true;  // false: only the final token carries a label
};

// --- optimisation ----------------------------------------------------------

// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to 0
// at step `total`.
struct LinearWarmupDecay {
  double peak = 2e-5;
  long warmup = 500;
  long total = 1;
  double at(long step) const;
};

// Adam with decoupled weight decay; parameters flagged decay=false (biases,
// norms) skip the decay term.
class AdamW {
 public:
  AdamW(nn::ParameterSet& params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  void step(double lr);
  long steps() const { return t_; }

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<Eigen::MatrixXd> m_, v_;
  double weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// --- models under training -------------------------------------------------

struct Prediction {
  std::array<Mark, kTargetsPerPlayer> marks{};
  std::array<double, kTargetsPerPlayer> confidence{};
};

class Trainable {
 public:
  virtual ~Trainable() = default;
  virtual nn::ParameterSet& parameters() = 0;
  virtual const nn::ParameterSet& parameters() const = 0;
  // Per-instance loss: a sum over targets and supervised tokens.
  virtual nn::Var loss(nn::Tape& tape, const PreparedExample& example, const Supervision& supervision) const = 0;
  virtual Prediction predict(const PreparedExample& example) const = 0;
};

// End-of-dialogue decision: the more probable of common and different at
// the final token (undecided never wins).
Prediction predict_from_beliefs(const TargetBeliefs& beliefs);

class ListenerTrainable final : public Trainable {
 public:
  explicit ListenerTrainable(ListenerModel& model) : model_(model) {}
  nn::ParameterSet& parameters() override { return model_.parameters(); }
  const nn::ParameterSet& parameters() const override { return model_.parameters(); }
  nn::Var loss(nn::Tape& tape, const PreparedExample& example, const Supervision& supervision) const override;
  Prediction predict(const PreparedExample& example) const override;

 private:
  ListenerModel& model_;
};

BaselineInput baseline_input(const BaselineModel& model, const PreparedExample& example);

class BaselineTrainable final : public Trainable {
 public:
  explicit BaselineTrainable(BaselineModel& model) : model_(model) {}
  nn::ParameterSet& parameters() override { return model_.parameters(); }
  const nn::ParameterSet& parameters() const override { return model_.parameters(); }
  // Always the single final decision per target; `supervision` is ignored.
  nn::Var loss(nn::Tape& tape, const PreparedExample& example, const Supervision& supervision) const override;
  Prediction predict(const PreparedExample& example) const override;

 private:
  BaselineModel& model_;
};

// --- evaluation ------------------------------------------------------------

struct TargetOutcome {
  int image_index = 0;
  Mark gold = Mark::common;
  Mark predicted = Mark::common;
  double confidence = 0.0;
  bool correct() const { return gold == predicted; }
};

struct RoundOutcome {
  std::string instance_id;
  std::string theme;
  std::array<TargetOutcome, kTargetsPerPlayer> targets;
  int correct_count() const;
  bool all_correct() const { return correct_count() == kTargetsPerPlayer; }
  bool all_wrong() const { return correct_count() == 0; }
};

struct EvalResult {
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
  int all_correct_rounds = 0;
  int all_wrong_rounds = 0;
  std::vector<RoundOutcome> rounds;
  // One 0/1 entry per (instance, target), in example order.
  std::vector<int> item_correct() const;
};

EvalResult evaluate(const Trainable& model, std::span<const PreparedExample> examples);

// --- training --------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;  // mean per-instance loss over the epoch
  double valid_accuracy = 0.0;
  double learning_rate = 0.0;  // at the epoch's last step
};

struct TrainConfig {
  int max_epochs = 100;
  int batch_size = 16;
  double peak_lr = 2e-5;
  long warmup_steps = 500;
  double weight_decay = 1e-3;
  int patience = 10;
  std::uint64_t seed = 0;
  Supervision supervision;
  std::function<void(const EpochRecord&)> on_epoch;

  // Settings for the tiny desk-scale models.
  static TrainConfig desk();
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_valid_accuracy = -1.0;
  bool stopped_early = false;
  long steps = 0;
};

// Trains in place and leaves the best-validation weights in the model.
// Throws DivergenceError on a non-finite loss or gradient.
TrainHistory train(Trainable& model, std::span<const PreparedExample> train_set,
                   std::span<const PreparedExample> valid_set, const TrainConfig& config);

// --- significance ----------------------------------------------------------

// Paired bootstrap over items; two-sided p-value for a difference in mean
// correctness.
double bootstrap_compare(std::span<const int> a, std::span<const int> b, int resamples, std::uint64_t seed);

// --- ablations -------------------------------------------------------------

struct AblationEntry {
  std::string name;
  nlohmann::json settings;
};

struct RunOutcome {
  bool ok = false;
  double valid_accuracy = 0.0;
  double test_accuracy = 0.0;
  int epochs = 0;
  std::string error;
};

struct AblationRow {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<RunOutcome> runs;
  int failures = 0;
  double mean_valid = 0.0, stdev_valid = 0.0;
  double mean_test = 0.0, stdev_test = 0.0;
};

inline const std::vector<std::uint64_t> kDefaultSeeds = {1, 2, 3};

using AblationRunner = std::function<RunOutcome(const AblationEntry&, std::uint64_t seed)>;

// One row per entry, aggregated over the seeds. A run that throws is
// recorded as failed and the suite carries on.
std::vector<AblationRow> run_ablation_suite(std::span<const AblationEntry> grid,
                                            std::span<const std::uint64_t> seeds, const AblationRunner& runner);
std::vector<AblationEntry> parse_ablation_grid(const nlohmann::json& grid);
std::string format_ablation_table(std::span<const AblationRow> rows);

// A complete experiment over one corpus: split, prepare, build, train and
// evaluate. Settings keys (all optional): model ("listener" | "baseline"),
// variant, injection_layers, dense, partition, chains, train (TrainConfig
// fields), model_config (ModelConfig fields).
struct ExperimentData {
  InstanceList instances;
  std::shared_ptr<FeaturePipeline> pipeline;
  SplitRatios ratios;
  std::uint64_t split_seed = 0;
  ModelConfig base_model;
  TrainConfig base_train;
  ThresholdPolicy chain_policy = ThresholdPolicy::top_one();
};

RunOutcome run_experiment(const ExperimentData& data, const nlohmann::json& settings, std::uint64_t seed);

}  // namespace pbl
