#include "pbl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "pbl/errors.hpp"
#include "pbl/util.hpp"

namespace pbl {

namespace {

void check_shapes(std::span<const BeliefSequence, kTargetsPerPlayer> beliefs,
                  std::span<const std::vector<int>, kTargetsPerPlayer> labels) {
  for (std::size_t j = 0; j < kTargetsPerPlayer; ++j) {
    if (beliefs[j].cols() != kNumLabels) throw ContractError("beliefs must have 3 columns");
    if (beliefs[j].rows() != static_cast<Eigen::Index>(labels[j].size()))
      throw ContractError("belief and label lengths differ for target slot " + std::to_string(j));
    for (int y : labels[j])
      if (y < 0 || y >= kNumLabels) throw ContractError("label outside 0..2");
  }
}

}  // namespace

double dense_mle_loss(std::span<const BeliefSequence, kTargetsPerPlayer> beliefs,
                      std::span<const std::vector<int>, kTargetsPerPlayer> labels) {
  check_shapes(beliefs, labels);
  double loss = 0.0;
  for (std::size_t j = 0; j < kTargetsPerPlayer; ++j)
    for (std::size_t t = 0; t < labels[j].size(); ++t)
      loss -= std::log(beliefs[j](static_cast<Eigen::Index>(t), labels[j][t]));
  return loss;
}

double final_token_loss(std::span<const BeliefSequence, kTargetsPerPlayer> beliefs,
                        std::span<const std::vector<int>, kTargetsPerPlayer> labels) {
  check_shapes(beliefs, labels);
  double loss = 0.0;
  for (std::size_t j = 0; j < kTargetsPerPlayer; ++j) {
    if (labels[j].empty()) continue;
    loss -= std::log(beliefs[j](beliefs[j].rows() - 1, labels[j].back()));
  }
  return loss;
}

double LinearWarmupDecay::at(long step) const {
  if (step <= 0 || total <= 0) return 0.0;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup) return step >= total ? 0.0 : peak;
  const double remaining = static_cast<double>(std::max(0L, total - step));
  return peak * remaining / static_cast<double>(total - warmup);
}

AdamW::AdamW(nn::ParameterSet& params, double weight_decay, double beta1, double beta2, double eps)
    : params_(params.list()), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* p : params_) {
    m_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nn::Parameter& p = *params_[i];
    if (p.grad.size() == 0) continue;
    if (p.decay && weight_decay_ > 0) p.value *= 1.0 - lr * weight_decay_;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

// --- adapters --------------------------------------------------------------

Prediction predict_from_beliefs(const TargetBeliefs& beliefs) {
  Prediction out;
  for (std::size_t s = 0; s < kTargetsPerPlayer; ++s) {
    const auto& b = beliefs.beliefs[s];
    const double common = b(b.rows() - 1, static_cast<int>(Label::common));
    const double different = b(b.rows() - 1, static_cast<int>(Label::different));
    out.marks[s] = different > common ? Mark::different : Mark::common;
    out.confidence[s] = std::max(common, different);
  }
  return out;
}

nn::Var ListenerTrainable::loss(nn::Tape& tape, const PreparedExample& ex, const Supervision& sup) const {
  auto enc = model_.encode(tape, ex.dialogue, ex.relevance, ex.visual);
  auto logits = model_.logits(tape, enc, ex.targets);
  const std::size_t T = static_cast<std::size_t>(ex.length());
  std::vector<double> weights(T, sup.dense ? 1.0 : 0.0);
  weights.back() = 1.0;
  nn::Var total;
  for (std::size_t s = 0; s < kTargetsPerPlayer; ++s) {
    if (ex.labels[s].size() != T) throw ContractError("label length differs from the dialogue for " + ex.id());
    nn::Var term = tape.nll(tape.log_softmax_rows(logits[s]), ex.labels[s], weights);
    total = total.valid() ? tape.add(total, term) : term;
  }
  return total;
}

Prediction ListenerTrainable::predict(const PreparedExample& ex) const {
  return predict_from_beliefs(model_.infer(ex.dialogue, ex.relevance, ex.visual, ex.targets));
}

BaselineInput baseline_input(const BaselineModel& model, const PreparedExample& ex) {
  BaselineInput in;
  in.dialogue = model.embedding().embed(ex.dialogue.tokens);
  in.images = ex.visual.pooled;
  for (std::size_t i = 0; i < kImagesPerPlayer; ++i) in.chains[i] = model.embedding().mean_embedding(ex.chain_tokens[i]);
  return in;
}

nn::Var BaselineTrainable::loss(nn::Tape& tape, const PreparedExample& ex, const Supervision&) const {
  const BaselineInput in = baseline_input(model_, ex);
  nn::Var total;
  const std::array<double, 1> one{1.0};
  for (std::size_t s = 0; s < kTargetsPerPlayer; ++s) {
    const std::array<int, 1> y{ex.gold[s] == Mark::common ? 0 : 1};
    nn::Var term = tape.nll(tape.log_softmax_rows(model_.forward(tape, in, ex.targets[s])), y, one);
    total = total.valid() ? tape.add(total, term) : term;
  }
  return total;
}

Prediction BaselineTrainable::predict(const PreparedExample& ex) const {
  const BaselineInput in = baseline_input(model_, ex);
  Prediction out;
  for (std::size_t s = 0; s < kTargetsPerPlayer; ++s) {
    Eigen::Vector2d p = model_.predict(in, ex.targets[s]);
    out.marks[s] = p(1) > p(0) ? Mark::different : Mark::common;
    out.confidence[s] = p.maxCoeff();
  }
  return out;
}

// --- evaluation ------------------------------------------------------------

int RoundOutcome::correct_count() const {
  return static_cast<int>(std::count_if(targets.begin(), targets.end(), [](const auto& t) { return t.correct(); }));
}

std::vector<int> EvalResult::item_correct() const {
  std::vector<int> out;
  for (const auto& r : rounds)
    for (const auto& t : r.targets) out.push_back(t.correct() ? 1 : 0);
  return out;
}

EvalResult evaluate(const Trainable& model, std::span<const PreparedExample> examples) {
  EvalResult res;
  for (const auto& ex : examples) {
    Prediction p = model.predict(ex);
    RoundOutcome r;
    r.instance_id = ex.id();
    r.theme = ex.instance->theme_key();
    for (std::size_t s = 0; s < kTargetsPerPlayer; ++s)
      r.targets[s] = {ex.targets[s], ex.gold[s], p.marks[s], p.confidence[s]};
    res.correct += r.correct_count();
    res.total += kTargetsPerPlayer;
    res.all_correct_rounds += r.all_correct() ? 1 : 0;
    res.all_wrong_rounds += r.all_wrong() ? 1 : 0;
    res.rounds.push_back(std::move(r));
  }
  res.accuracy = res.total ? static_cast<double>(res.correct) / res.total : 0.0;
  return res;
}

// --- training --------------------------------------------------------------

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.max_epochs = 30;
  c.batch_size = 4;
  c.peak_lr = 1e-2;
  c.warmup_steps = 50;
  c.weight_decay = 1e-3;
  c.patience = 30;  // no early stop inside the desk budget
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"max_epochs", c.max_epochs}, {"batch_size", c.batch_size},     {"peak_lr", c.peak_lr},
          {"warmup_steps", c.warmup_steps}, {"weight_decay", c.weight_decay}, {"patience", c.patience},
          {"seed", c.seed},             {"dense", c.supervision.dense}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.supervision.dense = j.value("dense", c.supervision.dense);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  if (c.max_epochs <= 0 || c.batch_size <= 0 || c.peak_lr < 0 || c.warmup_steps < 0 || c.patience <= 0)
    throw ConfigError("training config values out of range");
  return c;
}

TrainHistory train(Trainable& model, std::span<const PreparedExample> train_set,
                   std::span<const PreparedExample> valid_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw ContractError("training set is empty");
  TrainHistory hist;
  auto& params = model.parameters();
  AdamW opt(params, cfg.weight_decay);
  const long per_epoch = static_cast<long>((train_set.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                           static_cast<std::size_t>(cfg.batch_size));
  LinearWarmupDecay schedule{cfg.peak_lr, cfg.warmup_steps, per_epoch * cfg.max_epochs};
  std::mt19937_64 rng(cfg.seed ^ 0x7a1e5eedULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<Eigen::MatrixXd> best;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    seeded_shuffle(order, rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      params.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const PreparedExample& ex = train_set[order[b]];
        nn::Tape tape;
        nn::Var loss = model.loss(tape, ex, cfg.supervision);
        const double value = loss.value()(0, 0);
        if (!std::isfinite(value))
          throw DivergenceError("non-finite loss on " + ex.id(), epoch, hist.steps + 1);
        loss_sum += value;
        tape.backward(loss);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto* p : params.list()) {
        if (p->grad.size() == 0) continue;
        p->grad *= inv;
        if (!p->grad.allFinite())
          throw DivergenceError("non-finite gradient for " + p->name, epoch, hist.steps + 1);
      }
      opt.step(schedule.at(++hist.steps));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(train_set.size());
    rec.learning_rate = schedule.at(hist.steps);
    rec.valid_accuracy = valid_set.empty() ? 0.0 : evaluate(model, valid_set).accuracy;
    hist.epochs.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);

    if (rec.valid_accuracy > hist.best_valid_accuracy) {
      hist.best_valid_accuracy = rec.valid_accuracy;
      hist.best_epoch = epoch;
      best.clear();
      for (const auto* p : params.list()) best.push_back(p->value);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      hist.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  auto list = params.list();
  for (std::size_t i = 0; i < best.size(); ++i) list[i]->value = best[i];
  return hist;
}

// --- significance ----------------------------------------------------------

double bootstrap_compare(std::span<const int> a, std::span<const int> b, int resamples, std::uint64_t seed) {
  if (a.size() != b.size()) throw ContractError("bootstrap inputs differ in length");
  if (a.empty()) throw ContractError("bootstrap inputs are empty");
  if (resamples <= 0) throw ContractError("resample count must be positive");
  std::vector<int> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  std::mt19937_64 rng(seed);
  long at_most_zero = 0, at_least_zero = 0;
  for (int r = 0; r < resamples; ++r) {
    long sum = 0;
    for (std::size_t i = 0; i < diff.size(); ++i) sum += diff[uniform_below(rng, diff.size())];
    at_most_zero += sum <= 0 ? 1 : 0;
    at_least_zero += sum >= 0 ? 1 : 0;
  }
  const double denom = static_cast<double>(resamples) + 1.0;
  const double tail = std::min((static_cast<double>(at_most_zero) + 1.0) / denom,
                               (static_cast<double>(at_least_zero) + 1.0) / denom);
  return std::min(1.0, 2.0 * tail);
}

// --- ablations -------------------------------------------------------------

std::vector<AblationRow> run_ablation_suite(std::span<const AblationEntry> grid,
                                            std::span<const std::uint64_t> seeds, const AblationRunner& runner) {
  std::vector<AblationRow> rows;
  for (const auto& entry : grid) {
    AblationRow row;
    row.name = entry.name;
    std::vector<double> valid, test;
    for (auto seed : seeds) {
      RunOutcome out;
      try {
        out = runner(entry, seed);
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
      }
      row.seeds.push_back(seed);
      if (out.ok) {
        valid.push_back(out.valid_accuracy);
        test.push_back(out.test_accuracy);
      } else {
        ++row.failures;
      }
      row.runs.push_back(std::move(out));
    }
    if (!test.empty()) {
      row.mean_valid = mean(valid);
      row.mean_test = mean(test);
      row.stdev_valid = valid.size() > 1 ? stdev(valid) : 0.0;
      row.stdev_test = test.size() > 1 ? stdev(test) : 0.0;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationEntry> parse_ablation_grid(const nlohmann::json& grid) {
  const nlohmann::json& list = grid.is_object() && grid.contains("entries") ? grid["entries"] : grid;
  if (!list.is_array()) throw ConfigError("ablation grid must be an array of entries");
  std::vector<AblationEntry> out;
  for (const auto& e : list) {
    if (!e.is_object() || !e.contains("name")) throw ConfigError("every grid entry needs a name");
    out.push_back({e["name"].get<std::string>(), e});
  }
  return out;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << "name\truns\tfailures\tvalid_mean\tvalid_stdev\ttest_mean\ttest_stdev\n";
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& r : rows)
    out << r.name << '\t' << r.runs.size() << '\t' << r.failures << '\t' << r.mean_valid << '\t' << r.stdev_valid
        << '\t' << r.mean_test << '\t' << r.stdev_test << '\n';
  return out.str();
}

RunOutcome run_experiment(const ExperimentData& data, const nlohmann::json& settings, std::uint64_t seed) {
  if (!data.pipeline) throw ContractError("experiment needs a feature pipeline");
  const std::string kind = settings.value("model", std::string("listener"));
  const auto policy = parse_partition_policy(settings.value("partition", std::string("theme-disjoint")));
  SplitResult split = split_dataset(data.instances, policy, data.ratios, data.split_seed);

  TrainConfig tc = train_config_from_json(settings.value("train", nlohmann::json::object()), data.base_train);
  tc.supervision.dense = settings.value("dense", tc.supervision.dense);
  tc.seed = seed;

  FeaturePipeline& pipe = *data.pipeline;
  RunOutcome out;
  if (kind == "listener") {
    nlohmann::json mc = to_json(data.base_model);
    if (settings.contains("model_config")) mc.merge_patch(settings["model_config"]);
    if (settings.contains("variant")) mc["variant"] = settings["variant"];
    if (settings.contains("injection_layers")) mc["injection_layers"] = settings["injection_layers"];
    ModelConfig config = model_config_from_json(mc);
    config.seed = seed;
    config.backbone.seed = seed;
    pipe.keep_patches(config.variant == Variant::cross_attention);
    auto train_ex = pipe.prepare_all(split.train.instances);
    auto valid_ex = pipe.prepare_all(split.valid.instances);
    auto test_ex = pipe.prepare_all(split.test.instances);
    ListenerModel model(config);
    ListenerTrainable trainable(model);
    auto hist = train(trainable, train_ex, valid_ex, tc);
    out.valid_accuracy = evaluate(trainable, valid_ex).accuracy;
    out.test_accuracy = evaluate(trainable, test_ex).accuracy;
    out.epochs = static_cast<int>(hist.epochs.size());
  } else if (kind == "baseline") {
    BaselineConfig config;
    config.vocab_size = pipe.tokenizer().vocab_size();
    config.image_dim = pipe.image_dim();
    if (settings.contains("baseline_config")) {
      nlohmann::json j = to_json(config);
      j.merge_patch(settings["baseline_config"]);
      config = baseline_config_from_json(j);
    }
    config.seed = seed;
    pipe.keep_patches(false);
    if (settings.value("chains", true)) {
      auto rounds = unique_rounds(data.instances);
      pipe.set_chains(std::make_shared<ChainIndex>(
          build_chain_index(rounds, pipe.scorer(), pipe.images(), data.chain_policy, pipe.tokenizer())));
    } else {
      pipe.set_chains(nullptr);
    }
    auto train_ex = pipe.prepare_all(split.train.instances);
    auto valid_ex = pipe.prepare_all(split.valid.instances);
    auto test_ex = pipe.prepare_all(split.test.instances);
    pipe.set_chains(nullptr);
    BaselineModel model(config);
    BaselineTrainable trainable(model);
    auto hist = train(trainable, train_ex, valid_ex, tc);
    out.valid_accuracy = evaluate(trainable, valid_ex).accuracy;
    out.test_accuracy = evaluate(trainable, test_ex).accuracy;
    out.epochs = static_cast<int>(hist.epochs.size());
  } else {
    throw ConfigError("unknown model kind '" + kind + "'");
  }
  out.ok = true;
  return out;
}

}  // namespace pbl
