// Command-line front end: corpus tools, feature precomputation, training,
// evaluation, ablations, chain extraction, analysis and the session server.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "pbl/analysis.hpp"
#include "pbl/checkpoint.hpp"
#include "pbl/errors.hpp"
#include "pbl/http_api.hpp"
#include "pbl/pipeline.hpp"
#include "pbl/refchain.hpp"
#include "pbl/synthetic.hpp"
#include "pbl/trainer.hpp"

namespace fs = std::filesystem;
using namespace pbl;

namespace {

// Corpus location and feature settings shared by most subcommands.
struct DataOptions {
  std::string log;
  std::string images;
  std::string cache;
  std::string scorer = "color-lexicon";
  std::string encoder = "color-patch";
  int image_dim = kDefaultImageDim;
  int buckets = 4096;
  std::string policy = "theme-disjoint";
  std::string ratios = "70,10,20";
  std::uint64_t split_seed = 13;

  void add(CLI::App* app, bool need_log = true) {
    auto* o = app->add_option("--log", log, "game log (JSON lines)");
    if (need_log) o->required();
    app->add_option("--images", images, "image root directory (defaults to the log's directory)");
    app->add_option("--cache", cache, "feature cache directory");
    app->add_option("--scorer", scorer, "relevance scorer")->capture_default_str();
    app->add_option("--encoder", encoder, "patch encoder")->capture_default_str();
    app->add_option("--image-dim", image_dim, "patch feature width")->capture_default_str();
    app->add_option("--buckets", buckets, "tokenizer hash buckets")->capture_default_str();
    app->add_option("--partition", policy, "theme-disjoint | repartition-I | repartition-P")->capture_default_str();
    app->add_option("--ratios", ratios, "train,valid,test")->capture_default_str();
    app->add_option("--split-seed", split_seed, "split seed")->capture_default_str();
  }

  nlohmann::json to_json() const {
    return {{"scorer", scorer},   {"encoder", encoder},   {"image_dim", image_dim}, {"buckets", buckets},
            {"partition", policy}, {"ratios", ratios},     {"split_seed", split_seed}};
  }

  void from_json(const nlohmann::json& j) {
    scorer = j.value("scorer", scorer);
    encoder = j.value("encoder", encoder);
    image_dim = j.value("image_dim", image_dim);
    buckets = j.value("buckets", buckets);
    policy = j.value("partition", policy);
    ratios = j.value("ratios", ratios);
    split_seed = j.value("split_seed", split_seed);
  }
};

struct Workspace {
  std::vector<GameRound> rounds;
  SpawnResult spawned;
  std::unique_ptr<FeatureCache> cache;
  std::shared_ptr<FeaturePipeline> pipeline;
};

Workspace open_workspace(const DataOptions& o) {
  Workspace w;
  w.rounds = load_game_log(o.log);
  w.spawned = spawn_instances(w.rounds);
  const fs::path root = o.images.empty() ? fs::path(o.log).parent_path() : fs::path(o.images);
  if (!o.cache.empty()) w.cache = std::make_unique<FeatureCache>(o.cache);
  w.pipeline = std::make_shared<FeaturePipeline>(
      std::make_shared<HashingTokenizer>(o.buckets), std::shared_ptr<const RelevanceScorer>(make_scorer(o.scorer)),
      std::shared_ptr<const PatchEncoder>(make_encoder(o.encoder, o.image_dim)),
      std::make_shared<DirectoryImageStore>(root), w.cache.get());
  return w;
}

SplitResult split_of(const Workspace& w, const DataOptions& o) {
  return split_dataset(w.spawned.instances, parse_partition_policy(o.policy), parse_ratios(o.ratios), o.split_seed);
}

const DatasetSplit& pick(const SplitResult& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "valid") return s.valid;
  if (name == "test") return s.test;
  throw ConfigError("split must be train, valid or test");
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// A trained model of either kind behind the Trainable interface.
struct LoadedModel {
  std::string kind;
  std::unique_ptr<ListenerModel> listener;
  std::unique_ptr<BaselineModel> baseline;
  std::unique_ptr<Trainable> trainable;
  nlohmann::json metadata;
};

LoadedModel load_model(const std::string& path) {
  auto data = load_checkpoint(path);
  LoadedModel m;
  m.kind = data.kind;
  m.metadata = data.metadata;
  if (data.kind == "listener") {
    m.listener = std::make_unique<ListenerModel>(listener_from_checkpoint(data));
    m.trainable = std::make_unique<ListenerTrainable>(*m.listener);
  } else {
    m.baseline = std::make_unique<BaselineModel>(baseline_from_checkpoint(data));
    m.trainable = std::make_unique<BaselineTrainable>(*m.baseline);
  }
  return m;
}

std::vector<PreparedExample> prepare_for(const LoadedModel& m, Workspace& w, const InstanceList& instances) {
  if (m.listener) {
    w.pipeline->keep_patches(m.listener->config().variant == Variant::cross_attention);
  } else if (m.metadata.value("chains", true)) {
    w.pipeline->set_chains(std::make_shared<ChainIndex>(build_chain_index(
        unique_rounds(w.spawned.instances), w.pipeline->scorer(), w.pipeline->images(),
        parse_threshold_policy(m.metadata.value("chain_policy", std::string("top1"))), w.pipeline->tokenizer())));
  }
  return w.pipeline->prepare_all(instances);
}

void print_audit(const SpawnAudit& a) {
  std::cout << "rounds\t" << a.rounds_seen << "\nkept\t" << a.rounds_kept << "\nmistake_drops\t" << a.mistake_drops
            << "\nearly_mark_drops\t" << a.early_mark_drops << "\nincomplete_drops\t" << a.incomplete_drops
            << "\ndropped_instances\t" << a.dropped_instances << "\ninstances\t" << a.rounds_kept * 2 << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Listener training, evaluation and live sessions for the PhotoBook reference game"};
  app.require_subcommand(1);

  // synth
  SyntheticConfig synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic separable corpus");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--themes", synth.themes)->capture_default_str();
  synth_cmd->add_option("--games-per-theme", synth.games_per_theme)->capture_default_str();
  synth_cmd->add_option("--rounds", synth.rounds_per_game)->capture_default_str();
  synth_cmd->add_option("--players", synth.players)->capture_default_str();
  synth_cmd->add_option("--mistake-rate", synth.mistake_rate)->capture_default_str();
  synth_cmd->add_option("--early-mark-rate", synth.early_mark_rate)->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();

  // gamedata
  auto* gd = app.add_subcommand("gamedata", "inspect and split game logs");
  gd->require_subcommand(1);
  DataOptions parse_opts, split_opts;
  auto* gd_parse = gd->add_subcommand("parse", "validate a log and report filtering counts");
  parse_opts.add(gd_parse);
  auto* gd_split = gd->add_subcommand("split", "split instances and write id lists");
  split_opts.add(gd_split);
  std::string split_out;
  gd_split->add_option("--out", split_out, "directory for train/valid/test id lists");

  // textalign
  auto* ta = app.add_subcommand("textalign", "tokenization and dense labels");
  ta->require_subcommand(1);
  auto* ta_trace = ta->add_subcommand("trace", "print the token/label table of one instance");
  DataOptions trace_opts;
  trace_opts.add(ta_trace);
  std::string trace_id;
  ta_trace->add_option("--instance", trace_id, "instance id game:round:player")->required();

  // features
  auto* fe = app.add_subcommand("features", "feature extraction");
  fe->require_subcommand(1);
  auto* fe_pre = fe->add_subcommand("precompute", "fill the feature cache for every instance");
  DataOptions pre_opts;
  pre_opts.add(fe_pre);

  // train
  auto* tr = app.add_subcommand("train", "train a listener or baseline");
  DataOptions train_opts;
  train_opts.add(tr);
  std::string train_config, train_out, model_kind = "listener", variant = "injection-only", scale = "desk";
  std::vector<int> layers;
  std::uint64_t seed = 1;
  bool no_dense = false, no_chains = false;
  int epochs = 0;
  tr->add_option("--config", train_config, "JSON with optional 'model' and 'train' objects");
  tr->add_option("--out", train_out, "run directory")->required();
  tr->add_option("--seed", seed)->capture_default_str();
  tr->add_option("--model", model_kind, "listener | baseline")->capture_default_str();
  tr->add_option("--variant", variant, "injection-only | cross-attention | no-relevance")->capture_default_str();
  tr->add_option("--layers", layers, "injection layers (0 = embeddings); default all");
  tr->add_option("--scale", scale, "desk | full")->capture_default_str();
  tr->add_option("--epochs", epochs, "override the epoch budget");
  tr->add_flag("--no-dense", no_dense, "supervise the final token only");
  tr->add_flag("--no-chains", no_chains, "baseline without reference chains");

  // eval
  auto* ev = app.add_subcommand("eval", "end-of-dialogue accuracy of a checkpoint");
  DataOptions eval_opts;
  eval_opts.add(ev);
  std::string eval_ckpt, eval_split = "test", eval_predictions;
  ev->add_option("--checkpoint", eval_ckpt)->required();
  ev->add_option("--split", eval_split)->capture_default_str();
  ev->add_option("--predictions", eval_predictions, "write per-target predictions (TSV)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation grid over fixed seeds");
  DataOptions ablate_opts;
  ablate_opts.add(ab);
  std::string grid_path, ablate_out;
  std::vector<std::uint64_t> seeds = kDefaultSeeds;
  ab->add_option("--grid", grid_path, "JSON array of entries")->required();
  ab->add_option("--seeds", seeds)->capture_default_str();
  ab->add_option("--out", ablate_out, "results table (TSV)");

  // chains
  auto* ch = app.add_subcommand("chains", "reference-chain extraction");
  ch->require_subcommand(1);
  auto* ch_ex = ch->add_subcommand("extract", "extract chains with a scorer");
  DataOptions chain_opts;
  chain_opts.add(ch_ex);
  std::string chain_policy = "top1", chain_out;
  ch_ex->add_option("--policy", chain_policy, "top1 | abs:<score> | rel:<fraction>")->capture_default_str();
  ch_ex->add_option("--out", chain_out, "chain file (JSON lines)")->required();
  auto* ch_ev = ch->add_subcommand("evaluate", "precision and recall against gold links");
  std::string extracted_path, gold_path;
  ch_ev->add_option("--extracted", extracted_path)->required();
  ch_ev->add_option("--gold", gold_path)->required();

  // analyze
  auto* an = app.add_subcommand("analyze", "relevance-gap statistics and per-theme errors");
  DataOptions analyze_opts;
  analyze_opts.add(an);
  std::string an_ckpt, an_split = "test", an_out;
  an->add_option("--checkpoint", an_ckpt)->required();
  an->add_option("--split", an_split)->capture_default_str();
  an->add_option("--out", an_out, "report directory")->required();

  // serve
  auto* sv = app.add_subcommand("serve", "run the live session server");
  std::string sv_ckpt, sv_images, sv_host = "127.0.0.1", sv_journal;
  int sv_port = 8080;
  sv->add_option("--checkpoint", sv_ckpt, "listener checkpoint, registered as 'default'")->required();
  sv->add_option("--images", sv_images, "image root directory")->required();
  sv->add_option("--host", sv_host)->capture_default_str();
  sv->add_option("--port", sv_port)->capture_default_str();
  sv->add_option("--journal", sv_journal, "append-only session log");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      auto corpus = make_synthetic_corpus(synth);
      write_synthetic_corpus(corpus, synth_out);
      std::cout << "wrote " << corpus.rounds.size() << " rounds and " << corpus.image_list.size() << " images to "
                << synth_out << '\n';
    } else if (*gd_parse) {
      auto rounds = load_game_log(parse_opts.log);
      print_audit(spawn_instances(rounds).audit);
    } else if (*gd_split) {
      auto w = open_workspace(split_opts);
      auto s = split_of(w, split_opts);
      for (const auto* d : {&s.train, &s.valid, &s.test}) {
        std::cout << d->name << '\t' << d->instances.size() << '\n';
        if (!split_out.empty()) {
          fs::create_directories(split_out);
          std::ofstream out(fs::path(split_out) / (d->name + ".ids"));
          for (const auto& id : d->instance_ids()) out << id << '\n';
        }
      }
    } else if (*ta_trace) {
      auto w = open_workspace(trace_opts);
      for (const auto& inst : w.spawned.instances) {
        if (inst->id() != trace_id) continue;
        auto dialogue = tokenize_and_align(*inst, w.pipeline->tokenizer());
        auto labels = build_label_sequences(*inst, dialogue);
        std::cout << format_trace(dialogue, labels.sequences);
        return 0;
      }
      throw NotFoundError("no kept instance '" + trace_id + "'");
    } else if (*fe_pre) {
      if (pre_opts.cache.empty()) throw ConfigError("--cache is required for precompute");
      auto w = open_workspace(pre_opts);
      auto examples = w.pipeline->prepare_all(w.spawned.instances);
      std::cout << "prepared " << examples.size() << " instances; cache holds " << w.cache->size() << " entries\n";
    } else if (*tr) {
      auto w = open_workspace(train_opts);
      auto s = split_of(w, train_opts);
      nlohmann::json cfg = train_config.empty() ? nlohmann::json::object() : read_json(train_config);
      TrainConfig tc = train_config_from_json(cfg.value("train", nlohmann::json::object()),
                                              scale == "full" ? TrainConfig{} : TrainConfig::desk());
      tc.seed = seed;
      if (epochs > 0) tc.max_epochs = epochs;
      if (no_dense) tc.supervision.dense = false;
      tc.on_epoch = [](const EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " loss " << r.mean_loss << " valid " << r.valid_accuracy << '\n';
      };
      fs::create_directories(train_out);
      nlohmann::json meta{{"data", train_opts.to_json()}, {"train", to_json(tc)}};
      std::ofstream history(fs::path(train_out) / "history.tsv");
      history << "epoch\tmean_loss\tvalid_accuracy\tlearning_rate\n";
      auto log_epoch = tc.on_epoch;
      tc.on_epoch = [&](const EpochRecord& r) {
        log_epoch(r);
        history << r.epoch << '\t' << r.mean_loss << '\t' << r.valid_accuracy << '\t' << r.learning_rate << '\n';
      };
      const int vocab = w.pipeline->tokenizer().vocab_size();
      if (model_kind == "listener") {
        ModelConfig mc = scale == "full" ? ModelConfig::full_scale(vocab) : ModelConfig::desk_scale(vocab);
        mc.variant = parse_variant(variant);
        mc.injection_layers = layers;
        mc.image_dim = train_opts.image_dim;
        if (cfg.contains("model")) {
          nlohmann::json j = to_json(mc);
          j.merge_patch(cfg["model"]);
          mc = model_config_from_json(j);
        }
        mc.seed = seed;
        mc.backbone.seed = seed;
        w.pipeline->keep_patches(mc.variant == Variant::cross_attention);
        auto train_ex = w.pipeline->prepare_all(s.train.instances);
        auto valid_ex = w.pipeline->prepare_all(s.valid.instances);
        ListenerModel model(mc);
        ListenerTrainable t(model);
        auto hist = train(t, train_ex, valid_ex, tc);
        save_listener(fs::path(train_out) / "model.ckpt", model, meta);
        std::cout << "best epoch " << hist.best_epoch << " valid accuracy " << hist.best_valid_accuracy << '\n';
      } else if (model_kind == "baseline") {
        BaselineConfig bc;
        bc.vocab_size = vocab;
        bc.image_dim = train_opts.image_dim;
        if (cfg.contains("model")) {
          nlohmann::json j = to_json(bc);
          j.merge_patch(cfg["model"]);
          bc = baseline_config_from_json(j);
        }
        bc.seed = seed;
        meta["chains"] = !no_chains;
        meta["chain_policy"] = "top1";
        if (!no_chains)
          w.pipeline->set_chains(std::make_shared<ChainIndex>(
              build_chain_index(unique_rounds(w.spawned.instances), w.pipeline->scorer(), w.pipeline->images(),
                                ThresholdPolicy::top_one(), w.pipeline->tokenizer())));
        auto train_ex = w.pipeline->prepare_all(s.train.instances);
        auto valid_ex = w.pipeline->prepare_all(s.valid.instances);
        BaselineModel model(bc);
        BaselineTrainable t(model);
        auto hist = train(t, train_ex, valid_ex, tc);
        save_baseline(fs::path(train_out) / "model.ckpt", model, meta);
        std::cout << "best epoch " << hist.best_epoch << " valid accuracy " << hist.best_valid_accuracy << '\n';
      } else {
        throw ConfigError("--model must be listener or baseline");
      }
      std::ofstream(fs::path(train_out) / "config.json") << meta.dump(2) << '\n';
    } else if (*ev) {
      auto m = load_model(eval_ckpt);
      if (m.metadata.contains("data")) eval_opts.from_json(m.metadata["data"]);
      auto w = open_workspace(eval_opts);
      auto s = split_of(w, eval_opts);
      auto examples = prepare_for(m, w, pick(s, eval_split).instances);
      auto res = evaluate(*m.trainable, examples);
      std::cout << "accuracy\t" << res.accuracy << "\ncorrect\t" << res.correct << "\ntotal\t" << res.total
                << "\nall_correct_rounds\t" << res.all_correct_rounds << "\nall_wrong_rounds\t"
                << res.all_wrong_rounds << '\n';
      if (!eval_predictions.empty()) {
        std::ofstream out(eval_predictions);
        out << "instance\ttheme\timage_index\tgold\tpredicted\tconfidence\n";
        for (const auto& r : res.rounds)
          for (const auto& t : r.targets)
            out << r.instance_id << '\t' << r.theme << '\t' << t.image_index << '\t' << to_string(t.gold) << '\t'
                << to_string(t.predicted) << '\t' << t.confidence << '\n';
      }
    } else if (*ab) {
      auto w = open_workspace(ablate_opts);
      ExperimentData data;
      data.instances = w.spawned.instances;
      data.pipeline = w.pipeline;
      data.ratios = parse_ratios(ablate_opts.ratios);
      data.split_seed = ablate_opts.split_seed;
      data.base_model = ModelConfig::desk_scale(w.pipeline->tokenizer().vocab_size());
      data.base_model.image_dim = ablate_opts.image_dim;
      data.base_train = TrainConfig::desk();
      auto grid = parse_ablation_grid(read_json(grid_path));
      auto rows = run_ablation_suite(grid, seeds, [&](const AblationEntry& e, std::uint64_t sd) {
        std::cerr << "running " << e.name << " seed " << sd << '\n';
        return run_experiment(data, e.settings, sd);
      });
      const std::string table = format_ablation_table(rows);
      std::cout << table;
      if (!ablate_out.empty()) std::ofstream(ablate_out) << table;
    } else if (*ch_ex) {
      auto w = open_workspace(chain_opts);
      const auto policy = parse_threshold_policy(chain_policy);
      std::vector<ChainLink> links;
      for (const auto& r : w.rounds) {
        auto l = extract_chains(r, w.pipeline->scorer(), w.pipeline->images(), policy);
        links.insert(links.end(), l.begin(), l.end());
      }
      save_chains(chain_out, links);
      std::cout << "extracted " << links.size() << " links with policy " << policy.describe() << '\n';
    } else if (*ch_ev) {
      auto s = evaluate_chains(load_chains(extracted_path), load_chains(gold_path));
      std::cout << "precision\t" << s.precision << (s.precision_undefined ? "\t(nothing extracted)" : "")
                << "\nrecall\t" << s.recall << "\ncorrect\t" << s.correct << "\nextracted\t" << s.extracted
                << "\ngold\t" << s.gold << '\n';
    } else if (*an) {
      auto m = load_model(an_ckpt);
      if (m.metadata.contains("data")) analyze_opts.from_json(m.metadata["data"]);
      auto w = open_workspace(analyze_opts);
      auto s = split_of(w, analyze_opts);
      auto examples = prepare_for(m, w, pick(s, an_split).instances);
      auto res = evaluate(*m.trainable, examples);
      std::map<std::string, RelevanceMatrix> relevance;
      for (const auto& ex : examples) relevance[ex.id()] = ex.relevance;
      auto gaps = top2_gap_stats(res.rounds, relevance);
      auto themes = error_by_theme(res.rounds);
      fs::create_directories(an_out);
      std::ofstream(fs::path(an_out) / "gaps.tsv") << format_gap_report(gaps);
      std::ofstream(fs::path(an_out) / "themes.tsv") << format_theme_report(themes);
      std::ofstream(fs::path(an_out) / "gaps.svg") << gap_histogram_svg(gaps);
      std::cout << format_gap_report(gaps) << format_theme_report(themes);
    } else if (*sv) {
      auto data = load_checkpoint(sv_ckpt);
      DataOptions o;
      if (data.metadata.contains("data")) o.from_json(data.metadata["data"]);
      auto model = std::make_shared<const ListenerModel>(listener_from_checkpoint(data));
      auto pipeline = std::make_shared<FeaturePipeline>(
          std::make_shared<HashingTokenizer>(o.buckets), std::shared_ptr<const RelevanceScorer>(make_scorer(o.scorer)),
          std::shared_ptr<const PatchEncoder>(make_encoder(o.encoder, o.image_dim)),
          std::make_shared<DirectoryImageStore>(sv_images));
      pipeline->keep_patches(model->config().variant == Variant::cross_attention);
      SessionManager sessions(pipeline, sv_journal.empty() ? std::nullopt : std::optional<fs::path>(sv_journal));
      sessions.register_checkpoint("default", model);
      httplib::Server server;
      mount_http_api(server, sessions);
      std::cerr << "listening on " << sv_host << ':' << sv_port << '\n';
      if (!server.listen(sv_host, sv_port)) throw IoError("cannot listen on " + sv_host + ":" + std::to_string(sv_port));
    }
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged at epoch " << e.epoch() << " step " << e.step() << ": " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
