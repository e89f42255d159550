// omniseq: gen | ingest | train | evaluate | experiment
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "omniseq/checkpoint.hpp"
#include "omniseq/errors.hpp"
#include "omniseq/evaluation.hpp"
#include "omniseq/experiment.hpp"
#include "omniseq/pipeline.hpp"
#include "omniseq/synthgen.hpp"
#include "omniseq/training.hpp"

namespace fs = std::filesystem;
using namespace omniseq;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

Json read_config_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
}

struct GenArgs {
  std::string config;
  std::optional<int> users, items, intents, items_per_intent;
  std::optional<double> rho, instore_fraction;
  std::uint64_t seed = 0;
  std::string out;
};

void run_gen(const GenArgs& a) {
  GenConfig cfg = a.config.empty() ? GenConfig{} : gen_config_from_json(read_config_file(a.config));
  if (a.users) cfg.users = *a.users;
  if (a.items) cfg.catalog_size = *a.items;
  if (a.intents) cfg.intents = *a.intents;
  if (a.items_per_intent) cfg.items_per_intent = *a.items_per_intent;
  if (a.rho) cfg.rho = *a.rho;
  if (a.instore_fraction) cfg.instore_fraction = *a.instore_fraction;
  cfg.seed = a.seed;
  // Shrink the intent blocks to fit small catalogs unless set explicitly.
  if (!a.items_per_intent && cfg.intents * cfg.items_per_intent > cfg.catalog_size) {
    cfg.items_per_intent = std::max(1, cfg.catalog_size / cfg.intents);
  }
  write_corpus(generate(cfg), a.out);
}

struct IngestArgs {
  std::string online, store, out;
  Timestamp window_secs = 600, slide_secs = 300;
  std::optional<int> items;
  int max_seq_len = 90;
  Timestamp online_batch_secs = 0;  // 0: one slide
  Timestamp store_batch_secs = 86400;
};

void run_ingest(const IngestArgs& a) {
  PipelineSettings settings;
  settings.window = WindowConfig{a.window_secs, a.slide_secs};
  settings.window.validate();
  settings.online_batch_secs = a.online_batch_secs > 0 ? a.online_batch_secs : a.slide_secs;
  settings.store_batch_secs = a.store_batch_secs;
  settings.max_seq_len = a.max_seq_len;
  if (settings.store_batch_secs < 1 || settings.max_seq_len < 1) {
    throw ConfigError("--store-batch-secs and --max-seq-len must be positive");
  }

  auto online = read_online_events(a.online);
  auto store = read_store_transactions(a.store);
  int catalog = 0;
  if (a.items) {
    catalog = *a.items;
  } else {
    for (const auto& e : online) catalog = std::max(catalog, e.item + 1);
    for (const auto& t : store) {
      for (ItemId i : t.items) catalog = std::max(catalog, i + 1);
    }
  }
  if (catalog < 1) throw ConfigError("catalog size must be positive");

  const fs::path out(a.out);
  if (fs::exists(out / kSequenceSchema)) {
    throw DataError(out.string() + " already holds an offline store");
  }
  fs::create_directories(out);
  auto by_time = [](const auto& x, const auto& y) { return x.ts < y.ts; };
  std::stable_sort(online.begin(), online.end(), by_time);
  std::stable_sort(store.begin(), store.end(), by_time);

  PipelineConfig pcfg{settings.window, static_cast<std::size_t>(settings.max_seq_len),
                      Catalog{catalog}};
  FeatureRegistry registry;
  OnlineCache cache;
  OfflineStore offline(out);
  const auto stats =
      run_pipeline(online_micro_batches(std::move(online), settings.online_batch_secs),
                   store_batches(std::move(store), settings.store_batch_secs), pcfg, registry,
                   cache, &offline);
  write_file(out / "_registry.json", registry.to_json().dump(2) + "\n");
  write_dataset_info(out, DatasetInfo{catalog, settings.max_seq_len});
  const Json summary{{"pipeline", to_json(settings)},
                     {"catalog_size", catalog},
                     {"online_events", stats.online_events},
                     {"store_transactions", stats.store_transactions},
                     {"flushes", stats.flushes},
                     {"snapshots", stats.snapshots},
                     {"users", cache.size()}};
  write_file(out / "ingest.json", summary.dump(2) + "\n");
}

struct TrainArgs {
  std::string data, variant = "attn-enc", mode = "clean", out, metrics, config;
  std::uint64_t seed = 0;
  std::optional<int> epochs, dim, blocks, batch_size, negatives;
  std::optional<double> lr, dropout;
};

void run_train(const TrainArgs& a) {
  ModelConfig model;
  TrainConfig tcfg;
  if (!a.config.empty()) {
    const Json j = read_config_file(a.config);
    if (j.contains("model")) model = model_config_from_json(j.at("model"));
    if (j.contains("train")) tcfg = train_config_from_json(j.at("train"));
  }
  const Variant variant = parse_variant(a.variant);
  tcfg.mode = parse_split_mode(a.mode);
  tcfg.seed = a.seed;
  if (a.epochs) tcfg.epochs = *a.epochs;
  if (a.batch_size) tcfg.batch_size = *a.batch_size;
  if (a.negatives) tcfg.negatives = *a.negatives;
  if (a.lr) tcfg.lr = *a.lr;
  if (a.dropout) tcfg.dropout = *a.dropout;
  if (a.dim) model.dim = *a.dim;
  if (a.blocks) model.blocks = *a.blocks;
  tcfg.validate();

  const DatasetInfo info = read_dataset_info(a.data);
  model.catalog_size = info.catalog_size;
  const auto data = load_dataset(a.data);

  std::string log;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& e) {
    Json rec{{"epoch", e.epoch}, {"loss", e.loss}};
    rec["val_hit10"] = e.val_hit10 ? Json(*e.val_hit10) : Json(nullptr);
    rec["val_ndcg10"] = e.val_ndcg10 ? Json(*e.val_ndcg10) : Json(nullptr);
    log += rec.dump() + "\n";
    std::fprintf(stderr, "%s\n", rec.dump().c_str());
  };
  const TrainResult result = train(data, variant, model, tcfg, hooks);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, result.config, result.params, std::string(to_string(variant)), a.seed);
  write_file(a.metrics.empty() ? fs::path(a.out + ".metrics.jsonl") : fs::path(a.metrics), log);
}

struct EvalArgs {
  std::vector<std::string> ckpts;
  std::string data, out;
  std::uint64_t seed = 0;
  int negatives = 100;
  bool include_history = false;
};

void run_evaluate(const EvalArgs& a) {
  EvalOptions opts;
  opts.negatives = a.negatives;
  opts.exclude_history = !a.include_history;
  const DatasetInfo info = read_dataset_info(a.data);
  const auto data = load_dataset(a.data);

  ExperimentReport table;
  table.seeds = {a.seed};
  Json runs = Json::array();
  Json hashed = Json::array();
  for (const auto& path : a.ckpts) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.config.catalog_size != info.catalog_size) {
      throw DataError("checkpoint " + path + " was trained on a different catalog");
    }
    const Variant variant = parse_variant(ck.variant);
    const EvalReport r = evaluate(ck.params, ck.config, variant, data, a.seed, opts);
    runs.push_back({{"checkpoint", fs::path(path).filename().string()},
                    {"variant", ck.variant},
                    {"train_seed", ck.seed},
                    {"hit10", r.hit10},
                    {"ndcg10", r.ndcg10},
                    {"users", r.users},
                    {"skipped", r.skipped}});
    hashed.push_back(to_json(ck.config));
    table.users = r.users;
    table.variants.push_back(VariantResult{variant, {r.hit10}, {r.ndcg10}, {}, r.hit10, r.ndcg10});
  }
  const Json report{{"tool_version", kToolVersion},
                    {"config_hash", config_hash(Json{{"models", hashed}, {"eval", to_json(opts)},
                                                     {"seed", a.seed}})},
                    {"eval", to_json(opts)},
                    {"seed", a.seed},
                    {"runs", runs},
                    {"comparison", table.to_json()},
                    {"table", table.markdown()}};
  write_file(a.out, report.dump(2) + "\n");
}

struct ExperimentArgs {
  std::string config, manifest, out;
  std::optional<int> users, items, epochs, dim, batch_size;
  std::optional<double> rho;
  std::vector<std::uint64_t> seeds;
  std::string mode;
};

void run_experiment_cmd(const ExperimentArgs& a) {
  if (!a.config.empty() && !a.manifest.empty()) {
    throw ConfigError("--config and --manifest are exclusive");
  }
  ExperimentConfig cfg;
  if (!a.manifest.empty()) {
    cfg = config_from_manifest(a.manifest);
  } else {
    if (!a.config.empty()) cfg = experiment_config_from_json(read_config_file(a.config));
    if (a.users) cfg.gen.users = *a.users;
    if (a.items) cfg.gen.catalog_size = *a.items;
    if (a.rho) cfg.gen.rho = *a.rho;
    if (a.epochs) cfg.train.epochs = *a.epochs;
    if (a.dim) cfg.model.dim = *a.dim;
    if (a.batch_size) cfg.train.batch_size = *a.batch_size;
    if (!a.mode.empty()) cfg.train.mode = parse_split_mode(a.mode);
    if (!a.seeds.empty()) cfg.seeds = a.seeds;
    if (cfg.gen.intents * cfg.gen.items_per_intent > cfg.gen.catalog_size) {
      cfg.gen.items_per_intent = std::max(1, cfg.gen.catalog_size / cfg.gen.intents);
    }
  }
  ExperimentHooks hooks;
  hooks.on_epoch = [](std::uint64_t seed, Variant v, const EpochLog& e) {
    std::fprintf(stderr, "seed %llu %s epoch %d loss %.5f\n", static_cast<unsigned long long>(seed),
                 std::string(to_string(v)).c_str(), e.epoch, e.loss);
  };
  const ExperimentReport report = run_experiment(cfg, fs::path(a.out), hooks);
  std::cout << report.markdown();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid online/in-store sequential recommendation toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic hybrid-behavior corpus");
  g->add_option("--config", gen.config, "generator config (JSON)");
  g->add_option("--users", gen.users);
  g->add_option("--items", gen.items, "catalog size");
  g->add_option("--intents", gen.intents);
  g->add_option("--items-per-intent", gen.items_per_intent);
  g->add_option("--rho", gen.rho, "cross-channel correlation in [0, 1]");
  g->add_option("--instore-fraction", gen.instore_fraction);
  g->add_option("--seed", gen.seed);
  g->add_option("--out", gen.out)->required();

  IngestArgs ingest;
  auto* in = app.add_subcommand("ingest", "run the windowed feature pipeline");
  in->add_option("--online", ingest.online)->required();
  in->add_option("--store", ingest.store)->required();
  in->add_option("--window-secs", ingest.window_secs);
  in->add_option("--slide-secs", ingest.slide_secs);
  in->add_option("--out", ingest.out)->required();
  in->add_option("--items", ingest.items, "catalog size (default: largest item id + 1)");
  in->add_option("--max-seq-len", ingest.max_seq_len);
  in->add_option("--online-batch-secs", ingest.online_batch_secs);
  in->add_option("--store-batch-secs", ingest.store_batch_secs);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one model variant");
  t->add_option("--data", tr.data)->required();
  t->add_option("--variant", tr.variant)
      ->check(CLI::IsMember({"online-only", "w-store", "avg-enc", "attn-enc"}));
  t->add_option("--mode", tr.mode)->check(CLI::IsMember({"paper", "clean"}));
  t->add_option("--seed", tr.seed);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--metrics", tr.metrics, "metrics log (default: <out>.metrics.jsonl)");
  t->add_option("--config", tr.config, "JSON with optional model and train sections");
  t->add_option("--dim", tr.dim);
  t->add_option("--blocks", tr.blocks);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--negatives", tr.negatives);
  t->add_option("--lr", tr.lr);
  t->add_option("--dropout", tr.dropout);

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "score checkpoints on held-out online behaviors");
  e->add_option("--ckpt", ev.ckpts)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--seed", ev.seed);
  e->add_option("--out", ev.out)->required();
  e->add_option("--negatives", ev.negatives);
  e->add_flag("--include-history", ev.include_history,
              "allow the user's interacted items as negatives");

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "generate, ingest, train and compare all variants");
  x->add_option("--config", ex.config);
  x->add_option("--manifest", ex.manifest, "rerun a previous experiment");
  x->add_option("--out", ex.out)->required();
  x->add_option("--users", ex.users);
  x->add_option("--items", ex.items);
  x->add_option("--rho", ex.rho);
  x->add_option("--epochs", ex.epochs);
  x->add_option("--dim", ex.dim);
  x->add_option("--batch-size", ex.batch_size);
  x->add_option("--mode", ex.mode)->check(CLI::IsMember({"paper", "clean"}));
  x->add_option("--seeds", ex.seeds);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*g) run_gen(gen);
    if (*in) run_ingest(ingest);
    if (*t) run_train(tr);
    if (*e) run_evaluate(ev);
    if (*x) run_experiment_cmd(ex);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "omniseq: %s\n", err.what());
    return exit_code_for(err);
  }
  return 0;
}
