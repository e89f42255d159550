#include "omniseq/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "omniseq/checkpoint.hpp"
#include "omniseq/rng.hpp"

namespace omniseq {

namespace fs = std::filesystem;

namespace {

template <typename Fn>
auto parse_config(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad ") + what + " config: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

Json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e);
  }
}

}  // namespace

Json to_json(const WindowConfig& c) {
  return Json{{"window_secs", c.window_duration}, {"slide_secs", c.slide_duration}};
}

WindowConfig window_config_from_json(const Json& j) {
  return parse_config("window", [&] {
    WindowConfig c;
    c.window_duration = j.value("window_secs", c.window_duration);
    c.slide_duration = j.value("slide_secs", c.slide_duration);
    return c;
  });
}

Json to_json(const TrainConfig& c) {
  return Json{{"lr", c.lr},
              {"batch_size", c.batch_size},
              {"dropout", c.dropout},
              {"epochs", c.epochs},
              {"max_seq_len", c.max_seq_len},
              {"negatives", c.negatives},
              {"seed", c.seed},
              {"mode", std::string(to_string(c.mode))},
              {"exclude_history", c.exclude_history}};
}

TrainConfig train_config_from_json(const Json& j) {
  return parse_config("train", [&] {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.dropout = j.value("dropout", c.dropout);
    c.epochs = j.value("epochs", c.epochs);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.negatives = j.value("negatives", c.negatives);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) c.mode = parse_split_mode(j.at("mode").get<std::string>());
    c.exclude_history = j.value("exclude_history", c.exclude_history);
    return c;
  });
}

Json to_json(const EvalOptions& o) {
  return Json{{"negatives", o.negatives}, {"k", o.k}, {"exclude_history", o.exclude_history}};
}

EvalOptions eval_options_from_json(const Json& j) {
  return parse_config("eval", [&] {
    EvalOptions o;
    o.negatives = j.value("negatives", o.negatives);
    o.k = j.value("k", o.k);
    o.exclude_history = j.value("exclude_history", o.exclude_history);
    return o;
  });
}

Json to_json(const PipelineSettings& p) {
  return Json{{"window", to_json(p.window)},
              {"online_batch_secs", p.online_batch_secs},
              {"store_batch_secs", p.store_batch_secs},
              {"max_seq_len", p.max_seq_len}};
}

PipelineSettings pipeline_settings_from_json(const Json& j) {
  PipelineSettings p;
  if (j.contains("window")) p.window = window_config_from_json(j.at("window"));
  return parse_config("pipeline", [&] {
    p.online_batch_secs = j.value("online_batch_secs", p.online_batch_secs);
    p.store_batch_secs = j.value("store_batch_secs", p.store_batch_secs);
    p.max_seq_len = j.value("max_seq_len", p.max_seq_len);
    return p;
  });
}

std::string config_hash(const Json& j) {
  const std::string s = j.dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
  return buf;
}

void write_dataset_info(const fs::path& dir, const DatasetInfo& info) {
  const Json j{{"catalog_size", info.catalog_size}, {"max_seq_len", info.max_seq_len}};
  write_text(dir / "dataset.json", j.dump(2) + "\n");
}

DatasetInfo read_dataset_info(const fs::path& dir) {
  const Json j = read_json(dir / "dataset.json");
  DatasetInfo info;
  try {
    info.catalog_size = j.at("catalog_size").get<int>();
    info.max_seq_len = j.at("max_seq_len").get<int>();
  } catch (const Json::exception& e) {
    throw DataError("bad dataset.json in " + dir.string() + ": " + e.what());
  }
  if (info.catalog_size < 1 || info.max_seq_len < 1) {
    throw DataError("dataset.json holds non-positive sizes");
  }
  return info;
}

std::vector<HybridSequence> load_dataset(const fs::path& dir) {
  const DatasetInfo info = read_dataset_info(dir);
  OfflineStore store(dir);
  return latest_sequences(store, Catalog{info.catalog_size},
                          static_cast<std::size_t>(info.max_seq_len));
}

void ExperimentConfig::validate() const {
  gen.validate();
  pipeline.window.validate();
  if (pipeline.online_batch_secs < 1 || pipeline.store_batch_secs < 1 ||
      pipeline.max_seq_len < 1) {
    throw ConfigError("pipeline batch spans and max_seq_len must be positive");
  }
  train.validate();
  if (eval.negatives < 1 || eval.k < 1) throw ConfigError("eval negatives and k must be positive");
  if (variants.empty()) throw ConfigError("no variants selected");
  if (seeds.empty()) throw ConfigError("no seeds given");
  ModelConfig m = model;
  m.catalog_size = gen.catalog_size;
  m.max_seq_len = train.max_seq_len;
  m.validate();
}

Json to_json(const ExperimentConfig& c) {
  Json variants = Json::array();
  for (Variant v : c.variants) variants.push_back(std::string(to_string(v)));
  return Json{{"gen", to_json(c.gen)},
              {"pipeline", to_json(c.pipeline)},
              {"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"eval", to_json(c.eval)},
              {"variants", variants},
              {"seeds", c.seeds}};
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  if (j.contains("gen")) c.gen = gen_config_from_json(j.at("gen"));
  if (j.contains("pipeline")) c.pipeline = pipeline_settings_from_json(j.at("pipeline"));
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("eval")) c.eval = eval_options_from_json(j.at("eval"));
  parse_config("experiment", [&] {
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j.at("variants")) c.variants.push_back(parse_variant(v.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    return 0;
  });
  return c;
}

const VariantResult* ExperimentReport::find(Variant v) const {
  for (const auto& r : variants) {
    if (r.variant == v) return &r;
  }
  return nullptr;
}

Json ExperimentReport::to_json() const {
  const VariantResult* base = find(Variant::kOnlineOnly);
  Json rows = Json::array();
  for (const auto& r : variants) {
    Json row{{"variant", std::string(to_string(r.variant))},
             {"hit10", r.mean_hit10},
             {"ndcg10", r.mean_ndcg10},
             {"per_seed", {{"hit10", r.hit10}, {"ndcg10", r.ndcg10}, {"selected_epoch", r.selected_epoch}}}};
    if (base && base->mean_hit10 > 0.0 && base->mean_ndcg10 > 0.0) {
      row["hit10_vs_online_only"] = r.mean_hit10 / base->mean_hit10 - 1.0;
      row["ndcg10_vs_online_only"] = r.mean_ndcg10 / base->mean_ndcg10 - 1.0;
    }
    rows.push_back(std::move(row));
  }
  return Json{{"seeds", seeds}, {"users", users}, {"variants", rows}};
}

std::string ExperimentReport::markdown() const {
  const VariantResult* base = find(Variant::kOnlineOnly);
  double best_hit = -1.0;
  double best_ndcg = -1.0;
  for (const auto& r : variants) {
    best_hit = std::max(best_hit, r.mean_hit10);
    best_ndcg = std::max(best_ndcg, r.mean_ndcg10);
  }
  auto cell = [](double v, double best) {
    const std::string s = format_fixed(v, 4);
    return v == best ? "**" + s + "**" : s;
  };
  auto delta = [](double v, double b) {
    if (b <= 0.0) return std::string("n/a");
    const double pct = (v / b - 1.0) * 100.0;
    return (pct >= 0.0 ? "+" : "") + format_fixed(pct, 2) + "%";
  };
  std::ostringstream os;
  os << "| Method | Hit@10 | NDCG@10 | Hit@10 vs online-only | NDCG@10 vs online-only |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& r : variants) {
    os << "| " << to_string(r.variant) << " | " << cell(r.mean_hit10, best_hit) << " | "
       << cell(r.mean_ndcg10, best_ndcg) << " | ";
    if (base) {
      os << delta(r.mean_hit10, base->mean_hit10) << " | " << delta(r.mean_ndcg10, base->mean_ndcg10);
    } else {
      os << "n/a | n/a";
    }
    os << " |\n";
  }
  os << "\nMeans over seeds";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? ", " : " ") << seeds[i];
  os << "; " << users << " evaluated users per seed.\n";
  return os.str();
}

StageError::StageError(std::string stage, const std::exception& cause)
    : std::runtime_error(stage + ": " + cause.what()),
      stage_(std::move(stage)),
      exit_code_(exit_code_for(cause)) {}

int exit_code_for(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->exit_code();
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return 2;
  return 3;
}

namespace {

std::vector<HybridSequence> sequences_from_cache(const OnlineCache& cache, Catalog catalog,
                                                 std::size_t max_seq_len) {
  std::vector<HybridSequence> out;
  for (const auto& r : cache.records(kSequenceSchema)) {
    out.push_back(sequence_from_json(r.payload, catalog, max_seq_len));
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::optional<fs::path>& out,
                                const ExperimentHooks& hooks) {
  stage("config", [&] {
    cfg.validate();
    return 0;
  });
  if (out) {
    stage("output", [&] {
      std::error_code ec;
      fs::create_directories(*out / "runs", ec);
      if (ec) throw DataError("cannot create " + out->string() + ": " + ec.message());
      write_text(*out / "config.json", to_json(cfg).dump(2) + "\n");
      return 0;
    });
  }

  ExperimentReport report;
  report.seeds = cfg.seeds;
  for (Variant v : cfg.variants) report.variants.push_back(VariantResult{v, {}, {}, {}, 0.0, 0.0});

  Json artifacts = Json::array();
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    GenConfig gen = cfg.gen;
    gen.seed = seed;
    const Corpus corpus = stage("generate", [&] { return generate(gen); });

    const auto data = stage("pipeline", [&] {
      PipelineConfig pcfg{cfg.pipeline.window, static_cast<std::size_t>(cfg.pipeline.max_seq_len),
                          Catalog{gen.catalog_size}};
      FeatureRegistry registry;
      OnlineCache cache;
      run_pipeline(online_micro_batches(corpus.online, cfg.pipeline.online_batch_secs),
                   store_batches(corpus.store, cfg.pipeline.store_batch_secs), pcfg, registry, cache,
                   nullptr);
      return sequences_from_cache(cache, pcfg.catalog, pcfg.max_seq_len);
    });

    ModelConfig model = cfg.model;
    model.catalog_size = gen.catalog_size;
    TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;

    for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
      const Variant variant = cfg.variants[vi];
      std::string log;
      TrainHooks th;
      th.on_example = hooks.on_example;
      th.on_epoch = [&](const EpochLog& e) {
        Json rec{{"epoch", e.epoch}, {"loss", e.loss}};
        rec["val_hit10"] = e.val_hit10 ? Json(*e.val_hit10) : Json(nullptr);
        rec["val_ndcg10"] = e.val_ndcg10 ? Json(*e.val_ndcg10) : Json(nullptr);
        log += rec.dump() + "\n";
        if (hooks.on_epoch) hooks.on_epoch(seed, variant, e);
      };
      const TrainResult trained = stage("train", [&] { return train(data, variant, model, tcfg, th); });
      const EvalReport eval = stage("evaluate", [&] {
        return evaluate(trained.params, trained.config, variant, data, seed, cfg.eval);
      });
      if (hooks.on_eval_record) {
        for (const auto& r : eval.records) hooks.on_eval_record(r);
      }
      auto& row = report.variants[vi];
      row.hit10.push_back(eval.hit10);
      row.ndcg10.push_back(eval.ndcg10);
      row.selected_epoch.push_back(trained.selected_epoch);
      if (si == 0 && vi == 0) report.users = eval.users;

      if (out) {
        stage("output", [&] {
          const std::string stem = "runs/seed-" + std::to_string(seed) + "-" + std::string(to_string(variant));
          save_checkpoint(*out / (stem + ".ckpt"), trained.config, trained.params,
                          std::string(to_string(variant)), seed);
          write_text(*out / (stem + ".metrics.jsonl"), log);
          artifacts.push_back(stem + ".ckpt");
          artifacts.push_back(stem + ".metrics.jsonl");
          return 0;
        });
      }
    }
  }
  for (auto& row : report.variants) {
    row.mean_hit10 = mean(row.hit10);
    row.mean_ndcg10 = mean(row.ndcg10);
  }

  if (out) {
    stage("output", [&] {
      write_text(*out / "report.json", report.to_json().dump(2) + "\n");
      write_text(*out / "report.md", report.markdown());
      artifacts.push_back("config.json");
      artifacts.push_back("report.json");
      artifacts.push_back("report.md");
      const Json config = to_json(cfg);
      Json pipeline_cfg = config.at("pipeline");
      const Json manifest{
          {"tool_version", kToolVersion},
          {"seeds", cfg.seeds},
          {"config_hashes",
           {{"gen", config_hash(config.at("gen"))},
            {"pipeline", config_hash(pipeline_cfg)},
            {"model", config_hash(config.at("model"))},
            {"train", config_hash(config.at("train"))},
            {"eval", config_hash(config.at("eval"))}}},
          {"artifacts", artifacts},
          {"config", config}};
      write_text(*out / "manifest.json", manifest.dump(2) + "\n");
      return 0;
    });
  }
  return report;
}

ExperimentConfig config_from_manifest(const fs::path& path) {
  const Json m = read_json(path);
  if (!m.is_object() || !m.contains("config") || !m.contains("config_hashes")) {
    throw ConfigError("manifest lacks config or config_hashes");
  }
  const Json& config = m.at("config");
  const Json& hashes = m.at("config_hashes");
  for (const char* key : {"gen", "pipeline", "model", "train", "eval"}) {
    if (!config.contains(key) || !hashes.contains(key) ||
        hashes.at(key) != config_hash(config.at(key))) {
      throw ConfigError(std::string("manifest hash mismatch for ") + key + " config");
    }
  }
  return experiment_config_from_json(config);
}

}  // namespace omniseq
