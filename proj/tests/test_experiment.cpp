#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "omniseq/experiment.hpp"

using namespace omniseq;
namespace fs = std::filesystem;

namespace {

ExperimentConfig smoke_config() {
  ExperimentConfig c;
  c.gen.users = 200;
  c.gen.catalog_size = 500;
  c.gen.intents = 10;
  c.gen.items_per_intent = 50;
  c.model.dim = 16;
  c.train.epochs = 3;
  c.train.batch_size = 32;
  c.seeds = {1};
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("omniseq_exp_" + name);
  fs::remove_all(p);
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(OMNISEQ_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = smoke_config();
  c.train.mode = SplitMode::kPaper;
  c.train.lr = 0.005;
  c.eval.exclude_history = false;
  c.pipeline.window = {3600, 600};
  c.variants = {Variant::kOnlineOnly, Variant::kAttnEncoder};
  c.seeds = {3, 4};
  const Json j = to_json(c);
  EXPECT_EQ(to_json(experiment_config_from_json(j)), j);
  EXPECT_EQ(config_hash(j), config_hash(to_json(experiment_config_from_json(j))));
  EXPECT_THROW(experiment_config_from_json(Json::parse(R"({"variants":["nope"]})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(Json::parse("[1]")), ConfigError);
}

TEST(Config, HashIsSensitive) {
  TrainConfig a;
  TrainConfig b;
  b.lr = 0.002;
  EXPECT_NE(config_hash(to_json(a)), config_hash(to_json(b)));
  EXPECT_EQ(config_hash(to_json(a)), config_hash(to_json(TrainConfig{})));
}

TEST(Report, MarkdownBoldsBestAndShowsDeltas) {
  ExperimentReport r;
  r.seeds = {1};
  r.users = 10;
  auto row = [](Variant v, double h, double n) {
    VariantResult x;
    x.variant = v;
    x.hit10 = {h};
    x.ndcg10 = {n};
    x.mean_hit10 = h;
    x.mean_ndcg10 = n;
    return x;
  };
  r.variants = {row(Variant::kOnlineOnly, 0.5, 0.25), row(Variant::kWithStore, 0.55, 0.2),
                row(Variant::kAvgEncoder, 0.6, 0.3), row(Variant::kAttnEncoder, 0.5, 0.35)};
  const std::string md = r.markdown();
  EXPECT_NE(md.find("| online-only | 0.5000 | 0.2500 | +0.00% | +0.00% |"), std::string::npos) << md;
  EXPECT_NE(md.find("| w-store | 0.5500 | 0.2000 | +10.00% | -20.00% |"), std::string::npos) << md;
  EXPECT_NE(md.find("| avg-enc | **0.6000** | 0.3000 | +20.00% | +20.00% |"), std::string::npos) << md;
  EXPECT_NE(md.find("| attn-enc | 0.5000 | **0.3500** | +0.00% | +40.00% |"), std::string::npos) << md;
  const Json j = r.to_json();
  EXPECT_NEAR(j.at("variants").at(3).at("ndcg10_vs_online_only").get<double>(), 0.4, 1e-12);
}

TEST(Experiment, SmokeReportShapeAndManifestRerun) {
  const fs::path out = scratch("smoke");
  const ExperimentConfig cfg = smoke_config();
  const ExperimentReport rep = run_experiment(cfg, out);
  ASSERT_EQ(rep.variants.size(), 4u);
  for (Variant v : kAllVariants) {
    const VariantResult* r = rep.find(v);
    ASSERT_NE(r, nullptr);
    EXPECT_EQ(r->hit10.size(), 1u);
    EXPECT_GE(r->mean_hit10, r->mean_ndcg10);
  }
  const Json j = rep.to_json();
  for (const auto& row : j.at("variants")) {
    EXPECT_TRUE(row.contains("hit10_vs_online_only"));
    EXPECT_TRUE(row.contains("ndcg10_vs_online_only"));
  }
  for (const char* f : {"config.json", "report.json", "report.md", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const Json manifest = Json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest.at("tool_version"), kToolVersion);
  for (const auto& a : manifest.at("artifacts")) {
    EXPECT_TRUE(fs::exists(out / a.get<std::string>())) << a;
  }

  const fs::path again = scratch("smoke_rerun");
  const ExperimentConfig back = config_from_manifest(out / "manifest.json");
  run_experiment(back, again);
  EXPECT_EQ(slurp(out / "report.json"), slurp(again / "report.json"));
  EXPECT_EQ(slurp(out / "report.md"), slurp(again / "report.md"));
  for (const auto& a : manifest.at("artifacts")) {
    EXPECT_EQ(slurp(out / a.get<std::string>()), slurp(again / a.get<std::string>())) << a;
  }

  // A tampered config no longer matches its recorded hash.
  Json tampered = manifest;
  tampered["config"]["train"]["lr"] = 0.5;
  std::ofstream(again / "bad_manifest.json") << tampered.dump();
  EXPECT_THROW(config_from_manifest(again / "bad_manifest.json"), ConfigError);
  fs::remove_all(out);
  fs::remove_all(again);
}

TEST(Experiment, StageErrorsCarryExitCodes) {
  ExperimentConfig cfg = smoke_config();
  cfg.gen.users = 5;
  cfg.gen.min_behaviors = 1;
  cfg.gen.mean_length = 1.0;
  cfg.variants = {Variant::kOnlineOnly};
  try {
    run_experiment(cfg);
    FAIL() << "expected a stage failure";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "train");
    EXPECT_EQ(e.exit_code(), 3);
  }
  EXPECT_EQ(exit_code_for(ConfigError("x")), 2);
  EXPECT_EQ(exit_code_for(DataError("x")), 3);
  EXPECT_EQ(exit_code_for(NumericError("x")), 4);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli_codes");
  EXPECT_EQ(cli("gen --bogus"), 2);
  EXPECT_EQ(cli("gen --rho 2 --out " + (dir / "g").string()), 2);
  EXPECT_EQ(cli("train --data " + (dir / "missing").string() + " --variant attn-enc --out " +
                (dir / "m.ckpt").string()),
            3);
  ASSERT_EQ(cli("gen --users 30 --items 400 --seed 1 --out " + (dir / "g").string()), 0);
  const std::string g = (dir / "g").string();
  ASSERT_EQ(cli("ingest --online " + g + "/online.jsonl --store " + g + "/store.jsonl --out " +
                (dir / "d").string()),
            0);
  EXPECT_EQ(cli("train --data " + (dir / "d").string() +
                " --variant attn-enc --epochs 1 --lr 1e308 --out " + (dir / "m.ckpt").string()),
            4);
  fs::remove_all(dir);
}

TEST(Cli, IdenticalInvocationsIdenticalBytes) {
  const fs::path dir = scratch("cli_det");
  for (const char* run : {"a", "b"}) {
    const fs::path r = dir / run;
    const std::string s = r.string();
    ASSERT_EQ(cli("gen --users 60 --items 200 --seed 5 --out " + s + "/gen"), 0);
    ASSERT_EQ(cli("ingest --online " + s + "/gen/online.jsonl --store " + s +
                  "/gen/store.jsonl --out " + s + "/data"),
              0);
    ASSERT_EQ(cli("train --data " + s + "/data --variant attn-enc --epochs 2 --dim 8 --seed 2 --out " +
                  s + "/m.ckpt"),
              0);
    ASSERT_EQ(cli("evaluate --ckpt " + s + "/m.ckpt --data " + s + "/data --seed 2 --out " + s +
                  "/eval.json"),
              0);
  }
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir / "a");
    // Paths embedded in outputs differ between the two run directories.
    std::string a = slurp(e.path());
    std::string b = slurp(dir / "b" / rel);
    for (auto* s : {&a, &b}) {
      const std::string from = (s == &a ? dir / "a" : dir / "b").string();
      for (std::size_t p; (p = s->find(from)) != std::string::npos;) s->replace(p, from.size(), "@");
    }
    EXPECT_EQ(a, b) << rel;
    ++compared;
  }
  EXPECT_GE(compared, 6u);
  fs::remove_all(dir);
}
