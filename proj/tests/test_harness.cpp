#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mat/config.hpp"
#include "mat/pipeline.hpp"
#include "support.hpp"

using namespace mat;
using namespace mat::testing;

namespace {

// Small enough to run in seconds, large enough for every stage to do real work.
const char* kQuick = R"(
seed = 3
textures.per_class = 40
model.widths = 4, 4, 8, 8
train.epochs = 3
train.lr = 0.05
trigger.q = 6
attacks = extract_soft, fineprune
attack.epochs = 1
attack.prune_acc_drop = 0.2
)";

ExperimentConfig quick(const std::string& dir, const std::string& extra = "") {
  auto cfg = parse_config(std::string(kQuick) + extra);
  cfg.output_dir = fresh_dir(dir);
  return cfg;
}

std::size_t manifest_lines(const std::filesystem::path& root) {
  std::ifstream in(root / kManifestFile);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

struct CliResult {
  int status = 0;
  std::string err;
};

CliResult cli(const std::string& args, const std::string& env = "") {
  const auto err_file = fresh_dir("cli_err") / "stderr.txt";
  const std::string cmd = env + " " MAT_CLI_PATH " " + args + " >/dev/null 2>" + err_file.string();
  const int raw = std::system(cmd.c_str());
  std::ifstream in(err_file);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, ss.str()};
}

}  // namespace

TEST(Config, DefaultsValidate) {
  const auto cfg = parse_config("");
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_TRUE(cfg.attacks.empty());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  try {
    parse_config("train.epochz = 3\n");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epochz"), std::string::npos);
  }
  EXPECT_THROW(parse_config("train.epochs = three\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  EXPECT_THROW(parse_config("attacks = teleport\n"), ConfigError);
  EXPECT_THROW(parse_config("source_fraction = 1.5\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("model.arch = mlp\nmodel.widths = 8, 8\nattacks = fineprune\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("dataset = csv\ndataset.path = /nonexistent/data.csv\n").validate(), ConfigError);
}

TEST(Config, HashIgnoresOutputDirButNotSeed) {
  auto a = parse_config("seed = 1\noutput_dir = x\n");
  auto b = parse_config("seed = 1\noutput_dir = y\n");
  EXPECT_EQ(a.hash(), b.hash());
  reseed(b, 2);
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(b.hash(), parse_config("seed = 2\n").hash());
}

TEST(Config, RelativePathsResolveAgainstTheConfigFile) {
  const auto dir = fresh_dir("config_paths");
  std::ofstream(dir / "exp.conf") << "output_dir = ../out\n";
  EXPECT_EQ(std::filesystem::weakly_canonical(load_config(dir / "exp.conf").output_dir),
            std::filesystem::weakly_canonical(dir / ".." / "out"));
}

TEST(ArtifactStore, RejectsPathsOutsideTheRoot) {
  ArtifactStore store(fresh_dir("store"));
  EXPECT_THROW(store.write("../escape.txt", "x"), PersistenceError);
  EXPECT_THROW(store.write("/tmp/abs.txt", "x"), PersistenceError);
  EXPECT_THROW(store.read(""), PersistenceError);
  const auto ref = store.write("a/b.txt", "hello");
  EXPECT_EQ(ref.sha256, sha256_hex("hello"));
  EXPECT_EQ(store.read("a/b.txt"), "hello");
}

TEST(Pipeline, FullRunIsHermeticAndValidates) {
  auto cfg = quick("pipe_full", "sweep.alpha = 0, 0.1\n");
  ArtifactStore audit(cfg.output_dir);
  const auto m = run_pipeline(cfg, {}, &audit);
  EXPECT_TRUE(m.missing().empty());
  EXPECT_TRUE(validate_manifest(cfg.output_dir).empty());
  const auto root = audit.root().string();
  for (const auto& p : audit.accessed()) EXPECT_EQ(p.string().rfind(root, 0), 0u) << p;

  for (const char* f : {"reports/results.csv", "reports/summary.txt", "reports/sweep_alpha.csv",
                        "reports/sweep_alpha.svg", "reports/verify_extract_soft.txt", "reports/verify_fineprune.txt",
                        "models/selector.ckpt", "models/source.ckpt", "models/benign.ckpt", "trigger/trigger_set.csv"})
    EXPECT_TRUE(audit.exists(f)) << f;
  const auto csv = audit.read("reports/results.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,test_acc,source_acc,trigger_acc,p_value,owned");
  EXPECT_NE(csv.find("\nextract_soft,"), std::string::npos);
  EXPECT_NE(csv.find("\nfineprune,"), std::string::npos);
  const auto sweep = audit.read("reports/sweep_alpha.csv");
  EXPECT_NE(sweep.find("\n0,"), std::string::npos);
  EXPECT_NE(sweep.find("\n0.1,"), std::string::npos);
}

TEST(Pipeline, ResumeReusesCompletedStagesAndRedoesTamperedOnes) {
  const auto cfg = quick("pipe_resume");
  run_pipeline(cfg);
  const auto first = manifest_lines(cfg.output_dir);
  const auto source_bytes = read_file_bytes(cfg.output_dir / "models/source.ckpt");
  run_pipeline(cfg);
  EXPECT_EQ(manifest_lines(cfg.output_dir), first + 2);  // new run header and report only

  {
    std::ofstream out(cfg.output_dir / "models/source.ckpt", std::ios::binary | std::ios::app);
    out << "tamper";
  }
  const auto problems = validate_manifest(cfg.output_dir);
  ASSERT_EQ(problems.size(), 1u);
  EXPECT_NE(problems[0].find("models/source.ckpt"), std::string::npos);
  run_pipeline(cfg);
  EXPECT_TRUE(validate_manifest(cfg.output_dir).empty());
  EXPECT_EQ(read_file_bytes(cfg.output_dir / "models/source.ckpt"), source_bytes);

  // A changed config does not reuse the old results.
  auto other = cfg;
  other.watermark.alpha = 0.05;
  const auto before = manifest_lines(cfg.output_dir);
  run_pipeline(other);
  EXPECT_GT(manifest_lines(cfg.output_dir), before + 6);
}

TEST(Pipeline, WithoutAttacksTheSourceIsVerified) {
  auto cfg = parse_config(std::string(kQuick) + "watermark.alpha = 0.1\n");
  cfg.attacks.clear();
  cfg.train.epochs = 8;
  cfg.output_dir = fresh_dir("pipe_self");
  const auto stages = planned_stages(cfg);
  EXPECT_EQ(stages.back(), "verify/source");
  const auto m = run_pipeline(cfg);
  ArtifactStore store(cfg.output_dir);
  const auto r = store.get_report(m.output("verify/source", "report").path);
  EXPECT_GT(r.suspect_trigger_acc, r.benign_trigger_acc);
}

TEST(Pipeline, PartialRunsAndReportErrors) {
  const auto cfg = quick("pipe_partial");
  const auto m = run_pipeline(cfg, {.until = Phase::source});
  EXPECT_TRUE(m.latest_ok("train-source", m.config_hash()));
  EXPECT_FALSE(m.latest("train-benign"));
  try {
    emit_report(cfg.output_dir);
    FAIL() << "report on an incomplete run succeeded";
  } catch (const ReportError& e) {
    EXPECT_NE(std::string(e.what()).find("train-benign"), std::string::npos);
  }
  EXPECT_THROW(emit_report(fresh_dir("pipe_empty")), ReportError);
}

TEST(Pipeline, FailedStageIsRecorded) {
  auto cfg = quick("pipe_fail");
  cfg.trigger.q = 100000;
  try {
    run_pipeline(cfg);
    FAIL() << "oversized trigger set accepted";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "select-trigger");
  }
  const auto m = load_manifest(cfg.output_dir);
  ASSERT_TRUE(m.latest("select-trigger"));
  EXPECT_EQ(m.latest("select-trigger")->status, "failed");
  EXPECT_FALSE(m.latest("select-trigger")->error.empty());
}

TEST(Cli, ExitCodesNameTheFailingStage) {
  EXPECT_NE(cli("").status, 0);
  const auto dir = fresh_dir("cli_cfg");
  std::ofstream(dir / "bad.conf") << "bogus.key = 1\n";
  auto r = cli("run --config " + (dir / "bad.conf").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("stage config"), std::string::npos) << r.err;

  r = cli("report --out " + fresh_dir("cli_empty").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("stage report"), std::string::npos) << r.err;

  std::ofstream(dir / "digits.conf") << "dataset = digits\n";
  r = cli("select-trigger --config " + (dir / "digits.conf").string() + " --out " + fresh_dir("cli_digits").string(),
          "MAT_DATA_CACHE=" + fresh_dir("cli_cache").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("stage ingest"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("cli_cache"), std::string::npos) << r.err;
}

TEST(Cli, PhaseCommandsStopAtTheirStage) {
  const auto dir = fresh_dir("cli_phase");
  std::ofstream(dir / "q.conf") << kQuick;
  const auto out = dir / "run";
  EXPECT_EQ(cli("train-source --config " + (dir / "q.conf").string() + " --out " + out.string()).status, 0);
  auto m = load_manifest(out);
  EXPECT_TRUE(m.latest("train-source"));
  EXPECT_FALSE(m.latest("train-benign"));
  EXPECT_EQ(cli("run --config " + (dir / "q.conf").string() + " --seed 3 --out " + out.string()).status, 0);
  EXPECT_TRUE(validate_manifest(out).empty());
  EXPECT_EQ(cli("report --out " + out.string()).status, 0);
}
