#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = AREMB_CLI_PATH;

// Small enough that every command finishes in seconds.
const std::string kTiny =
    " --n-train 48 --n-eval 24 --dim 16 --n-layers 1 --n-heads 2 --pretrain-epochs 1"
    " --ic-records 16 --ic-batch 8 --cda-epochs 1 --cda-batch 8 --checkpoint-every 16";

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Result run(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = kCli + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root;
  static fs::path base;  // gen-data + train-ic outputs shared by the read-only tests

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / ("aremb_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    base = root / "base";
    fs::create_directories(base);
    ASSERT_EQ(run("gen-data --seed 3 --out " + base.string() + kTiny, root).code, 0);
    ASSERT_EQ(run("train-ic --seed 3 --out " + base.string() + kTiny, root).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  fs::path dir(const std::string& name) {
    fs::path d = root / name;
    fs::create_directories(d);
    return d;
  }
};

fs::path Cli::root;
fs::path Cli::base;

TEST_F(Cli, GenDataIsByteIdenticalAcrossRuns) {
  auto a = dir("gen_a"), b = dir("gen_b");
  ASSERT_EQ(run("gen-data --seed 7 --out " + a.string() + kTiny, root).code, 0);
  ASSERT_EQ(run("gen-data --seed 7 --out " + b.string() + kTiny, root).code, 0);
  EXPECT_EQ(slurp(a / "train.jsonl"), slurp(b / "train.jsonl"));
  EXPECT_EQ(slurp(a / "eval.jsonl"), slurp(b / "eval.jsonl"));
  auto c = dir("gen_c");
  ASSERT_EQ(run("gen-data --seed 8 --out " + c.string() + kTiny, root).code, 0);
  EXPECT_NE(slurp(a / "train.jsonl"), slurp(c / "train.jsonl"));
}

TEST_F(Cli, GenDataWritesRequestedCount) {
  auto d = dir("gen_count");
  const Result r = run("gen-data --n-train 1000 --out " + d.string(), root);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(d / "train.jsonl")), 1000u);
  EXPECT_EQ(nlohmann::json::parse(r.out)["train"], 1000);
}

TEST_F(Cli, InfeasibleSetSizeIsUsageError) {
  const Result r = run("gen-data --set-size 40 --out " + dir("gen_bad").string(), root);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST_F(Cli, UnknownFlagAndMissingCommandAreUsageErrors) {
  EXPECT_EQ(run("gen-data --no-such-flag 1", root).code, 2);
  EXPECT_EQ(run("", root).code, 2);
  EXPECT_EQ(run("--help", root).code, 0);
}

TEST_F(Cli, FlagOverridesConfigFileOverridesDefault) {
  const fs::path cfg = root / "cfg.json";
  {
    std::ofstream os(cfg);
    os << R"({"n_train": 30, "n_eval": 5})";
  }
  auto a = dir("prec_file"), b = dir("prec_flag");
  ASSERT_EQ(run("gen-data --config " + cfg.string() + " --out " + a.string(), root).code, 0);
  ASSERT_EQ(run("gen-data --config " + cfg.string() + " --n-train 40 --out " + b.string(), root).code, 0);
  EXPECT_EQ(count_lines(slurp(a / "train.jsonl")), 30u);
  EXPECT_EQ(count_lines(slurp(b / "train.jsonl")), 40u);
  EXPECT_EQ(count_lines(slurp(b / "eval.jsonl")), 5u);
}

TEST_F(Cli, BadConfigFilesAreUsageErrors) {
  const fs::path unknown = root / "unknown.json";
  const fs::path broken = root / "broken.json";
  {
    std::ofstream(unknown) << R"({"n_trian": 30})";
    std::ofstream(broken) << "{";
  }
  const Result r = run("gen-data --config " + unknown.string(), root);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("n_trian"), std::string::npos);
  EXPECT_EQ(run("gen-data --config " + broken.string(), root).code, 2);
  EXPECT_EQ(run("gen-data --config " + (root / "absent.json").string(), root).code, 2);
}

TEST_F(Cli, TrainIcIsDeterministicAndLogsEveryStep) {
  auto d = dir("ic_again");
  ASSERT_EQ(run("train-ic --seed 3 --data " + (base / "train.jsonl").string() + " --out " + d.string() + kTiny, root)
                .code,
            0);
  EXPECT_EQ(slurp(d / "encoder_ic.ckpt"), slurp(base / "encoder_ic.ckpt"));
  EXPECT_EQ(slurp(d / "decoder.ckpt"), slurp(base / "decoder.ckpt"));
  EXPECT_EQ(slurp(d / "ic_loss.csv"), slurp(base / "ic_loss.csv"));

  const std::string csv = slurp(base / "ic_loss.csv");
  ASSERT_EQ(csv.substr(0, csv.find('\n')), "step,loss");
  // 16 records -> 32 samples, batch 8, 2 epochs.
  EXPECT_EQ(count_lines(csv), 1u + 8u);
  const auto summary = nlohmann::json::parse(slurp(base / "ic_summary.json"));
  EXPECT_LT(summary["final_nll"].get<double>(), summary["initial_nll"].get<double>());
}

TEST_F(Cli, TrainIcWithoutDataIsUsageError) {
  const Result r = run("train-ic --out " + dir("ic_missing").string() + kTiny, root);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.jsonl"), std::string::npos);
}

TEST_F(Cli, TrainCdaEchoesVariantAndLeavesInputsUntouched) {
  const std::string enc_before = slurp(base / "encoder_ic.ckpt");
  const std::string dec_before = slurp(base / "decoder.ckpt");
  auto d = dir("cda_kl");
  const std::string inputs = " --data " + (base / "train.jsonl").string() + " --encoder " +
                             (base / "encoder_ic.ckpt").string() + " --decoder " + (base / "decoder.ckpt").string();
  ASSERT_EQ(run("train-cda --variant kl --out " + d.string() + inputs + kTiny, root).code, 0);
  const std::string csv = slurp(d / "cda_loss.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,loss,variant");
  EXPECT_NE(csv.find(",kl\n"), std::string::npos);
  // 48 records, batch 8, one epoch.
  EXPECT_EQ(count_lines(csv), 1u + 6u);
  EXPECT_EQ(slurp(base / "encoder_ic.ckpt"), enc_before);
  EXPECT_EQ(slurp(base / "decoder.ckpt"), dec_before);

  auto d2 = dir("cda_kl_again");
  ASSERT_EQ(run("train-cda --variant kl --out " + d2.string() + inputs + kTiny, root).code, 0);
  EXPECT_EQ(slurp(d2 / "encoder_cda.ckpt"), slurp(d / "encoder_cda.ckpt"));
  EXPECT_EQ(slurp(d2 / "cda_loss.csv"), csv);
}

TEST_F(Cli, TrainCdaErrors) {
  EXPECT_EQ(run("train-cda --variant nope --out " + base.string() + kTiny, root).code, 2);
  const Result r = run("train-cda --out " + dir("cda_missing").string() + " --data " +
                           (base / "train.jsonl").string() + kTiny,
                       root);
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, TrainCdaFromScratchWarns) {
  auto d = dir("cda_scratch");
  const Result r = run("train-cda --from-scratch --out " + d.string() + " --data " + (base / "train.jsonl").string() +
                           " --decoder " + (base / "decoder.ckpt").string() + kTiny,
                       root);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "encoder_cda.ckpt"));
}

TEST_F(Cli, EvalReportHasFiniteKeysAndEchoesPooling) {
  for (const std::string pooling : {"mean_compressed", "last_token"}) {
    auto d = dir("eval_" + pooling);
    const Result r = run("eval --pooling " + pooling + " --encoder " + (base / "encoder_ic.ckpt").string() +
                             " --eval-data " + (base / "eval.jsonl").string() + " --out " + d.string(),
                         root);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    for (const char* key : {"spearman", "alignment", "uniformity"}) {
      ASSERT_TRUE(j.contains(key)) << key;
      EXPECT_TRUE(std::isfinite(j[key].get<double>())) << key;
    }
    EXPECT_EQ(j["n_pairs"], 24);
    EXPECT_EQ(j["pooling"], pooling);
    EXPECT_EQ(slurp(d / "report.json"), r.out);
  }
}

TEST_F(Cli, EmbedEmitsOneLinePerInput) {
  const std::string enc = " --encoder " + (base / "encoder_ic.ckpt").string();
  const Result r = run("embed --text \"e1 a2 e3\" --text e4" + enc, root);
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(count_lines(r.out), 2u);
  const auto first = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
  EXPECT_EQ(first["embedding"].size(), 16u);
  EXPECT_EQ(first["tokens"].back(), 2);  // <eos> appended

  const Result file = run("embed --input " + (base / "eval.jsonl").string() + enc, root);
  ASSERT_EQ(file.code, 0);
  EXPECT_EQ(count_lines(file.out), 24u);
  EXPECT_EQ(run("embed --text \"e1 zz\"" + enc, root).code, 2);
  EXPECT_EQ(run("embed" + enc, root).code, 2);
}

TEST_F(Cli, CompareEmitsBothCurvesDeterministically) {
  auto a = dir("cmp_a"), b = dir("cmp_b");
  const std::string inputs = " --data " + (base / "train.jsonl").string() + " --eval-data " +
                             (base / "eval.jsonl").string() + " --encoder " + (base / "encoder_ic.ckpt").string() +
                             " --decoder " + (base / "decoder.ckpt").string();
  ASSERT_EQ(run("compare --seed 3 --out " + a.string() + inputs + kTiny, root).code, 0);
  ASSERT_EQ(run("compare --seed 3 --out " + b.string() + inputs + kTiny, root).code, 0);
  const std::string csv = slurp(a / "compare.csv");
  EXPECT_EQ(csv, slurp(b / "compare.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,samples,epoch,spearman");
  // 48 records, one epoch, a checkpoint every 16 -> 3 per method.
  EXPECT_EQ(count_lines(csv), 1u + 2u * 3u);
  EXPECT_NE(csv.find("\ncda,16,1,"), std::string::npos);
  EXPECT_NE(csv.find("\ninfonce,48,1,"), std::string::npos);
}

TEST_F(Cli, GradcheckPassesAndDetectsInjectedFault) {
  const Result ok = run("gradcheck --points 1", root);
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_EQ(count_lines(ok.out), 1u + 6u);
  EXPECT_NE(ok.out.find("kl,"), std::string::npos);
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);

  const Result bad = run("gradcheck --points 1 --inject-fault", root);
  EXPECT_EQ(bad.code, 1);
  EXPECT_EQ(bad.out.find("PASS"), std::string::npos);
}

}  // namespace
