#include "cli.h"

#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ansel/errors.h"
#include "test_util.h"

namespace ansel::cli {
namespace {

using ansel::testing::read_file;
using ansel::testing::TempDir;
using ansel::testing::write_file;

struct Result {
  int code;
  std::string out;
};

Result call(std::vector<std::string> args) {
  ::setenv("ANSEL_LOG", "quiet", 1);
  args.insert(args.begin(), "ansel");
  std::ostringstream out;
  const int code = run(args, out);
  return {code, out.str()};
}

TEST(Config, EmptyTextGivesDefaults) {
  EXPECT_EQ(parse_config(""), RunConfig{});
  EXPECT_EQ(parse_config("# only a comment\n\n"), RunConfig{});
}

TEST(Config, ParsesTypedValues) {
  RunConfig c = parse_config("lr = 1e-3\nepochs=5\nmode=frozen_encoder\ncasing=cased\n");
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.epochs, 5u);
  EXPECT_EQ(c.mode, FinetuneMode::kFrozenEncoder);
  EXPECT_EQ(c.casing, CasingMode::kCased);
}

TEST(Config, FormatRoundTrips) {
  RunConfig c;
  c.command = "finetune";
  c.lr = 0.1 + 0.2;  // not exactly representable in short decimal
  c.data_dir = "some dir/with space";
  c.stat = "rr";
  c.seed = 123456789012345ULL;
  EXPECT_EQ(parse_config(format_config(c)), c);
}

TEST(Config, UnknownKeyAndBadValueRejected) {
  EXPECT_THROW(parse_config("learning_rate=1\n"), ConfigError);
  EXPECT_THROW(parse_config("epochs=two\n"), ConfigError);
  EXPECT_THROW(parse_config("epochs=-1\n"), ConfigError);
  EXPECT_THROW(parse_config("mode=sometimes\n"), ConfigError);
  EXPECT_THROW(parse_config("no equals sign\n"), ConfigError);
}

TEST(Config, FlagOverridesFile) {
  TempDir dir("cfg");
  write_file(dir / "c.cfg", "lr=2e-5\nepochs=3\n");
  // eval with missing files fails after config resolution; the resolved
  // config is observable through the file-only path below.
  RunConfig from_file = load_config(dir / "c.cfg");
  EXPECT_EQ(from_file.lr, 2e-5);
  // Exercise the real precedence through gen-synth: the flag's seed wins.
  write_file(dir / "g.cfg", "seed=1\nquestions=10\ncandidates=3\ndocuments=5\nsentences=3\n");
  Result a = call({"gen-synth", "--config", (dir / "g.cfg").string(), "--seed", "2", "--data-dir",
                   (dir / "a").string()});
  Result b = call({"gen-synth", "--config", (dir / "g.cfg").string(), "--data-dir",
                   (dir / "b").string()});
  Result c = call({"gen-synth", "--seed", "2", "--questions", "10", "--candidates", "3",
                   "--documents", "5", "--sentences", "3", "--data-dir", (dir / "c").string()});
  ASSERT_EQ(a.code, kExitOk);
  ASSERT_EQ(b.code, kExitOk);
  ASSERT_EQ(c.code, kExitOk);
  EXPECT_EQ(read_file(dir / "a" / "train.tsv"), read_file(dir / "c" / "train.tsv"));
  EXPECT_NE(read_file(dir / "a" / "train.tsv"), read_file(dir / "b" / "train.tsv"));
}

TEST(Exit, UsageErrors) {
  EXPECT_EQ(call({}).code, kExitUsage);
  EXPECT_EQ(call({"dance"}).code, kExitUsage);
  EXPECT_EQ(call({"eval", "--bogus-flag", "1"}).code, kExitUsage);
  EXPECT_EQ(call({"eval", "--qrels", "q"}).code, kExitUsage);  // --run missing
  EXPECT_EQ(call({"eval", "--epochs", "x"}).code, kExitUsage);
}

TEST(Exit, MissingInputIsDataError) {
  EXPECT_EQ(call({"eval", "--run", "/nonexistent/r", "--qrels", "/nonexistent/q"}).code, kExitData);
}

TEST(Exit, HelpSucceeds) {
  Result r = call({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("--data-dir"), std::string::npos);
}

class TinyPipeline : public ::testing::Test {
 protected:
  TempDir dir{"pipe"};
  std::string d = (dir / "data").string();
  std::string v = (dir / "vocab.txt").string();

  void SetUp() override {
    ASSERT_EQ(call({"gen-synth", "--data-dir", d, "--questions", "20", "--candidates", "3",
                    "--documents", "20", "--sentences", "3"})
                  .code,
              kExitOk);
    ASSERT_EQ(call({"build-vocab", "--data-dir", d, "--vocab", v}).code, kExitOk);
  }

  std::vector<std::string> model_flags() const {
    return {"--layers", "1", "--hidden", "8", "--heads", "2", "--ffn", "16", "--max-positions", "32"};
  }
};

TEST_F(TinyPipeline, EvalAndCompareOnPerfectRun) {
  // A run that ranks the labelled candidate first for every question.
  const std::string qrels = d + "/test.qrels";
  std::istringstream in(read_file(qrels));
  std::string qid, cand, label;
  std::vector<std::pair<std::string, std::string>> rel, nonrel;
  std::ostringstream out;
  for (std::string line; std::getline(in, line);) {
    std::istringstream f(line);
    f >> qid >> cand >> label;
    (label == "1" ? rel : nonrel).emplace_back(qid, cand);
  }
  for (const auto& [q, c] : rel) out << q << '\t' << c << "\t1\t1\n";
  for (const auto& [q, c] : nonrel) out << q << '\t' << c << "\t9\t0\n";
  write_file(dir / "perfect.run", out.str());

  Result e = call({"eval", "--run", (dir / "perfect.run").string(), "--qrels", qrels});
  EXPECT_EQ(e.code, kExitOk);
  EXPECT_EQ(e.out.rfind("MAP 1.0000, MRR 1.0000", 0), 0u) << e.out;

  Result c = call({"compare", "--run-a", (dir / "perfect.run").string(), "--run-b",
                   (dir / "perfect.run").string(), "--qrels", qrels});
  EXPECT_EQ(c.code, kExitOk);
  EXPECT_NE(c.out.find("p=1\n"), std::string::npos) << c.out;
}

TEST_F(TinyPipeline, TrainRankAndAblate) {
  std::vector<std::string> pre{"pretrain", "--data-dir", d, "--vocab", v, "--ckpt-out",
                               (dir / "pre.ckpt").string(), "--steps", "3",
                               "--pretrain-batch-size", "4", "--pretrain-max-len", "24"};
  auto flags = model_flags();
  pre.insert(pre.end(), flags.begin(), flags.end());
  ASSERT_EQ(call(pre).code, kExitOk);
  EXPECT_TRUE(std::filesystem::exists(dir / "pre.ckpt.loss.tsv"));

  Result ft = call({"finetune", "--data-dir", d, "--vocab", v, "--ckpt-in",
                    (dir / "pre.ckpt").string(), "--ckpt-out", (dir / "ft.ckpt").string(),
                    "--epochs", "1", "--lr", "1e-3", "--max-len", "32"});
  ASSERT_EQ(ft.code, kExitOk) << ft.out;
  Result rk = call({"rank", "--data-dir", d, "--vocab", v, "--ckpt-in", (dir / "ft.ckpt").string(),
                    "--run-out", (dir / "ft.run").string(), "--max-len", "32"});
  ASSERT_EQ(rk.code, kExitOk);
  Result ev = call({"eval", "--run", (dir / "ft.run").string(), "--qrels", d + "/test.qrels"});
  EXPECT_EQ(ev.code, kExitOk);
  EXPECT_NE(ev.out.find("map="), std::string::npos);

  const std::string pre_bytes = read_file(dir / "pre.ckpt");
  Result ab = call({"ablate", "--data-dir", d, "--vocab", v, "--ckpt-in", (dir / "pre.ckpt").string(),
                    "--epochs", "1", "--lr", "1e-3", "--max-len", "32"});
  EXPECT_EQ(ab.code, kExitOk);
  EXPECT_NE(ab.out.find("mode=frozen_encoder"), std::string::npos);
  EXPECT_EQ(read_file(dir / "pre.ckpt"), pre_bytes);
}

TEST_F(TinyPipeline, VocabTooLargeForModelIsConfigError) {
  std::vector<std::string> pre{"pretrain", "--data-dir", d, "--vocab", v, "--ckpt-out",
                               (dir / "p.ckpt").string(), "--vocab-size", "6"};
  EXPECT_EQ(call(pre).code, kExitUsage);
}

}  // namespace
}  // namespace ansel::cli
