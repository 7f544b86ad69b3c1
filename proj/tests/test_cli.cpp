// Runs the gat binary as a subprocess.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "gat/data.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "gat_cli_test";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs `gat <args>` and returns its exit status; stderr goes to kRoot/stderr.txt.
int gat(const std::string& args) {
  const std::string cmd = std::string(GAT_CLI_PATH) + " " + args + " >" + (kRoot / "stdout.txt").string() +
                          " 2>" + (kRoot / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_stderr() { return slurp(kRoot / "stderr.txt"); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::create_directories(kRoot);
    std::ofstream(kRoot / "tiny.cfg") << "# small but learnable\n"
                                         "count = 60\nframes = 8\nvideo_dim = 4\naudio_dim = 4\nclasses = 4\n"
                                      << "dataset = " << (kRoot / "tiny.jsonl").string() << "\n"
                                      << "heads = 2\nhidden = 16\nexperts = 0,4\n"
                                         "epochs = 2\nbatch_size = 16\nlr = 0.01\nseed = 3\n";
    ASSERT_EQ(gat("gen-data -c " + cfg() + " -o " + (kRoot / "tiny.jsonl").string()), 0) << last_stderr();
  }

  static std::string cfg() { return (kRoot / "tiny.cfg").string(); }
  static std::string p(const std::string& name) { return (kRoot / name).string(); }
};

TEST_F(Cli, GenDataIsReadableAndDeterministic) {
  const gat::Dataset d = gat::read_dataset(kRoot / "tiny.jsonl");
  EXPECT_EQ(d.size(), 60u);
  EXPECT_EQ(d.frames, 8u);
  ASSERT_EQ(gat("gen-data -c " + cfg() + " -o " + p("again.jsonl")), 0);
  EXPECT_EQ(slurp(kRoot / "again.jsonl"), slurp(kRoot / "tiny.jsonl"));
  // The manifest is itself a config that regenerates the same file.
  ASSERT_EQ(gat("gen-data -c " + p("tiny.jsonl.manifest") + " -o " + p("from_manifest.jsonl")), 0);
  EXPECT_EQ(slurp(kRoot / "from_manifest.jsonl"), slurp(kRoot / "tiny.jsonl"));
}

TEST_F(Cli, GenDataRejectsSingleClass) {
  EXPECT_EQ(gat("gen-data --set classes=1 -o " + p("bad.jsonl")), 2);
  EXPECT_NE(last_stderr().find("K must be at least 2"), std::string::npos);
}

TEST_F(Cli, TrainWritesArtifactsDeterministically) {
  ASSERT_EQ(gat("train -c " + cfg() + " -m sa-ce -o " + p("sa1")), 0) << last_stderr();
  for (const char* f : {"checkpoint.bin", "train_log.jsonl", "metrics.json", "config.txt"}) {
    EXPECT_TRUE(fs::exists(kRoot / "sa1" / f)) << f;
  }
  ASSERT_EQ(gat("train -c " + cfg() + " -m sa-ce -o " + p("sa2")), 0);
  for (const char* f : {"checkpoint.bin", "train_log.jsonl", "metrics.json", "config.txt"}) {
    EXPECT_EQ(slurp(kRoot / "sa1" / f), slurp(kRoot / "sa2" / f)) << f;
  }
  // The echoed config reproduces the run on its own.
  ASSERT_EQ(gat("train -c " + p("sa1/config.txt") + " -o " + p("sa3")), 0);
  EXPECT_EQ(slurp(kRoot / "sa1" / "checkpoint.bin"), slurp(kRoot / "sa3" / "checkpoint.bin"));
}

TEST_F(Cli, FrobeniusWithZeroWeightMatchesPlainAdversarialTraining) {
  ASSERT_EQ(gat("train -c " + cfg() + " -m gat-fr --set beta_fr=0 -o " + p("fr0")), 0) << last_stderr();
  ASSERT_EQ(gat("train -c " + cfg() + " -m gmsa-adv -o " + p("adv")), 0);
  EXPECT_EQ(slurp(kRoot / "fr0" / "train_log.jsonl"), slurp(kRoot / "adv" / "train_log.jsonl"));
}

TEST_F(Cli, EvalAttackAttentionAndCompare) {
  ASSERT_EQ(gat("train -c " + cfg() + " -m gat-fr -o " + p("fr")), 0) << last_stderr();
  const std::string ck = " -k " + p("fr/checkpoint.bin");
  ASSERT_EQ(gat("eval -c " + cfg() + ck + " -o " + p("eval.json")), 0);
  ASSERT_EQ(gat("attack -c " + cfg() + ck + " -e 0 -o " + p("attack0.json")), 0);
  EXPECT_EQ(slurp(kRoot / "eval.json"), slurp(kRoot / "attack0.json"));
  EXPECT_EQ(slurp(kRoot / "eval.json"), slurp(kRoot / "fr" / "metrics.json"));

  ASSERT_EQ(gat("attack -c " + cfg() + ck + " -e 0.5 -o " + p("attack.json") + " --drift-out " + p("drift.json")), 0);
  const auto drift = nlohmann::json::parse(slurp(kRoot / "drift.json"));
  EXPECT_GT(drift["total"].get<double>(), 0.0);

  ASSERT_EQ(gat("attention -c " + cfg() + ck + " -i 5 -o " + p("att.csv")), 0) << last_stderr();
  std::istringstream csv(slurp(kRoot / "att.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "frame_index,global_weight,local_weight,adv_global_weight,adv_local_weight");
  while (std::getline(csv, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
  }
  EXPECT_EQ(rows, 8u);
  EXPECT_EQ(gat("attention -c " + cfg() + ck + " -i 999 -o " + p("none.csv")), 3);

  ASSERT_EQ(gat("eval -c " + cfg() + ck + " --split all --partitions 5 -o " + p("parts.json")), 0);
  const auto parts = nlohmann::json::parse(slurp(kRoot / "parts.json"));
  EXPECT_EQ(parts["parts"].size(), 5u);
  EXPECT_TRUE(parts["sd"].contains("gap"));

  ASSERT_EQ(gat("compare-classes " + p("attack.json") + " " + p("eval.json") + " -n 2 -o " + p("delta.csv")), 0);
  EXPECT_EQ(slurp(kRoot / "delta.csv").substr(0, 15), "class,ap_delta\n");
}

TEST_F(Cli, SweepRecordsFailedPointsWithoutFailing) {
  ASSERT_EQ(gat("sweep -c " + cfg() + " -m gmsa-ce -p window -g 4,1.5,2 -j 2 -o " + p("sweep.csv")), 0)
      << last_stderr();
  const std::string text = slurp(kRoot / "sweep.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_NE(text.find("window,1.5,,,\""), std::string::npos);
  ASSERT_EQ(gat("sweep -c " + cfg() + " -m gmsa-ce -p window -g 4,1.5,2 -o " + p("sweep_serial.csv")), 0);
  EXPECT_EQ(slurp(kRoot / "sweep_serial.csv"), text);
}

TEST_F(Cli, OverfitsATinyTrainingSet) {
  std::ofstream(kRoot / "memo.cfg") << "count = 40\nframes = 8\nvideo_dim = 4\naudio_dim = 4\nclasses = 4\n"
                                    << "noise = 0.3\nmax_labels = 1\n"
                                    << "dataset = " << p("memo.jsonl") << "\n"
                                    << "split = 20,10,10\nheads = 2\nhidden = 32\nexperts = 0,4\n"
                                       "epochs = 60\nbatch_size = 20\nlr = 0.01\nearly_stop_patience = 100\n"
                                       "lr_decay_factor = 1\nseed = 1\n";
  ASSERT_EQ(gat("gen-data -c " + p("memo.cfg") + " -o " + p("memo.jsonl")), 0);
  ASSERT_EQ(gat("train -c " + p("memo.cfg") + " -m gmsa-ce -o " + p("memo")), 0) << last_stderr();
  ASSERT_EQ(gat("eval -c " + p("memo.cfg") + " -k " + p("memo/checkpoint.bin") + " --split train -o " +
                p("memo_train.json")),
            0);
  EXPECT_EQ(nlohmann::json::parse(slurp(kRoot / "memo_train.json"))["hit_at_1"].get<double>(), 1.0);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(gat("train -c " + cfg() + " --set bogus=1 -o " + p("x")), 2);
  EXPECT_NE(last_stderr().find("unknown config key 'bogus'"), std::string::npos);
  EXPECT_EQ(gat("train -c " + cfg() + " -m fancy -o " + p("x")), 2);
  EXPECT_EQ(gat("frobnicate"), 2);
  EXPECT_EQ(gat("eval -c " + cfg() + " -k " + p("missing.bin")), 3);
  ASSERT_EQ(gat("train -c " + cfg() + " -m sa-ce -o " + p("codes")), 0);
  EXPECT_EQ(gat("eval -c " + cfg() + " -k " + p("codes/checkpoint.bin") + " --data " + p("missing.jsonl")), 3);
  EXPECT_EQ(gat("eval -c " + cfg() + " -k " + p("codes/checkpoint.bin") + " --split nope"), 2);
  EXPECT_EQ(gat("train -c " + cfg() + " --set lr=1e300 -o " + p("nan")), 4);
  EXPECT_NE(last_stderr().find("numeric error"), std::string::npos);
  EXPECT_EQ(gat("--help"), 0);
}

}  // namespace
