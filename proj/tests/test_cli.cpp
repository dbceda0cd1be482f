#include <gtest/gtest.h>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <thread>

#include "support.hpp"

namespace fs = std::filesystem;
using testing_support::read_file;
using testing_support::temp_dir;

namespace {

struct Child {
  pid_t pid = -1;
  fs::path out;
  fs::path err;
};

/// Starts the CLI with stdout and stderr redirected to files.
Child spawn(const std::vector<std::string>& args, const fs::path& log_dir, const std::string& tag) {
  Child c;
  c.out = log_dir / (tag + ".stdout");
  c.err = log_dir / (tag + ".stderr");
  c.pid = fork();
  if (c.pid == 0) {
    const int o = open(c.out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    const int e = open(c.err.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    dup2(o, 1);
    dup2(e, 2);
    std::vector<char*> argv;
    std::string exe = CURRILEARN_CLI_PATH;
    argv.push_back(exe.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy) argv.push_back(a.data());
    argv.push_back(nullptr);
    execv(exe.c_str(), argv.data());
    _exit(127);
  }
  return c;
}

int wait_exit(const Child& c) {
  int status = 0;
  waitpid(c.pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args, const fs::path& log_dir, const std::string& tag) {
  const Child c = spawn(args, log_dir, tag);
  const int code = wait_exit(c);
  return {code, read_file(c.out), read_file(c.err)};
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

/// Tiny dataset generated once and shared by the tests below.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = temp_dir("cli");
    const Result r = run({"synth", "--out", (root_ / "data").string(), "--seed", "7", "--set",
                          "synth.ulcer_patients=8", "--set", "synth.non_ulcer_patients=4", "--set",
                          "synth.frames_per_patient=10", "--set", "synth.image_side=64", "--set",
                          "synth.positive_fraction=0.3"},
                         root_, "setup");
    ASSERT_EQ(r.code, 0) << r.err;
  }

  static std::vector<std::string> small_train(const std::string& out, const std::string& variant) {
    return {"train", "--manifest", (root_ / "data").string(), "--out", out, "--variant", variant,
            "--set", "model.input_side=32", "--set", "train.batch_size=8", "--set",
            "curriculum.samples_per_epoch=16", "--set", "model.widths=4,4,4,4"};
  }

  static inline fs::path root_;
};

}  // namespace

TEST_F(CliTest, SynthIsDeterministic) {
  const auto tree = [](const fs::path& dir) {
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), dir), read_file(e.path()));
    }
    std::sort(files.begin(), files.end());
    return files;
  };
  const std::vector<std::string> common{"--seed", "7", "--set", "synth.ulcer_patients=3", "--set",
                                        "synth.non_ulcer_patients=1", "--set",
                                        "synth.frames_per_patient=4", "--set",
                                        "synth.image_side=48"};
  auto a = std::vector<std::string>{"synth", "--out", (root_ / "s1").string()};
  auto b = std::vector<std::string>{"synth", "--out", (root_ / "s2").string()};
  a.insert(a.end(), common.begin(), common.end());
  b.insert(b.end(), common.begin(), common.end());
  ASSERT_EQ(run(a, root_, "s1").code, 0);
  ASSERT_EQ(run(b, root_, "s2").code, 0);
  const auto ta = tree(root_ / "s1");
  EXPECT_EQ(ta, tree(root_ / "s2"));
  EXPECT_GE(ta.size(), 16u + 3u);
}

TEST_F(CliTest, MissingConfigFileIsAValidationError) {
  const Result r = run({"synth", "--out", (root_ / "nocfg").string(), "--config",
                        "/nonexistent/run.cfg"},
                       root_, "nocfg");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "/nonexistent/run.cfg")) << r.err;
}

TEST_F(CliTest, OutputCollisionNeedsForce) {
  const auto out = (root_ / "collide").string();
  fs::create_directories(out);
  const Result r = run({"eval", "--manifest", (root_ / "data").string(), "--out", out, "--oracle"},
                       root_, "collide");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "--force"));
  const Result forced = run(
      {"eval", "--manifest", (root_ / "data").string(), "--out", out, "--oracle", "--force"}, root_,
      "collide_force");
  EXPECT_EQ(forced.code, 0) << forced.err;
}

TEST_F(CliTest, UsageErrorsAndUnknownVariant) {
  EXPECT_EQ(run({"train"}, root_, "usage").code, 1);
  EXPECT_EQ(run({"bogus"}, root_, "usage2").code, 1);
  const Result r = run(small_train((root_ / "badvar").string(), "CURRIC_3"), root_, "badvar");
  EXPECT_EQ(r.code, 2);
  for (const char* name : {"RANDOM", "FULL", "CURRIC_2", "CURRIC_4", "CURRIC_5"}) {
    EXPECT_TRUE(contains(r.err, name)) << r.err;
  }
}

TEST_F(CliTest, OracleEvalIsPerfect) {
  const Result r = run({"eval", "--manifest", (root_ / "data").string(), "--out",
                        (root_ / "oracle_eval").string(), "--oracle", "--threshold", "0.4"},
                       root_, "oracle_eval");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "threshold: 0.4"));
  EXPECT_TRUE(contains(r.out, "F#0\tF#1\tF#2\tF#3\tAVG"));
  EXPECT_TRUE(contains(r.out, "accuracy\t100.00\t100.00\t100.00\t100.00\t100.00"));
  EXPECT_TRUE(contains(r.out, "auc\t100.00\t100.00\t100.00\t100.00\t100.00"));
  const std::string lines = read_file(root_ / "oracle_eval" / "report.jsonl");
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 5);
  EXPECT_TRUE(fs::exists(root_ / "oracle_eval" / "config.snapshot"));
}

TEST_F(CliTest, ScreenThresholdsValidated) {
  const Result r = run({"screen", "--manifest", (root_ / "data").string(), "--out",
                        (root_ / "bad_screen").string(), "--oracle", "--hi", "0.6", "--med", "0.8"},
                       root_, "bad_screen");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "screen.hi"));
}

TEST_F(CliTest, OracleScreenFlagsEveryUlcerPatient) {
  const Result r = run({"screen", "--manifest", (root_ / "data").string(), "--out",
                        (root_ / "screen").string(), "--oracle"},
                       root_, "screen");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "ulcer patients with a high-tier frame: 8/8"));
  const std::string summary = read_file(root_ / "screen" / "summary.tsv");
  EXPECT_EQ(summary.rfind("patient_id\tulcer\tframes\thigh\tmedium\tunflagged\tworkload_reduction\n", 0),
            0u);
  // 3 positives of 10 frames per ulcer patient, none for the others.
  EXPECT_TRUE(contains(summary, "P000\t1\t10\t3\t0\t7\t0.700000"));
  EXPECT_TRUE(contains(summary, "P011\t0\t10\t0\t0\t10\t1.000000"));
  EXPECT_EQ(std::distance(fs::directory_iterator(root_ / "screen" / "triage"), {}), 12);
}

TEST_F(CliTest, FullScheduleEcho) {
  auto args = small_train((root_ / "full").string(), "FULL");
  for (const char* s : {"train.epochs=2", "train.lr_drop_epochs=1", "curriculum.stage_epochs=1,0,0,0,1"}) {
    args.push_back("--set");
    args.push_back(s);
  }
  const Result r = run(args, root_, "full");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "schedule: epochs 1-2 stages {5}\n")) << r.out;
  EXPECT_TRUE(fs::exists(root_ / "full" / "checkpoint.bin"));
  const std::string metrics = read_file(root_ / "full" / "metrics.log");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 2);
  EXPECT_TRUE(contains(metrics, "\"stage_set\":[5]"));

  const Result e = run({"eval", "--manifest", (root_ / "data").string(), "--out",
                        (root_ / "full_eval").string(), "--checkpoint",
                        (root_ / "full" / "checkpoint.bin").string()},
                       root_, "full_eval");
  EXPECT_EQ(e.code, 0) << e.err;
}

TEST_F(CliTest, InterruptedTrainingKeepsPartialLogs) {
  const fs::path out = root_ / "interrupted";
  const Child c = spawn(small_train(out.string(), "CURRIC_5"), root_, "interrupted");
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::minutes(5);
  std::string metrics;
  while (std::chrono::steady_clock::now() < deadline) {
    metrics = read_file(out / "metrics.log");
    if (std::count(metrics.begin(), metrics.end(), '\n') >= 2) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  kill(c.pid, SIGINT);
  const int code = wait_exit(c);
  EXPECT_NE(code, 0);
  EXPECT_LT(code, 128) << "process died from the signal instead of handling it";

  const std::string echo = read_file(c.out);
  for (const char* line : {"schedule: epochs 1-20 stages {1}", "schedule: epochs 21-40 stages {2}",
                           "schedule: epochs 41-60 stages {3}", "schedule: epochs 61-80 stages {4}",
                           "schedule: epochs 81-120 stages {5}"}) {
    EXPECT_TRUE(contains(echo, line)) << echo;
  }
  EXPECT_TRUE(contains(echo, "epoch 1: stages {1}, lr 0.1"));
  EXPECT_FALSE(fs::exists(out / "checkpoint.bin"));
  metrics = read_file(out / "metrics.log");
  ASSERT_GE(std::count(metrics.begin(), metrics.end(), '\n'), 2);
  EXPECT_EQ(metrics.back(), '\n');
  EXPECT_EQ(metrics.rfind("{\"epoch\":1,\"stage_set\":[1],", 0), 0u);
  EXPECT_TRUE(fs::exists(out / "config.snapshot"));
}

TEST_F(CliTest, SnapshotReproducesTheRun) {
  const Result again = run({"synth", "--out", (root_ / "from_snapshot").string(), "--config",
                            (root_ / "data" / "config.snapshot").string()},
                           root_, "from_snapshot");
  ASSERT_EQ(again.code, 0) << again.err;
  for (const char* f : {"manifest.tsv", "dataset.meta"}) {
    EXPECT_EQ(read_file(root_ / "data" / f), read_file(root_ / "from_snapshot" / f)) << f;
  }
  EXPECT_EQ(read_file(root_ / "data" / "images" / "P003" / "P003_F004.png"),
            read_file(root_ / "from_snapshot" / "images" / "P003" / "P003_F004.png"));
  const std::string snap = read_file(root_ / "from_snapshot" / "config.snapshot");
  EXPECT_TRUE(contains(snap, "run.seed = 7  # file"));
}
