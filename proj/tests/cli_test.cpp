#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace {

namespace fs = std::filesystem;

const fs::path& workdir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "decg_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(DECG_CLI_PATH) + " " + args + " > " + path("stdout.txt") + " 2> " +
                          path("stderr.txt");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write(const std::string& p, const std::string& body) { std::ofstream(p, std::ios::binary) << body; }

// small network so the end-to-end runs stay quick
const std::string kTiny = " --set num_blocks=2 --set layers_per_block=2 --set growth_rate=4 --set stem_channels=8 ";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ASSERT_EQ(run("synth --schema beats --counts 10,6,6,4,4 --seed 1 --out " + path("beats.csv")), 0);
  }
};

TEST_F(Cli, TrainWritesWeightsAndReport) {
  ASSERT_EQ(run("train --data " + path("beats.csv") + " --epochs 1 --batch-size 8" + kTiny + "--out " +
                path("m.decg")),
            0)
      << read(path("stderr.txt"));
  EXPECT_TRUE(fs::exists(path("m.decg")));
  const std::string report = read(path("m.decg.report.txt"));
  EXPECT_NE(report.find("epochs=1\n"), std::string::npos) << report;
  EXPECT_NE(report.find("[epochs]"), std::string::npos);
  EXPECT_NE(report.find("model_hash="), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("train --epochs 1"), 2);
  EXPECT_EQ(run("train --data " + path("missing.csv") + " --epochs 1"), 2);
  EXPECT_EQ(run("crossval --data " + path("beats.csv") + " --k 1"), 2);
  EXPECT_EQ(run("train --data " + path("beats.csv") + " --set no_such_key=3"), 2);
  write(path("bad.cfg"), "epochs=1\nwarmup=5\n");
  EXPECT_EQ(run("train --config " + path("bad.cfg") + " --data " + path("beats.csv")), 2);
  EXPECT_NE(read(path("stderr.txt")).find("warmup"), std::string::npos);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(Cli, CrossvalIsReproducible) {
  const std::string args = "crossval --data " + path("beats.csv") + " --k 2 --epochs 1 --batch-size 8" + kTiny;
  ASSERT_EQ(run(args + "--out " + path("cv1.txt")), 0) << read(path("stderr.txt"));
  ASSERT_EQ(run(args + "--threads 2 --out " + path("cv2.txt")), 0);
  const std::string a = read(path("cv1.txt"));
  EXPECT_EQ(a, read(path("cv2.txt")));
  EXPECT_NE(a.find("[summary]"), std::string::npos);
  EXPECT_NE(a.find("[pooled confusion]"), std::string::npos);
}

TEST_F(Cli, ScoreLabelFiles) {
  write(path("ref.csv"), "a,N\nb,A\nc,O\nd,P\n");
  ASSERT_EQ(run("score --reference " + path("ref.csv") + " --predictions " + path("ref.csv")), 0);
  EXPECT_NE(read(path("stdout.txt")).find("all,final_f1,1.000000"), std::string::npos);
  write(path("pred.csv"), "a,N\nb,A\nzz,O\nd,P\n");
  EXPECT_EQ(run("score --reference " + path("ref.csv") + " --predictions " + path("pred.csv")), 2);
  write(path("probs.csv"), "a,0.7,0.1,0.1,0.1\nb,0.1,0.7,0.1,0.1\nc,0.1,0.1,0.7,0.1\nd,0.1,0.1,0.1,0.7\n");
  ASSERT_EQ(run("score --reference " + path("ref.csv") + " --predictions " + path("ref.csv") + " --probs " +
                path("probs.csv")),
            0);
  EXPECT_NE(read(path("stdout.txt")).find("all,macro_auc,1.000000"), std::string::npos);
}

TEST_F(Cli, ScoreConfusionTable) {
  write(path("conf.csv"),
        "reference\\predicted,N,A,O,P\nN,931,38,100,0\nA,0,870,222,0\nO,0,0,839,0\nP,0,0,0,50\n");
  ASSERT_EQ(run("score --confusion " + path("conf.csv")), 0) << read(path("stderr.txt"));
  const std::string out = read(path("stdout.txt"));
  EXPECT_NE(out.find("N,f1,0.931000"), std::string::npos) << out;
  EXPECT_NE(out.find("all,final_f1,0.880"), std::string::npos) << out;
}

TEST_F(Cli, CamExport) {
  if (!fs::exists(path("m.decg")))
    ASSERT_EQ(run("train --data " + path("beats.csv") + " --epochs 1" + kTiny + "--out " + path("m.decg")), 0);
  ASSERT_EQ(run("cam --weights " + path("m.decg") + " --data " + path("beats.csv") + " --ids 1,2 --out-dir " +
                path("cams")),
            0)
      << read(path("stderr.txt"));
  const std::string csv = read(path("cams/1.cam.csv"));
  EXPECT_EQ(csv.rfind("t_seconds,signal,cam_N,cam_S,cam_V,cam_F,cam_Q\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 188);
  EXPECT_NE(read(path("cams/1.cam.csv.meta")).find("model_hash="), std::string::npos);

  EXPECT_EQ(run("cam --weights " + path("m.decg") + " --data " + path("beats.csv") + " --ids nope --out-dir " +
                path("cams")),
            2);
  write(path("junk.decg"), "not a model");
  EXPECT_EQ(run("cam --weights " + path("junk.decg") + " --data " + path("beats.csv") + " --ids 1 --out-dir " +
                path("cams")),
            2);
}

}  // namespace
