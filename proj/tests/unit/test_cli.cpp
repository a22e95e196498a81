#include <doctest.h>

#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "protofuse/pipeline.hpp"
#include "protofuse_cli/cli.hpp"

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "protofuse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = protofuse::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("synth writes a loadable cohort") {
    oracle::ScratchDir dir("cli_synth");
    const auto cohort_dir = (dir.path() / "cohort").string();
    const Run r = run({"synth", "--patients", "100", "--seed", "7", "--out", cohort_dir});
    REQUIRE(r.code == 0);
    const auto c = protofuse::load_cohort(dir.path() / "cohort" / "manifest.json");
    CHECK(c.size() == 100);
  }

  TEST_CASE("configuration errors exit with 2") {
    CHECK(run({"train", "--task", "survival", "--epochs", "0", "--cohort", "x", "--out", "y"}).code == 2);
    CHECK(run({"train", "--no-such-flag"}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"--help"}).code == 0);
  }

  TEST_CASE("runtime failures exit with 1") {
    oracle::ScratchDir dir("cli_missing");
    const Run r = run({"eval", "--checkpoint", (dir.path() / "nothing").string(), "--cohort",
                       (dir.path() / "nothing.json").string(), "--out", (dir.path() / "o.tsv").string()});
    CHECK(r.code == 1);
    CHECK_FALSE(r.err.empty());
  }

  TEST_CASE("train, eval and explain on a small cohort") {
    oracle::ScratchDir dir("cli_train");
    const auto p = [&](const char* name) { return (dir.path() / name).string(); };
    REQUIRE(run({"synth", "--patients", "16", "--dim", "8", "--genes", "24", "--seed", "2", "--out", p("c")}).code ==
            0);
    const auto manifest = (dir.path() / "c" / "manifest.json").string();
    std::ofstream(p("train.cfg")) << "epochs = 2\nphase1_epochs = 1\nlearning_rate = 0.01\n";
    REQUIRE(run({"train", "--cohort", manifest, "--config", p("train.cfg"), "--epochs", "3", "--out", p("m")}).code ==
            0);
    CHECK(std::filesystem::exists(dir.path() / "m" / "checkpoint.json"));
    CHECK(std::filesystem::exists(dir.path() / "m" / "metrics_log.tsv"));
    const auto ckpt = protofuse::load_checkpoint(dir.path() / "m");
    CHECK(ckpt.config.epochs == 3);
    CHECK(ckpt.config.learning_rate == 0.01);

    REQUIRE(run({"eval", "--checkpoint", p("m"), "--cohort", manifest, "--out", p("eval.tsv"), "--missingness-mode",
                 "patient_wise", "--missingness-rate", "1.0", "--fill-strategy", "mean_fill"})
                .code == 0);
    std::ifstream table(p("eval.tsv"));
    std::string header, row;
    std::getline(table, header);
    std::getline(table, row);
    CHECK(header.rfind("task\t", 0) == 0);
    CHECK(row.find("patient_wise\t1.00\tmean_fill") != std::string::npos);

    CHECK(run({"explain", "--checkpoint", p("m"), "--cohort", manifest, "--out", p("x")}).code == 0);
    CHECK(std::filesystem::exists(dir.path() / "x" / "index.json"));
  }

  TEST_CASE("gradcheck passes on a fresh state") {
    const Run r = run({"gradcheck"});
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
  }
}
