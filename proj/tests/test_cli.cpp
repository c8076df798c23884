#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(STMIX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("definitely-not-a-subcommand") == 2);
  CHECK(run("fit --config /nonexistent.conf") == 2);
  CHECK(run("--version") == 0);
}

TEST_CASE("simulate is byte-reproducible and feeds the whole pipeline") {
  TempDir dir("stmix_cli_test");
  const std::string sim = dir / "sim";
  REQUIRE(run("simulate --output " + sim + " --seed 77") == 0);
  REQUIRE(fs::exists(sim + "/dataset.bin"));
  const std::string first = read_file(sim + "/dataset.bin");
  const std::string sim2 = dir / "sim2";
  REQUIRE(run("simulate --output " + sim2 + " --seed 77") == 0);
  CHECK(read_file(sim2 + "/dataset.bin") == first);
  CHECK(read_file(sim2 + "/covariate.csv") == read_file(sim + "/covariate.csv"));
  CHECK(read_file(sim2 + "/truth_basis.stmx") == read_file(sim + "/truth_basis.stmx"));

  // prepare-basis -> fit -> predict: artifacts exist and parse.
  const std::string basis = dir / "basis.stmx";
  REQUIRE(run("prepare-basis --dataset " + sim + "/dataset.bin --covariate " + sim +
              "/covariate.csv --output " + (dir / "prep") + " --basis " + basis +
              " --l 3 --p-seasonal 6 --n-axis1 4 --n-axis2 4") == 0);
  const std::string store = dir / "samples";
  REQUIRE(run("fit --dataset " + sim + "/dataset.bin --basis " + basis + " --output " +
              (dir / "fit") + " --samples " + store +
              " --k 2 --n-iter 300 --burn-in 100 --thin 2 --seed 5") == 0);
  REQUIRE(fs::exists(store + "/manifest.json"));
  REQUIRE(fs::exists(store + "/chunk_00000.bin"));

  const std::string pred = dir / "pred";
  REQUIRE(run("predict --samples " + store + " --basis " + basis + " --covariate " + sim +
              "/covariate.csv --output " + pred +
              " --task ensemble --year 1992 --week 4 --seed 3") == 0);
  std::ifstream csv(pred + "/ensemble_mean.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "site_id,value,mc_se");
  int rows = 0;
  std::string line;
  while (std::getline(csv, line)) {
    ++rows;
    std::stringstream ss(line);
    std::string field;
    int fields = 0;
    while (std::getline(ss, field, ',')) {
      ++fields;
      CHECK_FALSE(field.empty());
    }
    CHECK(fields == 3);
  }
  CHECK(rows == 20);

  // diagnose writes the summary table.
  REQUIRE(run("diagnose --samples " + store + " --output " + (dir / "diag")) == 0);
  std::ifstream diag(dir / "diag" + std::string("/diagnostics.csv"));
  std::getline(diag, header);
  CHECK(header == "parameter,mean,sd,ess,psrf");

  // hotspot with an unreachable threshold is a computation error (exit 1).
  CHECK(run("hotspot --samples " + store + " --basis " + basis + " --covariate " + sim +
            "/covariate.csv --output " + (dir / "hot") +
            " --year 1992 --week 4 --u 1e9 --alpha 0.05") == 1);
}
