#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mbsif/imaging.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Workspace {
 public:
  Workspace() {
    dir_ = fs::temp_directory_path() / ("mbsif_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Workspace() { fs::remove_all(dir_); }

  const fs::path& dir() const { return dir_; }
  fs::path operator/(const std::string& name) const { return dir_ / name; }

  /// Runs the CLI inside the workspace with the given arguments and env prefix.
  RunResult run(const std::string& args, const std::string& env = "MBSIF_SEED=") const {
    const fs::path out = dir_ / ".stdout";
    const fs::path err = dir_ / ".stderr";
    const std::string cmd = "cd '" + dir_.string() + "' && env " + env + " '" MBSIF_CLI_PATH "' " + args + " >'" +
                            out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

 private:
  static inline int counter_ = 0;
  fs::path dir_;
};

bool contains(const std::string& text, const std::string& needle) { return text.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("cli exit codes") {
  Workspace ws;
  CHECK(ws.run("").code == 1);
  CHECK(ws.run("--help").code == 0);
  const auto version = ws.run("--version");
  CHECK(version.code == 0);
  CHECK(contains(version.out, MBSIF_VERSION));
  CHECK(ws.run("frobnicate").code == 1);

  const auto missing = ws.run("train --out m.bin");
  CHECK(missing.code == 1);
  CHECK(contains(missing.err, "--features"));

  const auto runtime = ws.run("inspect does_not_exist.bsif");
  CHECK(runtime.code == 2);
  CHECK(contains(runtime.err, "mbsif: error:"));
  CHECK(contains(runtime.err, "does_not_exist.bsif"));

  std::ofstream(ws / "junk.bin") << "not a container";
  CHECK(ws.run("inspect junk.bin").code == 2);

  const auto bad_range = ws.run("grid --synthetic 20 --bits 9-5 --bank-dir . --out g.csv");
  CHECK(bad_range.code == 1);
  CHECK(contains(bad_range.err, "range"));
  CHECK(ws.run("grid --synthetic 20 --bits 5 --out g.csv").code == 1);
  CHECK(ws.run("grid --synthetic 20 --bits 5 --bank-dir . --jobs 0 --out g.csv").code == 1);
  CHECK(ws.run("train --features f.csv --out m.bin", "MBSIF_SEED=abc").code == 1);
}

TEST_CASE("cli pipeline from synthetic corpus to evaluation") {
  Workspace ws;
  const auto synth = ws.run("synth-corpus --out corpus --subjects 24 --filter-corpora 3", "MBSIF_SEED=9");
  REQUIRE(synth.code == 0);
  const std::string manifest = slurp(ws / "corpus/manifest.csv");
  CHECK(contains(manifest, "# mbsif " MBSIF_VERSION));
  CHECK(contains(manifest, "# seed: 9"));
  CHECK(fs::exists(ws / "corpus/eyes/02.pgm"));
  CHECK(fs::exists(ws / "corpus/natural/00.pgm"));
  const auto strip = mbsif::load_gray(ws / "corpus/samples/s0000_L.pgm");
  CHECK(strip.width() == 240);
  CHECK(strip.height() == 20);

  REQUIRE(ws.run("learn-filters --corpus corpus/eyes --size 5 --bits 6 --patches 2500 --source eye --seed 4 --out "
                 "bank.bsif")
              .code == 0);
  const auto inspect = ws.run("inspect bank.bsif");
  REQUIRE(inspect.code == 0);
  CHECK(contains(inspect.out, "bits: 6"));
  CHECK(contains(inspect.out, "size: 5x5"));
  CHECK(contains(inspect.out, "source: eye"));
  CHECK(contains(inspect.out, "seed: 4"));
  CHECK(contains(inspect.out, "command: mbsif learn-filters"));

  REQUIRE(ws.run("features --manifest corpus/manifest.csv --bank bank.bsif --eye left --out left.csv").code == 0);
  const std::string features = slurp(ws / "left.csv");
  CHECK(contains(features, "sample_id,eye,gender,kind,v0,"));
  CHECK(contains(features, ",v63\n"));
  CHECK(!contains(features, "_R,"));

  REQUIRE(ws.run("train --features left.csv --classifier forest --trees 15 --out forest.bin").code == 0);
  const auto model = ws.run("inspect forest.bin");
  CHECK(contains(model.out, "kind: forest"));
  CHECK(contains(model.out, "trees: 15"));
  CHECK(contains(model.out, "features: 64"));

  REQUIRE(ws.run("train --features left.csv --rounds 20 --out boost.bin").code == 0);
  const auto eval = ws.run("evaluate --model boost.bin --features left.csv --out pred.csv");
  REQUIRE(eval.code == 0);
  CHECK(contains(eval.out, "accuracy="));
  CHECK(contains(eval.out, "male=12/12"));
  const std::string predictions = slurp(ws / "pred.csv");
  CHECK(contains(predictions, "sample_id,eye,gender,predicted,score\n"));
  CHECK(contains(predictions, "s0023_L,left,female,"));

  REQUIRE(ws.run("encode --bank bank.bsif --in corpus/samples/s0001_L.pgm --mask corpus/samples/s0001_L_mask.pgm "
                 "--padding traditional --dump-code code.pgm --out one.csv")
              .code == 0);
  const auto code = mbsif::load_gray(ws / "code.pgm");
  CHECK(code.width() == 240);
  CHECK(code.height() == 20);
  CHECK(contains(slurp(ws / "one.csv"), "--padding traditional"));
  CHECK(ws.run("encode --bank bank.bsif --in corpus/samples/s0001_L.pgm").code == 1);
  CHECK(ws.run("encode --bank bank.bsif --in corpus/samples/s0001_L.pgm --padding sideways --out x.csv").code == 2);
}

TEST_CASE("cli normalize and eye-image corpora") {
  Workspace ws;
  REQUIRE(ws.run("synth-corpus --out eyes --subjects 20 --eye-images --seed 2").code == 0);
  const auto image = mbsif::load_gray(ws / "eyes/samples/s0000_L.pgm");
  CHECK(image.width() == 320);
  CHECK(image.height() == 240);

  std::ifstream in(ws / "eyes/manifest.csv");
  std::string line;
  while (std::getline(in, line) && !line.starts_with("s0000_L,")) {
  }
  REQUIRE(line.starts_with("s0000_L,"));
  std::vector<std::string> cells;
  std::stringstream row(line);
  for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
  REQUIRE(cells.size() == 12);
  const std::string pupil = cells[6] + "," + cells[7] + "," + cells[8];
  const std::string iris = cells[9] + "," + cells[10] + "," + cells[11];

  const auto single = ws.run("normalize --in eyes/samples/s0000_L.pgm --mask eyes/samples/s0000_L_mask.pgm --pupil " +
                             pupil + " --iris " + iris + " --out strip.pgm --mask-out strip_mask.pgm");
  REQUIRE(single.code == 0);
  const auto strip = mbsif::load_gray(ws / "strip.pgm");
  CHECK(strip.width() == 240);
  CHECK(strip.height() == 20);
  CHECK(fs::exists(ws / "strip_mask.pgm"));
  CHECK(ws.run("normalize --in eyes/samples/s0000_L.pgm --pupil 1,2 --iris " + iris + " --out s.pgm").code == 1);
  CHECK(ws.run("normalize --in eyes/samples/s0000_L.pgm --pupil " + iris + " --iris " + pupil + " --out s.pgm").code ==
        2);

  REQUIRE(ws.run("normalize --manifest eyes/manifest.csv --out strips --radial 10 --angular 120").code == 0);
  const auto batch = mbsif::load_gray(ws / "strips/s0000_L.pgm");
  CHECK(batch.width() == 120);
  CHECK(batch.height() == 10);
  CHECK(contains(slurp(ws / "strips/manifest.csv"), "s0019_R,s0019,right,female,s0019_R.pgm,s0019_R_mask.pgm"));
}

TEST_CASE("cli grid runs are reproducible and resumable") {
  Workspace ws;
  REQUIRE(ws.run("synth-corpus --out c --subjects 2 --filter-corpora 2 --seed 1").code == 0);
  const std::string grid =
      "grid --synthetic 24 --sizes 3,5 --bits 3-4 --eye left --rounds 10 --bank-corpus c/eyes --patches 1000 ";
  const auto first = ws.run(grid + "--out a.csv", "MBSIF_SEED=6");
  REQUIRE(first.code == 0);
  CHECK(contains(first.out, "best left: eye=left;"));
  const std::string a = slurp(ws / "a.csv");
  CHECK(contains(a, "# seed: 6"));
  CHECK(contains(a, "--bits 3,4"));
  CHECK(contains(a, "config_hash,padding,filter_size,bits,feature_kind,classifier,eye,accuracy,"));

  REQUIRE(ws.run(grid + "--jobs 3 --seed 6 --out b.csv").code == 0);
  CHECK(slurp(ws / "b.csv") == a);

  REQUIRE(ws.run(grid + "--out a.csv --resume", "MBSIF_SEED=6").code == 0);
  CHECK(slurp(ws / "a.csv") == a);
  const auto resumed = ws.run(grid + "--out a.csv --resume", "MBSIF_SEED=6");
  CHECK(contains(resumed.err, "(4 resumed)"));
  CHECK(ws.run(grid + "--out a.csv --resume", "MBSIF_SEED=7").code == 2);
}
