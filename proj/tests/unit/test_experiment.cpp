#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mbsif/errors.hpp"
#include "mbsif/experiment.hpp"
#include "mbsif/rng.hpp"
#include "mbsif/synthetic.hpp"

using namespace mbsif;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mbsif_test_experiment" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<SubjectInfo> population(int males, int females) {
  std::vector<SubjectInfo> out;
  for (int i = 0; i < males; ++i) out.push_back({"m" + std::to_string(i), Gender::male});
  for (int i = 0; i < females; ++i) out.push_back({"f" + std::to_string(i), Gender::female});
  return out;
}

std::uint64_t reference_fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Small shared fixtures; filter learning dominates their cost.
LearnedBankSource& eye_banks() {
  static LearnedBankSource banks(synthetic_eye_images(13, 7), CorpusKind::eye, 7, 20000);
  return banks;
}

const Corpus& small_corpus() {
  static const Corpus corpus = [] {
    SyntheticCorpusOptions o;
    o.subjects = 60;
    o.seed = 5;
    return make_synthetic_corpus(o);
  }();
  return corpus;
}

}  // namespace

TEST_CASE("manifest parsing") {
  const std::string text =
      "# provenance line\n"
      "sample_id,eye,gender,image_path,mask_path,pupil_cx,pupil_cy,pupil_r,iris_cx,iris_cy,iris_r,subject_id\n"
      "a1,left,male,img/a1.pgm,img/a1_mask.pgm,160,120,30,161,119,90,A\n"
      "a2,right,male,/abs/a2.png,,,,,,,,A\n"
      "b1,L,F,b1.pgm,,,,,,,,\n";
  std::istringstream in(text);
  const DatasetManifest m = read_manifest(in, "/data", "m.csv");
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[0].image_path == std::filesystem::path("/data/img/a1.pgm"));
  CHECK(m.entries[0].mask_path == std::filesystem::path("/data/img/a1_mask.pgm"));
  CHECK(m.entries[0].pupil->r == 30);
  CHECK(m.entries[0].iris->cx == 161);
  CHECK(m.entries[1].image_path == std::filesystem::path("/abs/a2.png"));
  CHECK(m.entries[1].mask_path.empty());
  CHECK(!m.entries[1].pupil);
  CHECK(m.entries[1].subject_id == "A");
  CHECK(m.entries[2].subject_id == "b1");
  CHECK(m.entries[2].gender == Gender::female);

  std::ostringstream out;
  write_manifest(out, m);
  std::istringstream again(out.str());
  const DatasetManifest back = read_manifest(again, "/", "again");
  REQUIRE(back.entries.size() == 3);
  CHECK(back.entries[0].image_path == m.entries[0].image_path);
  CHECK(back.entries[0].iris->r == 90);
  CHECK(back.entries[1].subject_id == "A");
}

TEST_CASE("manifest errors") {
  const std::string header = "sample_id,eye,gender,image_path,mask_path,pupil_cx,pupil_cy,pupil_r,iris_cx,iris_cy,iris_r\n";
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_manifest(in, "/", "bad.csv");
  };
  CHECK_THROWS_AS(parse("sample_id,eye\n"), FormatError);
  CHECK_THROWS_AS(parse(""), FormatError);
  CHECK_THROWS_AS(parse(header + "a,left,male,a.pgm,\n"), FormatError);
  CHECK_THROWS_AS(parse(header + "a,left,male,a.pgm,,1,2,3,,,\n"), FormatError);
  CHECK_THROWS_AS(parse(header + "a,up,male,a.pgm,,,,,,,\n"), FormatError);
  CHECK_THROWS_WITH_AS(parse(header + "a,left,male,a.pgm,,x,2,3,4,5,6\n"), doctest::Contains("bad.csv:2"), FormatError);
  CHECK_THROWS_AS(parse(header + "a,left,male,a.pgm,,,,,,,\na,right,male,b.pgm,,,,,,,\n"), ValidationError);
  CHECK_THROWS_AS(read_manifest(std::filesystem::path("/nonexistent/manifest.csv")), IoError);
}

TEST_CASE("load_corpus reads strips and unwraps annotated eyes") {
  const auto dir = scratch("corpus");
  SyntheticCorpusOptions o;
  o.subjects = 2;
  const Corpus synthetic = make_synthetic_corpus(o);
  const Sample& s = synthetic[0];
  save_gray(s.iris.strip.to_gray(), dir / "strip.pgm");
  save_gray(s.iris.mask.to_gray(), dir / "strip_mask.pgm");
  const SyntheticEye eye = render_eye(s.iris.strip, s.iris.mask, 3);
  save_gray(eye.image, dir / "eye.pgm");
  save_gray(eye.annotation.occlusion.to_gray(), dir / "eye_mask.pgm");

  std::ofstream manifest(dir / "manifest.csv");
  const Circle p = eye.annotation.pupil;
  const Circle i = eye.annotation.iris;
  manifest << "sample_id,subject_id,eye,gender,image_path,mask_path,pupil_cx,pupil_cy,pupil_r,iris_cx,iris_cy,iris_r\n"
           << "x_L,x,left,male,strip.pgm,strip_mask.pgm,,,,,,\n"
           << "x_R,x,right,male,eye.pgm,eye_mask.pgm," << p.cx << "," << p.cy << "," << p.r << "," << i.cx << ","
           << i.cy << "," << i.r << "\n";
  manifest.close();

  const Corpus corpus = load_corpus(read_manifest(dir / "manifest.csv"));
  REQUIRE(corpus.size() == 2);
  CHECK(corpus[0].iris.strip == FloatImage::from_gray(s.iris.strip.to_gray()));
  CHECK(corpus[0].iris.mask == s.iris.mask);
  CHECK(corpus[1].iris.strip.width() == 240);
  CHECK(corpus[1].iris.strip.height() == 20);
  CHECK(corpus[1].eye == Eye::right);

  // Strip resolution must match the requested one.
  CHECK_THROWS_AS(load_corpus(read_manifest(dir / "manifest.csv"), 10, 240), ValidationError);
}

TEST_CASE("make_split arithmetic and structure") {
  const SplitPlan plan = make_split(population(100, 100), 0.8, 17);
  int train_m = 0;
  int train_f = 0;
  for (const auto& s : plan.train_subjects) (s[0] == 'm' ? train_m : train_f) += 1;
  CHECK(train_m == 80);
  CHECK(train_f == 80);
  CHECK(plan.test_subjects.size() == 40);
  std::size_t fold_total = 0;
  for (const auto& fold : plan.folds) {
    CHECK(fold.size() == 32);
    fold_total += fold.size();
  }
  CHECK(fold_total == 160);

  const SplitPlan same = make_split(population(100, 100), 0.8, 17);
  CHECK(same.train_subjects == plan.train_subjects);
  CHECK(same.folds == plan.folds);
  CHECK(make_split(population(100, 100), 0.8, 18).train_subjects != plan.train_subjects);

  CHECK_THROWS_AS(make_split(population(9, 40), 0.8, 1), ValidationError);
  CHECK_THROWS_AS(make_split(population(20, 20), 1.5, 1), ValidationError);
}

TEST_CASE("make_split property: disjoint, stratified, balanced folds") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const int males = 10 + static_cast<int>(rng.uniform_index(60));
    const int females = 10 + static_cast<int>(rng.uniform_index(60));
    const SplitPlan plan = make_split(population(males, females), 0.8, rng.next());
    int train_m = 0;
    int train_f = 0;
    for (const auto& s : plan.train_subjects) {
      CHECK(!plan.test_subjects.contains(s));
      (s[0] == 'm' ? train_m : train_f) += 1;
    }
    CHECK(plan.train_subjects.size() + plan.test_subjects.size() == static_cast<std::size_t>(males + females));
    CHECK(std::abs(train_m - 0.8 * males) <= 1.0);
    CHECK(std::abs(train_f - 0.8 * females) <= 1.0);
    std::set<std::string> seen;
    std::size_t smallest = plan.train_subjects.size();
    std::size_t largest = 0;
    for (const auto& fold : plan.folds) {
      smallest = std::min(smallest, fold.size());
      largest = std::max(largest, fold.size());
      for (const auto& s : fold) {
        CHECK(plan.train_subjects.contains(s));
        CHECK(seen.insert(s).second);
      }
    }
    CHECK(seen.size() == plan.train_subjects.size());
    CHECK(largest - smallest <= 1);
  }
}

TEST_CASE("select_one_per_subject") {
  Corpus corpus = small_corpus();
  // Give subject s0000 a second left sample.
  Sample extra = corpus[0];
  extra.sample_id = "s0000_L2";
  corpus.push_back(extra);
  const auto a = select_one_per_subject(corpus, Eye::left, 3);
  CHECK(a.size() == 60);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1]->subject_id < a[i]->subject_id);
  for (const Sample* s : a) CHECK(s->eye == Eye::left);
  CHECK(select_one_per_subject(corpus, Eye::left, 3) == a);
  std::set<std::string> picks;
  for (std::uint64_t seed = 0; seed < 40; ++seed) picks.insert(select_one_per_subject(corpus, Eye::left, seed)[0]->sample_id);
  CHECK(picks == std::set<std::string>{"s0000_L", "s0000_L2"});
}

TEST_CASE("config keys and hashes") {
  ExperimentConfig c;
  c.filter_size = 5;
  c.bits = 7;
  CHECK(c.feature_key() == "eye=left;padding=modified;size=05;bits=07;feature=histogram");
  CHECK(c.key() == c.feature_key() + ";classifier=adaboost-T100");
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << reference_fnv1a(c.key());
  CHECK(c.hash() == hex.str());
  c.histogram_mode = HistogramMode::mask_excluded;
  CHECK(c.feature_key().ends_with("feature=histogram_excluded"));
}

TEST_CASE("run_config") {
  const Corpus& corpus = small_corpus();
  const SplitPlan split = make_split(corpus, 0.8, 9);
  ExperimentConfig c;
  c.filter_size = 7;
  c.bits = 6;
  c.classifier.rounds = 30;
  const ResultRecord r = run_config(corpus, split, c, eye_banks());
  CHECK(r.male_total + r.female_total == r.test_size);
  CHECK(r.test_size == static_cast<int>(split.test_subjects.size()));
  CHECK(r.train_size == static_cast<int>(split.train_subjects.size()));
  CHECK(r.male_correct <= r.male_total);
  CHECK(r.female_correct <= r.female_total);
  CHECK(r.accuracy == static_cast<double>(r.male_correct + r.female_correct) / (r.male_total + r.female_total));

  const ResultRecord again = run_config(corpus, split, c, eye_banks());
  CHECK(again.accuracy == r.accuracy);
  CHECK(again.male_correct == r.male_correct);
  CHECK(again.female_correct == r.female_correct);
}

TEST_CASE("randomised labels stay in the chance band") {
  SyntheticCorpusOptions o;
  o.subjects = 400;
  o.seed = 31;
  Corpus corpus = make_synthetic_corpus(o);
  // Reassign genders per subject at random, keeping both eyes consistent.
  Rng rng(4);
  std::map<std::string, Gender> relabel;
  for (const auto& s : corpus) {
    if (!relabel.contains(s.subject_id)) relabel[s.subject_id] = rng.uniform01() < 0.5 ? Gender::male : Gender::female;
  }
  for (auto& s : corpus) s.gender = relabel[s.subject_id];
  const SplitPlan split = make_split(corpus, 0.8, 2);
  ExperimentConfig c;
  c.filter_size = 7;
  c.bits = 6;
  c.classifier.rounds = 50;
  const ResultRecord r = run_config(corpus, split, c, eye_banks());
  CHECK(r.accuracy >= 0.35);
  CHECK(r.accuracy <= 0.65);
}

TEST_CASE("cross_validate") {
  SyntheticCorpusOptions o;
  o.subjects = 100;
  o.seed = 12;
  o.informative_rows = 10;
  const Corpus corpus = make_synthetic_corpus(o);
  const SplitPlan split = make_split(corpus, 0.8, 6);
  ExperimentConfig c;
  c.filter_size = 7;
  c.bits = 6;
  c.classifier.rounds = 40;
  const CrossValidation cv = cross_validate(corpus, split, c, eye_banks());
  const auto [lo, hi] = std::minmax_element(cv.fold_accuracy.begin(), cv.fold_accuracy.end());
  CHECK(cv.mean >= *lo);
  CHECK(cv.mean <= *hi);
  CHECK(cv.stddev >= 0.0);
  CHECK(cv.mean >= 0.9);
  const CrossValidation again = cross_validate(corpus, split, c, eye_banks());
  CHECK(again.fold_accuracy == cv.fold_accuracy);
}

TEST_CASE("grid runs") {
  const Corpus& corpus = small_corpus();
  const SplitPlan split = make_split(corpus, 0.8, 9);
  GridSpec grid;
  grid.filter_sizes = {5, 7};
  grid.bits = {5, 6};
  grid.paddings = {PaddingStrategy::modified(), PaddingStrategy::traditional()};
  grid.classifiers = {ClassifierConfig{ClassifierKind::adaboost, 20, {}}, ClassifierConfig{ClassifierKind::logitboost, 20, {}}};
  grid.eyes = {Eye::left};
  const auto configs = grid.expand();
  CHECK(configs.size() == 2 * 2 * 1 * 2 * 2);
  for (std::size_t i = 1; i < configs.size(); ++i) CHECK(configs[i - 1].key() < configs[i].key());

  const auto dir = scratch("grid");
  GridOptions options;
  options.csv_path = dir / "a.csv";
  options.provenance = {"mbsif test", "seed=9"};
  const GridOutcome first = run_grid(corpus, split, grid, eye_banks(), options);
  CHECK(first.records.size() == configs.size());
  CHECK(first.failures.empty());
  const std::string reference = slurp(options.csv_path);
  CHECK(reference.rfind("# mbsif test\n# seed=9\n" + results_csv_header() + "\n", 0) == 0);

  SUBCASE("byte-identical reruns, any worker count") {
    options.csv_path = dir / "b.csv";
    options.jobs = 3;
    run_grid(corpus, split, grid, eye_banks(), options);
    CHECK(slurp(options.csv_path) == reference);
  }
  SUBCASE("resume after an interrupted run") {
    // Keep the header and the first three rows, then half of the fourth.
    std::istringstream lines(reference);
    std::string line;
    std::string partial;
    int rows = 0;
    while (std::getline(lines, line)) {
      if (line.front() != '#' && line != results_csv_header() && ++rows > 3) {
        partial += line.substr(0, line.size() / 2);
        break;
      }
      partial += line + "\n";
    }
    options.csv_path = dir / "c.csv";
    std::ofstream(options.csv_path) << partial;
    options.resume = true;
    const GridOutcome resumed = run_grid(corpus, split, grid, eye_banks(), options);
    CHECK(resumed.resumed == 3);
    CHECK(slurp(options.csv_path) == reference);

    options.provenance = {"something else"};
    CHECK_THROWS_AS(run_grid(corpus, split, grid, eye_banks(), options), ValidationError);
  }
  SUBCASE("failures are reported and the run continues") {
    GridSpec bad = grid;
    bad.filter_sizes = {5, 4};
    options.csv_path.clear();
    const GridOutcome outcome = run_grid(corpus, split, bad, eye_banks(), options);
    CHECK(outcome.records.size() == configs.size() / 2);
    CHECK(outcome.failures.size() == configs.size() / 2);
  }
}

TEST_CASE("best_record tie-breaking") {
  auto record = [](int size, int bits, double accuracy) {
    ResultRecord r;
    r.config.filter_size = size;
    r.config.bits = bits;
    r.accuracy = accuracy;
    return r;
  };
  const std::vector<ResultRecord> records = {record(11, 10, 0.9), record(13, 8, 0.9), record(9, 8, 0.9),
                                             record(5, 5, 0.85)};
  const ResultRecord& best = best_record(records);
  CHECK(best.config.bits == 8);
  CHECK(best.config.filter_size == 9);
  CHECK_THROWS_AS(best_record({}), ValidationError);
}

TEST_CASE("results CSV layout") {
  CHECK(results_csv_header() ==
        "config_hash,padding,filter_size,bits,feature_kind,classifier,eye,accuracy,male_correct,male_total,"
        "female_correct,female_total,seconds");
  ResultRecord r;
  r.config.filter_size = 11;
  r.config.bits = 10;
  r.accuracy = 0.9125;
  r.male_correct = 37;
  r.male_total = 40;
  r.female_correct = 36;
  r.female_total = 40;
  CHECK(results_csv_row(r) == r.config.hash() + ",modified,11,10,histogram,adaboost-T100,left,0.9125,37,40,36,40,0.000");
}
