#pragma once

// Subject-disjoint evaluation protocol: manifests, 80/20 stratified splits
// with five cross-validation folds, single configurations and full grids.

#include <array>
#include <cstdint>
#include <filesystem>
#include <future>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mbsif/bsif.hpp"
#include "mbsif/classifiers.hpp"
#include "mbsif/filter_learning.hpp"
#include "mbsif/iris.hpp"

namespace mbsif {

struct ManifestEntry {
  std::string sample_id;
  std::string subject_id;
  Eye eye = Eye::left;
  Gender gender = Gender::unknown;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;  // 255 = occluded; empty when unmasked
  /// Both absent when image_path already holds a normalised strip.
  std::optional<Circle> pupil;
  std::optional<Circle> iris;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string source_name;

  /// Unique sample ids; one gender per subject. Throws ValidationError.
  void validate() const;
};

/// Manifest CSV with a header row. Columns: sample_id, eye, gender,
/// image_path, mask_path, pupil_cx, pupil_cy, pupil_r, iris_cx, iris_cy,
/// iris_r, plus an optional subject_id (defaults to sample_id). Circle
/// columns may be empty for pre-normalised strips. Relative paths resolve
/// against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
DatasetManifest read_manifest(std::istream& in, const std::filesystem::path& base_dir, const std::string& context);
void write_manifest(std::ostream& out, const DatasetManifest& manifest, const std::vector<std::string>& provenance = {});

struct Sample {
  std::string sample_id;
  std::string subject_id;
  Eye eye = Eye::left;
  Gender gender = Gender::unknown;
  NormalizedIris iris;
};

using Corpus = std::vector<Sample>;

/// Loads every entry, unwrapping annotated eye images to radial x angular
/// strips. Pre-normalised strips must already have that resolution.
Corpus load_corpus(const DatasetManifest& manifest, int radial = kDefaultRadialSamples,
                   int angular = kDefaultAngularSamples);

/// One sample per subject for the given eye, drawn with `seed` when a subject
/// has several. Result is ordered by subject id.
std::vector<const Sample*> select_one_per_subject(const Corpus& corpus, Eye eye, std::uint64_t seed);

struct SubjectInfo {
  std::string subject_id;
  Gender gender = Gender::unknown;
};

/// Subjects of a corpus, sorted by id. Throws if a subject has two genders.
std::vector<SubjectInfo> corpus_subjects(const Corpus& corpus);

inline constexpr int kFolds = 5;

struct SplitPlan {
  std::set<std::string> train_subjects;
  std::set<std::string> test_subjects;
  std::array<std::set<std::string>, kFolds> folds;
  std::uint64_t seed = 0;

  bool is_train(const std::string& subject) const { return train_subjects.contains(subject); }
  bool is_test(const std::string& subject) const { return test_subjects.contains(subject); }
};

/// Gender-stratified subject split: round(train_fraction * count) subjects of
/// each gender train, the rest test; training subjects are dealt into five
/// folds per gender. Needs at least ten subjects of each gender.
SplitPlan make_split(const std::vector<SubjectInfo>& subjects, double train_fraction, std::uint64_t seed);
inline SplitPlan make_split(const Corpus& corpus, double train_fraction, std::uint64_t seed) {
  return make_split(corpus_subjects(corpus), train_fraction, seed);
}

/// Supplies the filter bank for (filter size, bits). Thread-safe.
class FilterBankSource {
 public:
  virtual ~FilterBankSource() = default;
  virtual FilterBank get(int size, int bits) = 0;
  /// Identifies the bank family in provenance headers.
  virtual std::string describe() const = 0;
};

/// Learns banks on demand from a fixed image corpus and caches them.
class LearnedBankSource final : public FilterBankSource {
 public:
  LearnedBankSource(std::vector<GrayImage> images, CorpusKind kind, std::uint64_t seed,
                    std::size_t patch_count = kDefaultPatchCount, std::string description = {});
  FilterBank get(int size, int bits) override;
  std::string describe() const override;

 private:
  std::vector<GrayImage> images_;
  CorpusKind kind_;
  std::uint64_t seed_;
  std::size_t patch_count_;
  std::string description_;
  std::mutex mutex_;
  std::map<std::pair<int, int>, std::shared_future<FilterBank>> cache_;
};

/// Loads banks named bank_l<size>_n<bits>.bsif from a directory.
class DirectoryBankSource final : public FilterBankSource {
 public:
  explicit DirectoryBankSource(std::filesystem::path directory) : directory_(std::move(directory)) {}
  FilterBank get(int size, int bits) override;
  std::string describe() const override { return "dir:" + directory_.string(); }
  static std::string file_name(int size, int bits);

 private:
  std::filesystem::path directory_;
  std::mutex mutex_;
  std::map<std::pair<int, int>, FilterBank> cache_;
};

struct ExperimentConfig {
  PaddingStrategy padding = PaddingStrategy::modified();
  int filter_size = 11;
  int bits = 8;
  FeatureKind feature = FeatureKind::histogram;
  HistogramMode histogram_mode = HistogramMode::mask_zeroed;
  ClassifierConfig classifier;
  Eye eye = Eye::left;

  /// Human-readable, lexicographically sortable key.
  std::string key() const;
  /// 16 hex digits of FNV-1a over key().
  std::string hash() const;
  /// Key of the feature-extraction part only.
  std::string feature_key() const;
};

struct ResultRecord {
  ExperimentConfig config;
  double accuracy = 0.0;
  int male_correct = 0;
  int male_total = 0;
  int female_correct = 0;
  int female_total = 0;
  int train_size = 0;
  int test_size = 0;
  double seconds = 0.0;
};

/// Zero masked pixels, encode, and build the configured feature vector.
FeatureVector extract_feature(const Sample& sample, const FilterBank& bank, const ExperimentConfig& config);

/// Train on the split's training subjects, evaluate once on its test subjects.
ResultRecord run_config(const Corpus& corpus, const SplitPlan& split, const ExperimentConfig& config,
                        FilterBankSource& banks);

struct CrossValidation {
  std::array<double, kFolds> fold_accuracy{};
  double mean = 0.0;
  double stddev = 0.0;
};

/// Five-fold subject-level cross-validation inside the training subjects.
CrossValidation cross_validate(const Corpus& corpus, const SplitPlan& split, const ExperimentConfig& config,
                               FilterBankSource& banks);

struct GridSpec {
  std::vector<int> filter_sizes{5, 7, 9, 11, 13, 15, 17};
  std::vector<int> bits{5, 6, 7, 8, 9, 10, 11, 12};
  std::vector<FeatureKind> feature_kinds{FeatureKind::histogram};
  std::vector<PaddingStrategy> paddings{PaddingStrategy::modified()};
  std::vector<ClassifierConfig> classifiers{ClassifierConfig{}};
  std::vector<Eye> eyes{Eye::left, Eye::right};
  HistogramMode histogram_mode = HistogramMode::mask_zeroed;

  /// Cartesian product, sorted by key.
  std::vector<ExperimentConfig> expand() const;
};

struct GridOptions {
  int jobs = 1;
  /// Results CSV; completed rows are appended as they finish and the file is
  /// rewritten sorted at the end. Empty disables file output.
  std::filesystem::path csv_path;
  /// Skip configurations whose hash already appears in csv_path.
  bool resume = false;
  /// Record wall time; otherwise the seconds column is 0 so reruns are
  /// byte-identical.
  bool record_timing = false;
  std::vector<std::string> provenance;
};

struct GridFailure {
  ExperimentConfig config;
  std::string message;
};

struct GridOutcome {
  std::vector<ResultRecord> records;  // sorted by config key
  std::vector<GridFailure> failures;
  int resumed = 0;
};

GridOutcome run_grid(const Corpus& corpus, const SplitPlan& split, const GridSpec& grid, FilterBankSource& banks,
                     const GridOptions& options = {});

/// Highest accuracy; ties go to fewer bits, then the smaller filter.
const ResultRecord& best_record(const std::vector<ResultRecord>& records);

void write_results_csv(std::ostream& out, const std::vector<ResultRecord>& records,
                       const std::vector<std::string>& provenance = {});
std::string results_csv_header();
std::string results_csv_row(const ResultRecord& record);

}  // namespace mbsif
