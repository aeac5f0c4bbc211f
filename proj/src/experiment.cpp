#include "mbsif/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "mbsif/errors.hpp"
#include "mbsif/rng.hpp"

namespace mbsif {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  for (auto& f : fields) {
    const auto first = f.find_first_not_of(" \t");
    const auto last = f.find_last_not_of(" \t");
    f = first == std::string::npos ? std::string{} : f.substr(first, last - first + 1);
  }
  return fields;
}

double parse_double(const std::string& text, const std::string& where) {
  double v = 0.0;
  const auto result = std::from_chars(text.data(), text.data() + text.size(), v);
  if (result.ec != std::errc{} || result.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw FormatError(where + ": bad number '" + text + "'");
  }
  return v;
}

int parse_int(const std::string& text, const std::string& where) {
  int v = 0;
  const auto result = std::from_chars(text.data(), text.data() + text.size(), v);
  if (result.ec != std::errc{} || result.ptr != text.data() + text.size()) {
    throw FormatError(where + ": bad integer '" + text + "'");
  }
  return v;
}

std::string format_double(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string zero_pad(int value, int width) {
  std::ostringstream s;
  s << std::setw(width) << std::setfill('0') << value;
  return s.str();
}

}  // namespace

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  std::map<std::string, Gender> genders;
  for (const auto& e : entries) {
    if (e.sample_id.empty()) throw ValidationError("manifest entry with empty sample_id");
    if (!ids.insert(e.sample_id).second) throw ValidationError("duplicate sample_id '" + e.sample_id + "'");
    if (e.pupil.has_value() != e.iris.has_value()) {
      throw ValidationError("sample '" + e.sample_id + "' has only one of the pupil and iris circles");
    }
    auto [it, inserted] = genders.emplace(e.subject_id, e.gender);
    if (!inserted && it->second != e.gender) {
      throw ValidationError("subject '" + e.subject_id + "' has inconsistent gender labels");
    }
  }
}

DatasetManifest read_manifest(std::istream& in, const std::filesystem::path& base_dir, const std::string& context) {
  static const std::vector<std::string> kRequired = {"sample_id", "eye",     "gender",   "image_path",
                                                     "mask_path", "pupil_cx", "pupil_cy", "pupil_r",
                                                     "iris_cx",   "iris_cy", "iris_r"};
  DatasetManifest manifest;
  manifest.source_name = context;
  std::unordered_map<std::string, std::size_t> column;
  std::string line;
  std::size_t line_number = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_fields(line);
    const std::string where = context + ":" + std::to_string(line_number);
    if (!header_seen) {
      for (std::size_t i = 0; i < fields.size(); ++i) column[fields[i]] = i;
      for (const auto& name : kRequired) {
        if (!column.contains(name)) throw FormatError(where + ": manifest header lacks column '" + name + "'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != column.size()) {
      throw FormatError(where + ": expected " + std::to_string(column.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    auto field = [&](const std::string& name) -> const std::string& { return fields[column.at(name)]; };
    auto resolve = [&](const std::string& p) -> std::filesystem::path {
      if (p.empty()) return {};
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };

    ManifestEntry e;
    e.sample_id = field("sample_id");
    e.subject_id = column.contains("subject_id") && !field("subject_id").empty() ? field("subject_id") : e.sample_id;
    try {
      e.eye = parse_eye(field("eye"));
      e.gender = parse_gender(field("gender"));
    } catch (const ValidationError& err) {
      throw FormatError(where + ": " + err.what());
    }
    e.image_path = resolve(field("image_path"));
    e.mask_path = resolve(field("mask_path"));
    if (e.image_path.empty()) throw FormatError(where + ": empty image_path");
    const std::array<std::string, 6> circle_columns = {"pupil_cx", "pupil_cy", "pupil_r", "iris_cx", "iris_cy", "iris_r"};
    const auto blank = std::count_if(circle_columns.begin(), circle_columns.end(),
                                     [&](const std::string& c) { return field(c).empty(); });
    if (blank == 0) {
      e.pupil = Circle{parse_double(field("pupil_cx"), where), parse_double(field("pupil_cy"), where),
                       parse_double(field("pupil_r"), where)};
      e.iris = Circle{parse_double(field("iris_cx"), where), parse_double(field("iris_cy"), where),
                      parse_double(field("iris_r"), where)};
    } else if (blank != static_cast<long>(circle_columns.size())) {
      throw FormatError(where + ": circle columns must be all present or all empty");
    }
    manifest.entries.push_back(std::move(e));
  }
  if (!header_seen) throw FormatError(context + ": empty manifest");
  manifest.validate();
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  return read_manifest(in, path.parent_path(), path.string());
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest, const std::vector<std::string>& provenance) {
  for (const auto& line : provenance) out << "# " << line << "\n";
  out << "sample_id,subject_id,eye,gender,image_path,mask_path,pupil_cx,pupil_cy,pupil_r,iris_cx,iris_cy,iris_r\n";
  for (const auto& e : manifest.entries) {
    out << e.sample_id << "," << e.subject_id << "," << to_string(e.eye) << "," << to_string(e.gender) << ","
        << e.image_path.generic_string() << "," << e.mask_path.generic_string();
    if (e.pupil && e.iris) {
      for (double v : {e.pupil->cx, e.pupil->cy, e.pupil->r, e.iris->cx, e.iris->cy, e.iris->r}) {
        out << "," << format_double(v);
      }
    } else {
      out << ",,,,,,";
    }
    out << "\n";
  }
}

Corpus load_corpus(const DatasetManifest& manifest, int radial, int angular) {
  manifest.validate();
  Corpus corpus;
  corpus.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const GrayImage image = load_gray(e.image_path);
    BitMask mask = e.mask_path.empty() ? BitMask(image.width(), image.height())
                                       : BitMask::from_gray(load_gray(e.mask_path));
    if (!mask.matches(image.width(), image.height())) {
      throw ValidationError(e.mask_path.string() + ": mask dimensions differ from " + e.image_path.string());
    }
    Sample s{e.sample_id, e.subject_id, e.eye, e.gender, {}};
    if (e.pupil && e.iris) {
      try {
        s.iris = rubber_sheet(image, IrisAnnotation{*e.pupil, *e.iris, std::move(mask)}, radial, angular);
      } catch (const ValidationError& err) {
        throw ValidationError("sample '" + e.sample_id + "': " + err.what());
      }
    } else {
      if (image.height() != radial || image.width() != angular) {
        throw ValidationError("sample '" + e.sample_id + "': strip is " + std::to_string(image.height()) + "x" +
                              std::to_string(image.width()) + ", expected " + std::to_string(radial) + "x" +
                              std::to_string(angular) + " (rows x columns)");
      }
      s.iris.strip = FloatImage::from_gray(image);
      s.iris.mask = std::move(mask);
    }
    s.iris.source_id = e.sample_id;
    s.iris.eye = e.eye;
    s.iris.gender = e.gender;
    corpus.push_back(std::move(s));
  }
  return corpus;
}

std::vector<const Sample*> select_one_per_subject(const Corpus& corpus, Eye eye, std::uint64_t seed) {
  std::map<std::string, std::vector<const Sample*>> by_subject;
  for (const auto& s : corpus) {
    if (s.eye == eye) by_subject[s.subject_id].push_back(&s);
  }
  Rng rng(seed);
  std::vector<const Sample*> out;
  out.reserve(by_subject.size());
  for (auto& [subject, samples] : by_subject) {
    std::sort(samples.begin(), samples.end(), [](const Sample* a, const Sample* b) { return a->sample_id < b->sample_id; });
    out.push_back(samples[rng.uniform_index(samples.size())]);
  }
  return out;
}

std::vector<SubjectInfo> corpus_subjects(const Corpus& corpus) {
  std::map<std::string, Gender> genders;
  for (const auto& s : corpus) {
    auto [it, inserted] = genders.emplace(s.subject_id, s.gender);
    if (!inserted && it->second != s.gender) {
      throw ValidationError("subject '" + s.subject_id + "' has inconsistent gender labels");
    }
  }
  std::vector<SubjectInfo> out;
  for (const auto& [id, gender] : genders) out.push_back({id, gender});
  return out;
}

SplitPlan make_split(const std::vector<SubjectInfo>& subjects, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train fraction must lie in (0, 1)");
  std::vector<std::string> males;
  std::vector<std::string> females;
  std::set<std::string> seen;
  for (const auto& s : subjects) {
    if (!seen.insert(s.subject_id).second) throw ValidationError("duplicate subject '" + s.subject_id + "'");
    if (s.gender == Gender::male) {
      males.push_back(s.subject_id);
    } else if (s.gender == Gender::female) {
      females.push_back(s.subject_id);
    } else {
      throw ValidationError("subject '" + s.subject_id + "' has no gender label");
    }
  }
  constexpr std::size_t kMinPerGender = 10;
  if (males.size() < kMinPerGender || females.size() < kMinPerGender) {
    throw ValidationError("need at least 10 subjects per gender, got " + std::to_string(males.size()) + " male and " +
                          std::to_string(females.size()) + " female");
  }

  SplitPlan plan;
  plan.seed = seed;
  Rng rng(seed);
  std::size_t dealt = 0;
  for (auto* group : {&males, &females}) {
    std::sort(group->begin(), group->end());
    rng.shuffle(*group);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(group->size())));
    for (std::size_t i = 0; i < group->size(); ++i) {
      const std::string& id = (*group)[i];
      if (i < n_train) {
        plan.train_subjects.insert(id);
        plan.folds[dealt++ % kFolds].insert(id);
      } else {
        plan.test_subjects.insert(id);
      }
    }
  }
  return plan;
}

LearnedBankSource::LearnedBankSource(std::vector<GrayImage> images, CorpusKind kind, std::uint64_t seed,
                                     std::size_t patch_count, std::string description)
    : images_(std::move(images)), kind_(kind), seed_(seed), patch_count_(patch_count), description_(std::move(description)) {
  if (images_.empty()) throw ValidationError("filter-learning corpus is empty");
}

FilterBank LearnedBankSource::get(int size, int bits) {
  std::shared_future<FilterBank> future;
  std::promise<FilterBank> promise;
  bool owner = false;
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find({size, bits});
    if (it == cache_.end()) {
      future = promise.get_future().share();
      cache_.emplace(std::make_pair(size, bits), future);
      owner = true;
    } else {
      future = it->second;
    }
  }
  if (owner) {
    try {
      LearningOptions options;
      options.patch_count = std::max(patch_count_, static_cast<std::size_t>(10 * size * size));
      options.source = kind_;
      options.description = description_;
      promise.set_value(learn_filterbank(images_, size, bits, seed_, options));
    } catch (...) {
      promise.set_exception(std::current_exception());
    }
  }
  return future.get();
}

std::string LearnedBankSource::describe() const {
  return "learned:" + to_string(kind_) + ":" + std::to_string(images_.size()) + "images:m" +
         std::to_string(patch_count_) + ":seed" + std::to_string(seed_) +
         (description_.empty() ? "" : ":" + description_);
}

std::string DirectoryBankSource::file_name(int size, int bits) {
  return "bank_l" + std::to_string(size) + "_n" + std::to_string(bits) + ".bsif";
}

FilterBank DirectoryBankSource::get(int size, int bits) {
  std::lock_guard lock(mutex_);
  auto it = cache_.find({size, bits});
  if (it != cache_.end()) return it->second;
  FilterBank bank = load_filterbank(directory_ / file_name(size, bits));
  if (bank.size() != size || bank.bits() != bits) {
    throw ValidationError(file_name(size, bits) + ": bank has size " + std::to_string(bank.size()) + " and " +
                          std::to_string(bank.bits()) + " bits");
  }
  cache_.emplace(std::make_pair(size, bits), bank);
  return bank;
}

std::string ExperimentConfig::feature_key() const {
  std::string kind = to_string(feature);
  if (feature == FeatureKind::histogram && histogram_mode == HistogramMode::mask_excluded) kind += "_excluded";
  return "eye=" + to_string(eye) + ";padding=" + to_string(padding) + ";size=" + zero_pad(filter_size, 2) +
         ";bits=" + zero_pad(bits, 2) + ";feature=" + kind;
}

std::string ExperimentConfig::key() const { return feature_key() + ";classifier=" + classifier.key(); }

std::string ExperimentConfig::hash() const {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << fnv1a(key());
  return s.str();
}

FeatureVector extract_feature(const Sample& sample, const FilterBank& bank, const ExperimentConfig& config) {
  const NormalizedIris zeroed = apply_mask_zero(sample.iris);
  const CodeImage code = encode(zeroed.strip, zeroed.mask, bank, config.padding);
  FeatureVector f = config.feature == FeatureKind::histogram ? histogram_feature(code, config.histogram_mode)
                                                              : full_image_feature(code);
  f.label = sample.gender;
  f.source_id = sample.sample_id;
  f.eye = sample.eye;
  return f;
}

namespace {

struct SelectedFeatures {
  std::vector<const Sample*> samples;
  std::vector<FeatureVector> features;
};

SelectedFeatures compute_features(const Corpus& corpus, const SplitPlan& split, const ExperimentConfig& config,
                                  FilterBankSource& banks) {
  if (config.bits < 1 || config.bits > kMaxBits) throw ValidationError("bit count out of range");
  SelectedFeatures out;
  const auto selection_seed = derive_seed(split.seed, 1000 + static_cast<std::uint64_t>(config.eye));
  out.samples = select_one_per_subject(corpus, config.eye, selection_seed);
  const FilterBank bank = banks.get(config.filter_size, config.bits);
  out.features.reserve(out.samples.size());
  for (const Sample* s : out.samples) out.features.push_back(extract_feature(*s, bank, config));
  return out;
}

LabeledDataset make_dataset(const SelectedFeatures& selected, const std::vector<std::size_t>& rows) {
  LabeledDataset data;
  if (rows.empty()) throw ValidationError("no samples fall in the requested subject set");
  const auto d = static_cast<Eigen::Index>(selected.features[rows.front()].values.size());
  data.features.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& values = selected.features[rows[r]].values;
    for (Eigen::Index j = 0; j < d; ++j) data.features(static_cast<Eigen::Index>(r), j) = values[static_cast<std::size_t>(j)];
    data.labels.push_back(label_of(selected.samples[rows[r]]->gender));
    data.subject_ids.push_back(selected.samples[rows[r]]->subject_id);
  }
  return data;
}

template <typename Predicate>
std::vector<std::size_t> rows_where(const SelectedFeatures& selected, Predicate keep) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < selected.samples.size(); ++i) {
    if (keep(selected.samples[i]->subject_id)) rows.push_back(i);
  }
  return rows;
}

struct Evaluation {
  int male_correct = 0;
  int male_total = 0;
  int female_correct = 0;
  int female_total = 0;
  int train_size = 0;
  int test_size = 0;

  double accuracy() const {
    const int total = male_total + female_total;
    return total == 0 ? 0.0 : static_cast<double>(male_correct + female_correct) / total;
  }
};

Evaluation train_and_test(const SelectedFeatures& selected, const std::vector<std::size_t>& train_rows,
                          const std::vector<std::size_t>& test_rows, const ClassifierConfig& classifier_config) {
  const LabeledDataset train = make_dataset(selected, train_rows);
  auto classifier = make_classifier(classifier_config);
  classifier->fit(train);
  Evaluation ev;
  ev.train_size = static_cast<int>(train_rows.size());
  ev.test_size = static_cast<int>(test_rows.size());
  for (std::size_t row : test_rows) {
    const Gender truth = selected.samples[row]->gender;
    const Prediction p = classifier->predict(selected.features[row].values);
    if (truth == Gender::male) {
      ++ev.male_total;
      ev.male_correct += p.label == Gender::male ? 1 : 0;
    } else {
      ++ev.female_total;
      ev.female_correct += p.label == Gender::female ? 1 : 0;
    }
  }
  return ev;
}

ResultRecord evaluate_on_split(const SelectedFeatures& selected, const SplitPlan& split, const ExperimentConfig& config) {
  const auto train_rows = rows_where(selected, [&](const std::string& id) { return split.is_train(id); });
  const auto test_rows = rows_where(selected, [&](const std::string& id) { return split.is_test(id); });
  if (test_rows.empty()) throw ValidationError("no test samples for eye " + to_string(config.eye));
  const Evaluation ev = train_and_test(selected, train_rows, test_rows, config.classifier);
  ResultRecord r;
  r.config = config;
  r.accuracy = ev.accuracy();
  r.male_correct = ev.male_correct;
  r.male_total = ev.male_total;
  r.female_correct = ev.female_correct;
  r.female_total = ev.female_total;
  r.train_size = ev.train_size;
  r.test_size = ev.test_size;
  return r;
}

}  // namespace

ResultRecord run_config(const Corpus& corpus, const SplitPlan& split, const ExperimentConfig& config,
                        FilterBankSource& banks) {
  const auto start = std::chrono::steady_clock::now();
  try {
    const SelectedFeatures selected = compute_features(corpus, split, config, banks);
    ResultRecord r = evaluate_on_split(selected, split, config);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  } catch (const Error& e) {
    throw Error("config " + config.key() + ": " + e.what());
  }
}

CrossValidation cross_validate(const Corpus& corpus, const SplitPlan& split, const ExperimentConfig& config,
                               FilterBankSource& banks) {
  CrossValidation cv;
  try {
    const SelectedFeatures selected = compute_features(corpus, split, config, banks);
    for (int k = 0; k < kFolds; ++k) {
      const auto& held_out = split.folds[static_cast<std::size_t>(k)];
      const auto train_rows = rows_where(selected, [&](const std::string& id) {
        return split.is_train(id) && !held_out.contains(id);
      });
      const auto validation_rows = rows_where(selected, [&](const std::string& id) { return held_out.contains(id); });
      cv.fold_accuracy[static_cast<std::size_t>(k)] =
          train_and_test(selected, train_rows, validation_rows, config.classifier).accuracy();
    }
  } catch (const Error& e) {
    throw Error("config " + config.key() + ": " + e.what());
  }
  double sum = 0.0;
  for (double a : cv.fold_accuracy) sum += a;
  cv.mean = sum / kFolds;
  double sq = 0.0;
  for (double a : cv.fold_accuracy) sq += (a - cv.mean) * (a - cv.mean);
  cv.stddev = std::sqrt(sq / (kFolds - 1));
  return cv;
}

std::vector<ExperimentConfig> GridSpec::expand() const {
  std::vector<ExperimentConfig> configs;
  for (Eye eye : eyes) {
    for (const auto& padding : paddings) {
      for (int size : filter_sizes) {
        for (int b : bits) {
          for (FeatureKind kind : feature_kinds) {
            for (const auto& classifier : classifiers) {
              ExperimentConfig c;
              c.padding = padding;
              c.filter_size = size;
              c.bits = b;
              c.feature = kind;
              c.histogram_mode = histogram_mode;
              c.classifier = classifier;
              c.eye = eye;
              configs.push_back(c);
            }
          }
        }
      }
    }
  }
  std::sort(configs.begin(), configs.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
  const auto dup = std::adjacent_find(configs.begin(), configs.end(),
                                      [](const auto& a, const auto& b) { return a.key() == b.key(); });
  if (dup != configs.end()) throw ValidationError("grid lists a configuration twice: " + dup->key());
  return configs;
}

std::string results_csv_header() {
  return "config_hash,padding,filter_size,bits,feature_kind,classifier,eye,accuracy,male_correct,male_total,"
         "female_correct,female_total,seconds";
}

std::string results_csv_row(const ResultRecord& r) {
  std::string kind = to_string(r.config.feature);
  if (r.config.feature == FeatureKind::histogram && r.config.histogram_mode == HistogramMode::mask_excluded) {
    kind += "_excluded";
  }
  std::ostringstream seconds;
  seconds << std::fixed << std::setprecision(3) << r.seconds;
  std::ostringstream row;
  row << r.config.hash() << "," << to_string(r.config.padding) << "," << r.config.filter_size << "," << r.config.bits
      << "," << kind << "," << r.config.classifier.key() << "," << to_string(r.config.eye) << ","
      << format_double(r.accuracy) << "," << r.male_correct << "," << r.male_total << "," << r.female_correct << ","
      << r.female_total << "," << seconds.str();
  return row.str();
}

void write_results_csv(std::ostream& out, const std::vector<ResultRecord>& records,
                       const std::vector<std::string>& provenance) {
  for (const auto& line : provenance) out << "# " << line << "\n";
  out << results_csv_header() << "\n";
  for (const auto& r : records) out << results_csv_row(r) << "\n";
}

const ResultRecord& best_record(const std::vector<ResultRecord>& records) {
  if (records.empty()) throw ValidationError("no results to choose from");
  const ResultRecord* best = &records.front();
  for (const auto& r : records) {
    const auto rank = [](const ResultRecord& x) {
      return std::make_tuple(-x.accuracy, x.config.bits, x.config.filter_size, x.config.key());
    };
    if (rank(r) < rank(*best)) best = &r;
  }
  return *best;
}

namespace {

struct ExistingResults {
  std::vector<std::string> provenance;
  std::map<std::string, std::vector<std::string>> rows_by_hash;
};

ExistingResults read_existing_results(const std::filesystem::path& path) {
  ExistingResults out;
  std::ifstream file(path, std::ios::binary);
  if (!file) return out;
  std::string text((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  // A final line without its newline was cut short by an interrupted write.
  text.erase(text.find_last_of('\n') == std::string::npos ? 0 : text.find_last_of('\n') + 1);
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  std::size_t line_number = 0;
  const auto columns = split_fields(results_csv_header()).size();
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (!header_seen) out.provenance.push_back(line.size() > 2 ? line.substr(2) : std::string{});
      continue;
    }
    if (!header_seen) {
      if (line != results_csv_header()) throw FormatError(path.string() + ": unexpected results CSV header");
      header_seen = true;
      continue;
    }
    auto fields = split_fields(line);
    if (fields.size() != columns) continue;
    out.rows_by_hash[fields[0]] = std::move(fields);
  }
  return out;
}

ResultRecord record_from_row(const ExperimentConfig& config, const std::vector<std::string>& f, const std::string& where) {
  ResultRecord r;
  r.config = config;
  r.accuracy = parse_double(f[7], where);
  r.male_correct = parse_int(f[8], where);
  r.male_total = parse_int(f[9], where);
  r.female_correct = parse_int(f[10], where);
  r.female_total = parse_int(f[11], where);
  r.test_size = r.male_total + r.female_total;
  r.seconds = parse_double(f[12], where);
  return r;
}

}  // namespace

GridOutcome run_grid(const Corpus& corpus, const SplitPlan& split, const GridSpec& grid, FilterBankSource& banks,
                     const GridOptions& options) {
  const std::vector<ExperimentConfig> configs = grid.expand();
  GridOutcome outcome;
  std::vector<std::optional<ResultRecord>> results(configs.size());

  const bool to_file = !options.csv_path.empty();
  if (to_file && options.resume && std::filesystem::exists(options.csv_path)) {
    const ExistingResults existing = read_existing_results(options.csv_path);
    if (existing.provenance != options.provenance) {
      throw ValidationError(options.csv_path.string() +
                            ": existing results come from a different run configuration; refusing to resume");
    }
    for (std::size_t i = 0; i < configs.size(); ++i) {
      auto it = existing.rows_by_hash.find(configs[i].hash());
      if (it == existing.rows_by_hash.end()) continue;
      results[i] = record_from_row(configs[i], it->second, options.csv_path.string());
      ++outcome.resumed;
    }
  }

  std::ofstream progress;
  std::mutex progress_mutex;
  if (to_file) {
    std::vector<ResultRecord> done;
    for (const auto& r : results) {
      if (r) done.push_back(*r);
    }
    std::ofstream fresh(options.csv_path, std::ios::trunc);
    if (!fresh) throw IoError(options.csv_path.string() + ": cannot open for writing");
    write_results_csv(fresh, done, options.provenance);
    fresh.close();
    progress.open(options.csv_path, std::ios::app);
    if (!progress) throw IoError(options.csv_path.string() + ": cannot open for writing");
  }

  // Configurations sharing a feature key reuse one set of encoded features.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (!results[i]) groups[configs[i].feature_key()].push_back(i);
  }
  std::vector<std::vector<std::size_t>> work;
  for (auto& [key, members] : groups) work.push_back(std::move(members));

  std::vector<std::optional<std::string>> errors(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t g = next++; g < work.size(); g = next++) {
      const auto& members = work[g];
      const auto start = std::chrono::steady_clock::now();
      std::optional<SelectedFeatures> selected;
      std::string feature_error;
      try {
        selected = compute_features(corpus, split, configs[members.front()], banks);
      } catch (const std::exception& e) {
        feature_error = e.what();
      }
      const double feature_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      for (std::size_t i : members) {
        if (!selected) {
          errors[i] = feature_error;
          continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        try {
          ResultRecord r = evaluate_on_split(*selected, split, configs[i]);
          const double own = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          r.seconds = options.record_timing ? feature_seconds + own : 0.0;
          if (to_file) {
            std::lock_guard lock(progress_mutex);
            progress << results_csv_row(r) << "\n" << std::flush;
          }
          results[i] = std::move(r);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(std::max<std::size_t>(work.size(), 1))));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (progress.is_open()) progress.close();

  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (results[i]) {
      outcome.records.push_back(std::move(*results[i]));
    } else if (errors[i]) {
      outcome.failures.push_back({configs[i], *errors[i]});
    }
  }

  if (to_file) {
    const auto tmp = std::filesystem::path(options.csv_path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw IoError(tmp.string() + ": cannot open for writing");
      write_results_csv(out, outcome.records, options.provenance);
      if (!out) throw IoError(tmp.string() + ": write failed");
    }
    std::filesystem::rename(tmp, options.csv_path);
  }
  return outcome;
}

}  // namespace mbsif
