// Command-line front end for the MBSIF pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
// stderr; every written artifact starts with a provenance header.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mbsif/bsif.hpp"
#include "mbsif/classifiers.hpp"
#include "mbsif/errors.hpp"
#include "mbsif/experiment.hpp"
#include "mbsif/filter_learning.hpp"
#include "mbsif/imaging.hpp"
#include "mbsif/iris.hpp"
#include "mbsif/rng.hpp"
#include "mbsif/synthetic.hpp"

namespace fs = std::filesystem;
using namespace mbsif;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int parse_int(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError("invalid " + what + " '" + text + "'");
  }
}

/// "5,7,9", "5-12" or any comma-separated mix of both.
std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (const auto& item : split(text, ',')) {
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(parse_int(item, what));
      continue;
    }
    const int lo = parse_int(item.substr(0, dash), what);
    const int hi = parse_int(item.substr(dash + 1), what);
    if (hi < lo) throw UsageError("empty " + what + " range '" + item + "'");
    for (int v = lo; v <= hi; ++v) out.push_back(v);
  }
  if (out.empty()) throw UsageError("no " + what + " given");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string join(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  const char* env = std::getenv("MBSIF_SEED");
  if (env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("MBSIF_SEED must be an unsigned integer, got '") + env + "'");
  }
  return 0;
}

/// Provenance header: tool version, resolved configuration, seed.
std::vector<std::string> provenance(const std::string& command, std::uint64_t seed) {
  return {std::string("mbsif ") + MBSIF_VERSION, "command: mbsif " + command, "seed: " + std::to_string(seed)};
}

std::string quote(const fs::path& path) {
  const std::string raw = path.string();
  if (!raw.empty() && raw.find_first_of(" \t\"'\\") == std::string::npos) return raw;
  std::ostringstream s;
  s << std::quoted(raw);
  return s.str();
}

std::vector<GrayImage> load_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".png")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError(dir.string() + ": no .pgm or .png images found");
  std::vector<GrayImage> images;
  for (const auto& f : files) images.push_back(load_gray(f));
  return images;
}

Circle parse_circle(const std::string& text, const std::string& what) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw UsageError(what + " must be cx,cy,r");
  try {
    return {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
  } catch (const std::exception&) {
    throw UsageError("invalid " + what + " '" + text + "'");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string() + ": write failed");
}

std::vector<FeatureVector> read_features(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  return read_feature_csv(in, path.string());
}

LabeledDataset to_dataset(const std::vector<FeatureVector>& features, bool require_labels) {
  if (features.empty()) throw ValidationError("feature file holds no rows");
  LabeledDataset d;
  const auto dims = static_cast<Eigen::Index>(features.front().values.size());
  d.features.resize(static_cast<Eigen::Index>(features.size()), dims);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    if (static_cast<Eigen::Index>(f.values.size()) != dims) throw ValidationError("feature rows differ in length");
    for (Eigen::Index j = 0; j < dims; ++j) d.features(static_cast<Eigen::Index>(i), j) = f.values[static_cast<std::size_t>(j)];
    if (f.label == Gender::unknown && require_labels) {
      throw ValidationError("sample '" + f.source_id + "' has no gender label");
    }
    d.labels.push_back(f.label == Gender::unknown ? 0 : label_of(f.label));
    d.subject_ids.push_back(f.source_id);
  }
  return d;
}

// ---------------------------------------------------------------- subcommands

struct LearnArgs {
  fs::path corpus;
  int size = 11;
  int bits = 8;
  std::optional<std::uint64_t> seed;
  std::size_t patches = kDefaultPatchCount;
  std::string source = "custom";
  fs::path out;
};

int run_learn(const LearnArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed);
  const CorpusKind kind = parse_corpus_kind(a.source);
  std::ostringstream cmd;
  cmd << "learn-filters --corpus " << quote(a.corpus) << " --size " << a.size << " --bits " << a.bits << " --patches "
      << a.patches << " --source " << to_string(kind) << " --seed " << seed;
  LearningOptions options;
  options.patch_count = a.patches;
  options.source = kind;
  std::string description;
  for (const auto& line : provenance(cmd.str(), seed)) description += line + "\n";
  options.description = description;

  LearningReport report;
  const FilterBank bank = learn_filterbank(load_image_dir(a.corpus), a.size, a.bits, seed, options, &report);
  for (std::size_t i : report.skipped_images) std::cerr << "mbsif: warning: skipped image " << i << " (smaller than l)\n";
  if (!report.ica.converged) {
    std::cerr << "mbsif: warning: FastICA stopped after " << report.ica.iterations << " iterations (change "
              << report.ica.last_change << ")\n";
  }
  save_filterbank(bank, a.out);
  std::cout << "bank " << a.out.string() << ": l=" << bank.size() << " n=" << bank.bits() << " source="
            << to_string(bank.source()) << " seed=" << bank.seed() << " ica_iterations=" << report.ica.iterations
            << "\n";
  return 0;
}

struct NormalizeArgs {
  fs::path input;
  fs::path mask;
  std::string pupil;
  std::string iris;
  fs::path manifest;
  fs::path out;
  fs::path mask_out;
  int radial = kDefaultRadialSamples;
  int angular = kDefaultAngularSamples;
};

int run_normalize(const NormalizeArgs& a) {
  if (!a.manifest.empty()) {
    // Batch mode: unwrap every entry into <out>/ and write a strip manifest.
    const DatasetManifest manifest = read_manifest(a.manifest);
    const Corpus corpus = load_corpus(manifest, a.radial, a.angular);
    fs::create_directories(a.out);
    std::ostringstream cmd;
    cmd << "normalize --manifest " << quote(a.manifest) << " --out " << quote(a.out) << " --radial " << a.radial
        << " --angular " << a.angular;
    const auto header = provenance(cmd.str(), 0);
    DatasetManifest strips;
    for (const Sample& s : corpus) {
      const fs::path strip = a.out / (s.sample_id + ".pgm");
      const fs::path mask = a.out / (s.sample_id + "_mask.pgm");
      save_gray(s.iris.strip.to_gray(), strip, header);
      save_gray(s.iris.mask.to_gray(), mask, header);
      strips.entries.push_back({s.sample_id, s.subject_id, s.eye, s.gender, strip.filename(), mask.filename(), {}, {}});
    }
    std::ofstream out(a.out / "manifest.csv");
    write_manifest(out, strips, header);
    std::cerr << "normalized " << corpus.size() << " samples into " << a.out.string() << "\n";
    return 0;
  }
  if (a.input.empty() || a.pupil.empty() || a.iris.empty() || a.out.empty()) {
    throw UsageError("normalize needs --in, --pupil, --iris and --out (or --manifest)");
  }
  const GrayImage image = load_gray(a.input);
  IrisAnnotation ann{parse_circle(a.pupil, "--pupil"), parse_circle(a.iris, "--iris"),
                     a.mask.empty() ? BitMask(image.width(), image.height()) : BitMask::from_gray(load_gray(a.mask))};
  const NormalizedIris n = rubber_sheet(image, ann, a.radial, a.angular);
  std::ostringstream cmd;
  cmd << "normalize --in " << quote(a.input) << (a.mask.empty() ? "" : " --mask " + quote(a.mask)) << " --pupil "
      << a.pupil << " --iris " << a.iris << " --radial " << a.radial << " --angular " << a.angular << " --out "
      << quote(a.out);
  const auto header = provenance(cmd.str(), 0);
  save_gray(n.strip.to_gray(), a.out, header);
  if (!a.mask_out.empty()) save_gray(n.mask.to_gray(), a.mask_out, header);
  return 0;
}

struct EncodeArgs {
  fs::path bank;
  fs::path input;
  fs::path mask;
  std::string padding = "modified";
  fs::path dump_code;
  fs::path out;
  std::string feature = "histogram";
  std::string histogram_mode = "mask_zeroed";
};

int run_encode(const EncodeArgs& a) {
  if (a.dump_code.empty() && a.out.empty()) throw UsageError("encode needs --dump-code and/or --out");
  const FilterBank bank = load_filterbank(a.bank);
  const PaddingStrategy padding = parse_padding(a.padding);
  const FloatImage strip = FloatImage::from_gray(load_gray(a.input));
  const BitMask mask = a.mask.empty() ? BitMask(strip.width(), strip.height()) : BitMask::from_gray(load_gray(a.mask));
  NormalizedIris n{strip, mask, a.input.stem().string(), Eye::left, Gender::unknown};
  n = apply_mask_zero(std::move(n));
  const CodeImage code = encode(n.strip, n.mask, bank, padding);

  std::ostringstream cmd;
  cmd << "encode --bank " << quote(a.bank) << " --in " << quote(a.input)
      << (a.mask.empty() ? "" : " --mask " + quote(a.mask)) << " --padding " << to_string(padding);
  if (!a.dump_code.empty()) cmd << " --dump-code " << quote(a.dump_code);
  if (!a.out.empty()) cmd << " --feature " << a.feature << " --histogram-mode " << a.histogram_mode << " --out " << quote(a.out);
  const auto header = provenance(cmd.str(), bank.seed());
  if (!a.dump_code.empty()) save_code_image(code, a.dump_code, header);
  if (!a.out.empty()) {
    const FeatureKind kind = parse_feature_kind(a.feature);
    FeatureVector f = kind == FeatureKind::histogram ? histogram_feature(code, parse_histogram_mode(a.histogram_mode))
                                                     : full_image_feature(code);
    f.source_id = n.source_id;
    std::ostringstream csv;
    write_feature_csv(csv, {f}, header);
    write_text(a.out, csv.str());
  }
  return 0;
}

struct FeaturesArgs {
  fs::path manifest;
  fs::path bank;
  std::string padding = "modified";
  std::string feature = "histogram";
  std::string histogram_mode = "mask_zeroed";
  std::string eye;
  fs::path out;
};

int run_features(const FeaturesArgs& a) {
  const FilterBank bank = load_filterbank(a.bank);
  ExperimentConfig config;
  config.padding = parse_padding(a.padding);
  config.filter_size = bank.size();
  config.bits = bank.bits();
  config.feature = parse_feature_kind(a.feature);
  config.histogram_mode = parse_histogram_mode(a.histogram_mode);
  const bool filter_eye = !a.eye.empty();
  const Eye eye = filter_eye ? parse_eye(a.eye) : Eye::left;

  const Corpus corpus = load_corpus(read_manifest(a.manifest));
  std::vector<FeatureVector> features;
  for (const Sample& s : corpus) {
    if (filter_eye && s.eye != eye) continue;
    features.push_back(extract_feature(s, bank, config));
  }
  std::ostringstream cmd;
  cmd << "features --manifest " << quote(a.manifest) << " --bank " << quote(a.bank) << " --padding "
      << to_string(config.padding) << " --feature " << to_string(config.feature) << " --histogram-mode "
      << to_string(config.histogram_mode) << (filter_eye ? " --eye " + to_string(eye) : "") << " --out " << quote(a.out);
  std::ostringstream csv;
  write_feature_csv(csv, features, provenance(cmd.str(), bank.seed()));
  write_text(a.out, csv.str());
  std::cerr << "wrote " << features.size() << " feature vectors to " << a.out.string() << "\n";
  return 0;
}

struct ClassifierArgs {
  std::string classifier = "adaboost";
  int rounds = 100;
  int trees = 500;
  int mtry = 0;
  int max_depth = 0;
};

ClassifierConfig make_classifier_config(const ClassifierArgs& a, const std::string& kind, std::uint64_t seed) {
  ClassifierConfig c;
  c.kind = parse_classifier_kind(kind);
  c.rounds = a.rounds;
  c.forest.trees = a.trees;
  c.forest.features_per_split = a.mtry;
  c.forest.max_depth = a.max_depth;
  c.forest.seed = seed;
  return c;
}

std::string classifier_flags(const ClassifierArgs& a) {
  std::ostringstream s;
  s << " --classifier " << a.classifier << " --rounds " << a.rounds << " --trees " << a.trees << " --mtry " << a.mtry
    << " --max-depth " << a.max_depth;
  return s.str();
}

struct TrainArgs {
  fs::path features;
  ClassifierArgs classifier;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

int run_train(const TrainArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed);
  const LabeledDataset data = to_dataset(read_features(a.features), true);
  const ClassifierConfig config = make_classifier_config(a.classifier, a.classifier.classifier, seed);
  const Model model = train_model(config, data);
  save_model(model, a.out);
  std::cout << "model " << a.out.string() << ": " << config.key() << " on " << data.size() << " samples, "
            << data.dims() << " features";
  if (const auto* forest = std::get_if<ForestModel>(&model)) std::cout << ", oob_accuracy=" << forest->oob_accuracy;
  std::cout << "\n";
  return 0;
}

struct EvaluateArgs {
  fs::path model;
  fs::path features;
  fs::path out;
};

int run_evaluate(const EvaluateArgs& a) {
  const Model model = load_model(a.model);
  const auto features = read_features(a.features);
  const LabeledDataset data = to_dataset(features, false);
  int correct[2] = {0, 0};
  int total[2] = {0, 0};
  std::ostringstream rows;
  rows << "sample_id,eye,gender,predicted,score\n";
  std::vector<double> x(static_cast<std::size_t>(data.dims()));
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dims(); ++j) x[static_cast<std::size_t>(j)] = data.features(i, j);
    const Prediction p = predict(model, x);
    const auto& f = features[static_cast<std::size_t>(i)];
    rows << f.source_id << "," << to_string(f.eye) << "," << to_string(f.label) << "," << to_string(p.label) << ","
         << p.score << "\n";
    if (f.label == Gender::unknown) continue;
    const int k = f.label == Gender::male ? 0 : 1;
    ++total[k];
    correct[k] += p.label == f.label;
  }
  if (!a.out.empty()) {
    std::ostringstream cmd;
    cmd << "evaluate --model " << quote(a.model) << " --features " << quote(a.features) << " --out " << quote(a.out);
    std::string text;
    for (const auto& line : provenance(cmd.str(), 0)) text += "# " + line + "\n";
    write_text(a.out, text + rows.str());
  }
  const int n = total[0] + total[1];
  std::cout << "accuracy=" << (n ? static_cast<double>(correct[0] + correct[1]) / n : 0.0) << " male=" << correct[0]
            << "/" << total[0] << " female=" << correct[1] << "/" << total[1] << "\n";
  return 0;
}

struct GridArgs {
  fs::path manifest;
  int synthetic = 0;
  std::string sizes = "5,7,9,11,13,15,17";
  std::string bits = "5-12";
  std::string padding = "modified";
  std::string feature = "histogram";
  std::string histogram_mode = "mask_zeroed";
  ClassifierArgs classifier;
  std::string eye = "left,right";
  fs::path bank_corpus;
  std::string bank_source = "eye";
  fs::path bank_dir;
  std::size_t patches = kDefaultPatchCount;
  std::optional<std::uint64_t> seed;
  double train_fraction = 0.8;
  int jobs = 1;
  bool resume = false;
  bool timing = false;
  fs::path out;
};

int run_grid_command(const GridArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed);
  if (a.manifest.empty() == (a.synthetic == 0)) throw UsageError("grid needs exactly one of --manifest or --synthetic");
  if (a.bank_corpus.empty() == a.bank_dir.empty()) throw UsageError("grid needs exactly one of --bank-corpus or --bank-dir");

  GridSpec grid;
  grid.filter_sizes = parse_int_list(a.sizes, "filter size");
  grid.bits = parse_int_list(a.bits, "bit count");
  grid.paddings.clear();
  for (const auto& p : split(a.padding, ',')) grid.paddings.push_back(parse_padding(p));
  grid.feature_kinds.clear();
  for (const auto& f : split(a.feature, ',')) grid.feature_kinds.push_back(parse_feature_kind(f));
  grid.histogram_mode = parse_histogram_mode(a.histogram_mode);
  grid.classifiers.clear();
  for (const auto& c : split(a.classifier.classifier, ',')) grid.classifiers.push_back(make_classifier_config(a.classifier, c, seed));
  grid.eyes.clear();
  for (const auto& e : split(a.eye, ',')) grid.eyes.push_back(parse_eye(e));
  if (grid.paddings.empty() || grid.feature_kinds.empty() || grid.classifiers.empty() || grid.eyes.empty()) {
    throw UsageError("grid lists must not be empty");
  }

  Corpus corpus;
  if (a.synthetic > 0) {
    SyntheticCorpusOptions o;
    o.subjects = a.synthetic;
    o.seed = seed;
    corpus = make_synthetic_corpus(o);
  } else {
    corpus = load_corpus(read_manifest(a.manifest));
  }
  std::unique_ptr<FilterBankSource> banks;
  if (!a.bank_dir.empty()) {
    banks = std::make_unique<DirectoryBankSource>(a.bank_dir);
  } else {
    banks = std::make_unique<LearnedBankSource>(load_image_dir(a.bank_corpus), parse_corpus_kind(a.bank_source), seed,
                                                a.patches, a.bank_corpus.string());
  }
  const SplitPlan split_plan = make_split(corpus, a.train_fraction, seed);

  std::ostringstream cmd;
  cmd << "grid " << (a.synthetic ? "--synthetic " + std::to_string(a.synthetic) : "--manifest " + quote(a.manifest))
      << " --sizes " << join(grid.filter_sizes) << " --bits " << join(grid.bits) << " --padding " << a.padding
      << " --feature " << a.feature << " --histogram-mode " << to_string(grid.histogram_mode)
      << classifier_flags(a.classifier) << " --eye " << a.eye
      << (a.bank_dir.empty() ? " --bank-corpus " + quote(a.bank_corpus) + " --bank-source " + a.bank_source +
                                   " --patches " + std::to_string(a.patches)
                             : " --bank-dir " + quote(a.bank_dir))
      << " --train-fraction " << a.train_fraction << " --seed " << seed << (a.timing ? " --timing" : "");

  GridOptions options;
  options.jobs = a.jobs;
  options.csv_path = a.out;
  options.resume = a.resume;
  options.record_timing = a.timing;
  options.provenance = provenance(cmd.str(), seed);
  const GridOutcome outcome = run_grid(corpus, split_plan, grid, *banks, options);

  for (const auto& f : outcome.failures) std::cerr << "mbsif: config " << f.config.key() << " failed: " << f.message << "\n";
  std::cerr << outcome.records.size() << " configurations (" << outcome.resumed << " resumed), "
            << outcome.failures.size() << " failed; results in " << a.out.string() << "\n";
  for (Eye e : grid.eyes) {
    std::vector<ResultRecord> per_eye;
    for (const auto& r : outcome.records) {
      if (r.config.eye == e) per_eye.push_back(r);
    }
    if (per_eye.empty()) continue;
    const ResultRecord& best = best_record(per_eye);
    std::cout << "best " << to_string(e) << ": " << best.config.key() << " accuracy=" << best.accuracy << "\n";
  }
  return outcome.failures.empty() ? 0 : 2;
}

struct SynthArgs {
  fs::path out;
  int subjects = 400;
  int informative_rows = SyntheticCorpusOptions{}.informative_rows;
  int radial = kDefaultRadialSamples;
  int angular = kDefaultAngularSamples;
  std::optional<std::uint64_t> seed;
  bool eye_images = false;
  int filter_corpora = 0;
};

int run_synth(const SynthArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed);
  SyntheticCorpusOptions o;
  o.subjects = a.subjects;
  o.seed = seed;
  o.informative_rows = a.informative_rows;
  o.radial = a.radial;
  o.angular = a.angular;
  const Corpus corpus = make_synthetic_corpus(o);

  std::ostringstream cmd;
  cmd << "synth-corpus --out " << quote(a.out) << " --subjects " << a.subjects << " --informative-rows "
      << a.informative_rows << " --radial " << a.radial << " --angular " << a.angular << " --seed " << seed
      << (a.eye_images ? " --eye-images" : "") << " --filter-corpora " << a.filter_corpora;
  const auto header = provenance(cmd.str(), seed);

  fs::create_directories(a.out / "samples");
  DatasetManifest manifest;
  manifest.source_name = "synthetic";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Sample& s = corpus[i];
    const fs::path image = fs::path("samples") / (s.sample_id + ".pgm");
    const fs::path mask = fs::path("samples") / (s.sample_id + "_mask.pgm");
    ManifestEntry e{s.sample_id, s.subject_id, s.eye, s.gender, image, mask, {}, {}};
    if (a.eye_images) {
      const SyntheticEye eye = render_eye(s.iris.strip, s.iris.mask, derive_seed(seed, 1'000'000 + i));
      save_gray(eye.image, a.out / image, header);
      save_gray(eye.annotation.occlusion.to_gray(), a.out / mask, header);
      e.pupil = eye.annotation.pupil;
      e.iris = eye.annotation.iris;
    } else {
      save_gray(s.iris.strip.to_gray(), a.out / image, header);
      save_gray(s.iris.mask.to_gray(), a.out / mask, header);
    }
    manifest.entries.push_back(std::move(e));
  }
  std::ostringstream csv;
  write_manifest(csv, manifest, header);
  write_text(a.out / "manifest.csv", csv.str());

  if (a.filter_corpora > 0) {
    fs::create_directories(a.out / "eyes");
    fs::create_directories(a.out / "natural");
    const auto eyes = synthetic_eye_images(a.filter_corpora, derive_seed(seed, 1));
    const auto natural = synthetic_natural_images(a.filter_corpora, derive_seed(seed, 2));
    for (int i = 0; i < a.filter_corpora; ++i) {
      std::ostringstream name;
      name << std::setw(2) << std::setfill('0') << i << ".pgm";
      save_gray(eyes[static_cast<std::size_t>(i)], a.out / "eyes" / name.str(), header);
      save_gray(natural[static_cast<std::size_t>(i)], a.out / "natural" / name.str(), header);
    }
  }
  std::cerr << "wrote " << corpus.size() << " samples to " << a.out.string() << "\n";
  return 0;
}

int run_inspect(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  char magic[6] = {};
  in.read(magic, 6);
  const std::string family(magic, static_cast<std::size_t>(in.gcount()));
  if (family == "MBSIFB") {
    const FilterBank bank = load_filterbank(path);
    std::cout << "filter bank " << path.string() << "\n"
              << "  size: " << bank.size() << "x" << bank.size() << "\n"
              << "  bits: " << bank.bits() << "\n"
              << "  source: " << to_string(bank.source()) << "\n"
              << "  seed: " << bank.seed() << "\n";
    for (int i = 0; i < bank.bits(); ++i) {
      std::cout << "  filter " << i << ": norm " << bank.weights().row(i).norm() << ", sum " << bank.weights().row(i).sum()
                << "\n";
    }
    if (!bank.description().empty()) {
      std::cout << "  description:\n";
      for (const auto& line : split(bank.description(), '\n')) std::cout << "    " << line << "\n";
    }
    return 0;
  }
  if (family == "MBSIFM") {
    const Model model = load_model(path);
    std::cout << "model " << path.string() << "\n";
    if (const auto* b = std::get_if<BoostModel>(&model)) {
      std::cout << "  kind: " << (b->kind == BoostKind::adaboost_m1 ? "adaboost" : "logitboost") << "\n"
                << "  features: " << b->dims << "\n  rounds: " << b->rounds << " (" << b->stumps.size() << " stumps)\n";
    } else {
      const auto& f = std::get<ForestModel>(model);
      std::cout << "  kind: forest\n  features: " << f.dims << "\n  trees: " << f.trees.size()
                << "\n  features per split: " << f.features_per_split << "\n  seed: " << f.seed << "\n";
    }
    return 0;
  }
  throw FormatError(path.string() + ": not a filter bank or model file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MBSIF iris texture pipeline: filter learning, encoding, classification and grid evaluation", "mbsif"};
  app.set_version_flag("--version", std::string(MBSIF_VERSION));
  app.require_subcommand(1);

  auto seed_option = [](CLI::App* cmd, std::optional<std::uint64_t>& seed) {
    cmd->add_option("--seed", seed, "RNG seed (default: $MBSIF_SEED, else 0)");
  };

  LearnArgs learn;
  auto* learn_cmd = app.add_subcommand("learn-filters", "Learn a BSIF filter bank from a directory of images");
  learn_cmd->add_option("--corpus", learn.corpus, "Directory of .pgm/.png training images")->required();
  learn_cmd->add_option("--size", learn.size, "Filter size l (odd, 3..63)")->capture_default_str();
  learn_cmd->add_option("--bits", learn.bits, "Number of filters n (1..16)")->capture_default_str();
  learn_cmd->add_option("--patches", learn.patches, "Patch count m")->capture_default_str();
  learn_cmd->add_option("--source", learn.source, "Corpus kind: natural, eye or custom")->capture_default_str();
  learn_cmd->add_option("--out", learn.out, "Output bank file")->required();
  seed_option(learn_cmd, learn.seed);

  NormalizeArgs norm;
  auto* norm_cmd = app.add_subcommand("normalize", "Unwrap an annotated eye image into a polar strip");
  norm_cmd->add_option("--in", norm.input, "Eye image");
  norm_cmd->add_option("--mask", norm.mask, "Occlusion mask image (>=128 occluded)");
  norm_cmd->add_option("--pupil", norm.pupil, "Pupil circle cx,cy,r");
  norm_cmd->add_option("--iris", norm.iris, "Iris circle cx,cy,r");
  norm_cmd->add_option("--manifest", norm.manifest, "Normalize every manifest entry instead");
  norm_cmd->add_option("--out", norm.out, "Strip image, or output directory with --manifest")->required();
  norm_cmd->add_option("--mask-out", norm.mask_out, "Strip mask image");
  norm_cmd->add_option("--radial", norm.radial, "Radial samples")->capture_default_str();
  norm_cmd->add_option("--angular", norm.angular, "Angular samples")->capture_default_str();

  EncodeArgs enc;
  auto* enc_cmd = app.add_subcommand("encode", "Encode a normalized strip into a BSIF code image");
  enc_cmd->add_option("--bank", enc.bank, "Filter bank file")->required();
  enc_cmd->add_option("--in", enc.input, "Normalized strip image")->required();
  enc_cmd->add_option("--mask", enc.mask, "Strip mask image");
  enc_cmd->add_option("--padding", enc.padding, "traditional, modified, full-replicate or radial/angular")
      ->capture_default_str();
  enc_cmd->add_option("--dump-code", enc.dump_code, "Write the code image as PGM");
  enc_cmd->add_option("--out", enc.out, "Write the feature vector as CSV");
  enc_cmd->add_option("--feature", enc.feature, "histogram or full_image")->capture_default_str();
  enc_cmd->add_option("--histogram-mode", enc.histogram_mode, "mask_zeroed or mask_excluded")->capture_default_str();

  FeaturesArgs feat;
  auto* feat_cmd = app.add_subcommand("features", "Extract feature vectors for every manifest entry");
  feat_cmd->add_option("--manifest", feat.manifest, "Dataset manifest CSV")->required();
  feat_cmd->add_option("--bank", feat.bank, "Filter bank file")->required();
  feat_cmd->add_option("--padding", feat.padding, "Padding strategy")->capture_default_str();
  feat_cmd->add_option("--feature", feat.feature, "histogram or full_image")->capture_default_str();
  feat_cmd->add_option("--histogram-mode", feat.histogram_mode, "mask_zeroed or mask_excluded")->capture_default_str();
  feat_cmd->add_option("--eye", feat.eye, "Only this eye (left or right)");
  feat_cmd->add_option("--out", feat.out, "Feature CSV")->required();

  auto classifier_options = [](CLI::App* cmd, ClassifierArgs& c, const std::string& what) {
    cmd->add_option("--classifier", c.classifier, what)->capture_default_str();
    cmd->add_option("--rounds", c.rounds, "Boosting rounds T")->capture_default_str();
    cmd->add_option("--trees", c.trees, "Forest size")->capture_default_str();
    cmd->add_option("--mtry", c.mtry, "Features per split (0: floor(sqrt(d)))")->capture_default_str();
    cmd->add_option("--max-depth", c.max_depth, "Tree depth limit (0: unlimited)")->capture_default_str();
  };

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier on a feature CSV");
  train_cmd->add_option("--features", train.features, "Feature CSV with gender labels")->required();
  classifier_options(train_cmd, train.classifier, "adaboost, logitboost or forest");
  train_cmd->add_option("--out", train.out, "Model file")->required();
  seed_option(train_cmd, train.seed);

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Apply a model to a feature CSV and report accuracy");
  eval_cmd->add_option("--model", eval.model, "Model file")->required();
  eval_cmd->add_option("--features", eval.features, "Feature CSV")->required();
  eval_cmd->add_option("--out", eval.out, "Per-sample predictions CSV");

  GridArgs grid;
  auto* grid_cmd = app.add_subcommand("grid", "Evaluate a grid of configurations under the subject-disjoint protocol");
  grid_cmd->add_option("--manifest", grid.manifest, "Dataset manifest CSV");
  grid_cmd->add_option("--synthetic", grid.synthetic, "Use a generated corpus with this many subjects instead");
  grid_cmd->add_option("--sizes", grid.sizes, "Filter sizes, list or range")->capture_default_str();
  grid_cmd->add_option("--bits", grid.bits, "Bit counts, list or range (e.g. 5-12)")->capture_default_str();
  grid_cmd->add_option("--padding", grid.padding, "Comma-separated padding strategies")->capture_default_str();
  grid_cmd->add_option("--feature", grid.feature, "Comma-separated feature kinds")->capture_default_str();
  grid_cmd->add_option("--histogram-mode", grid.histogram_mode, "mask_zeroed or mask_excluded")->capture_default_str();
  classifier_options(grid_cmd, grid.classifier, "Comma-separated classifiers");
  grid_cmd->add_option("--eye", grid.eye, "Comma-separated eyes")->capture_default_str();
  grid_cmd->add_option("--bank-corpus", grid.bank_corpus, "Learn banks from the images in this directory");
  grid_cmd->add_option("--bank-source", grid.bank_source, "Kind of --bank-corpus: natural, eye or custom")
      ->capture_default_str();
  grid_cmd->add_option("--bank-dir", grid.bank_dir, "Directory of bank_l<size>_n<bits>.bsif files");
  grid_cmd->add_option("--patches", grid.patches, "Patch count for learned banks")->capture_default_str();
  grid_cmd->add_option("--train-fraction", grid.train_fraction, "Per-gender training fraction")->capture_default_str();
  grid_cmd->add_option("--jobs", grid.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  grid_cmd->add_flag("--resume", grid.resume, "Skip configurations already present in --out");
  grid_cmd->add_flag("--timing", grid.timing, "Record wall time in the seconds column");
  grid_cmd->add_option("--out", grid.out, "Results CSV")->required();
  seed_option(grid_cmd, grid.seed);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-corpus", "Generate a synthetic two-class iris corpus");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--subjects", synth.subjects, "Subjects (first half male)")->capture_default_str();
  synth_cmd->add_option("--informative-rows", synth.informative_rows, "Rows carrying class texture")->capture_default_str();
  synth_cmd->add_option("--radial", synth.radial, "Strip height")->capture_default_str();
  synth_cmd->add_option("--angular", synth.angular, "Strip width")->capture_default_str();
  synth_cmd->add_flag("--eye-images", synth.eye_images, "Render annotated eye images instead of strips");
  synth_cmd->add_option("--filter-corpora", synth.filter_corpora, "Also write this many eye and natural training images")
      ->capture_default_str();
  seed_option(synth_cmd, synth.seed);

  fs::path inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print filter-bank or model metadata");
  inspect_cmd->add_option("file", inspect_path, "Bank or model file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mbsif: " << e.what() << "\n\n";
    const CLI::App* context = &app;
    for (const auto* sub : app.get_subcommands()) context = sub;
    std::cerr << context->help();
    return 1;
  }

  try {
    if (*learn_cmd) return run_learn(learn);
    if (*norm_cmd) return run_normalize(norm);
    if (*enc_cmd) return run_encode(enc);
    if (*feat_cmd) return run_features(feat);
    if (*train_cmd) return run_train(train);
    if (*eval_cmd) return run_evaluate(eval);
    if (*grid_cmd) return run_grid_command(grid);
    if (*synth_cmd) return run_synth(synth);
    if (*inspect_cmd) return run_inspect(inspect_path);
  } catch (const UsageError& e) {
    std::cerr << "mbsif: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mbsif: error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
