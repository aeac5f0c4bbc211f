#pragma once

// Decision-stump boosting (AdaBoost.M1, LogitBoost) and a Gini random forest.
// Labels are +1 for male and -1 for female throughout.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mbsif/iris.hpp"

namespace mbsif {

inline constexpr int kMaleLabel = +1;
inline constexpr int kFemaleLabel = -1;

int label_of(Gender gender);
Gender gender_of(int label);

struct LabeledDataset {
  Eigen::MatrixXd features;  // m x d
  std::vector<int> labels;
  std::vector<std::string> subject_ids;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dims() const { return features.cols(); }

  /// Shapes agree, labels are +-1, features finite and, when requested, both
  /// classes are present. Throws ValidationError.
  void validate(bool require_both_classes = true) const;
};

/// Predicts `polarity` when x > threshold, otherwise -polarity.
struct Stump {
  int feature = 0;
  double threshold = 0.0;
  int polarity = 1;

  int predict(double x) const { return x > threshold ? polarity : -polarity; }
  friend bool operator==(const Stump&, const Stump&) = default;
};

/// Contribution offset + weight * stump(x).
struct WeightedStump {
  Stump stump;
  double weight = 0.0;
  double offset = 0.0;
  friend bool operator==(const WeightedStump&, const WeightedStump&) = default;
};

enum class BoostKind : std::uint32_t { adaboost_m1 = 1, logitboost = 2 };

struct BoostModel {
  BoostKind kind = BoostKind::adaboost_m1;
  int dims = 0;
  int rounds = 0;  // requested rounds; stumps may be fewer after early stopping
  std::vector<WeightedStump> stumps;

  double score(std::span<const double> x) const;
  friend bool operator==(const BoostModel&, const BoostModel&) = default;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;   // x <= threshold
  int right = -1;  // x > threshold
  std::uint32_t male_votes = 0;
  std::uint32_t female_votes = 0;

  bool leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  /// Leaf majority; ties go to male.
  int predict(std::span<const double> x) const;
  int depth() const;
  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

struct ForestParams {
  int trees = 500;
  int features_per_split = 0;  // 0 -> floor(sqrt(d)), at least 1
  int max_depth = 0;           // 0 -> unlimited
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct ForestModel {
  int dims = 0;
  int features_per_split = 0;
  int max_depth = 0;
  std::uint64_t seed = 0;
  double oob_accuracy = 0.0;  // NaN when no sample was ever out of bag
  std::vector<DecisionTree> trees;

  /// Fraction of trees voting male.
  double male_fraction(std::span<const double> x) const;
  friend bool operator==(const ForestModel& a, const ForestModel& b) {
    return a.dims == b.dims && a.features_per_split == b.features_per_split && a.max_depth == b.max_depth &&
           a.seed == b.seed && a.trees == b.trees;
  }
};

using Model = std::variant<BoostModel, ForestModel>;

struct Prediction {
  Gender label = Gender::unknown;
  /// Signed margin for boosting, male vote fraction for forests.
  double score = 0.0;
};

/// Gini impurity 1 - sum_k p_k^2 of a two-class node.
double gini_impurity(double male, double female);

/// Weighted-error-minimising stump over every feature and every midpoint
/// between consecutive distinct values. Ties break on (error, feature,
/// threshold), then polarity +1. Throws if no feature has two distinct values.
struct StumpFit {
  Stump stump;
  double error = 0.0;
};
StumpFit best_stump(const LabeledDataset& data, std::span<const double> weights);

BoostModel fit_adaboost(const LabeledDataset& data, int rounds);
BoostModel fit_logitboost(const LabeledDataset& data, int rounds);
ForestModel fit_forest(const LabeledDataset& data, const ForestParams& params = {});

/// sum_i log(1 + exp(-2 y_i F(x_i))), the loss LogitBoost descends.
double logistic_loss(const BoostModel& model, const LabeledDataset& data);

Prediction predict(const BoostModel& model, std::span<const double> x);
Prediction predict(const ForestModel& model, std::span<const double> x);
Prediction predict(const Model& model, std::span<const double> x);

enum class ClassifierKind { adaboost, logitboost, forest };

std::string to_string(ClassifierKind kind);
ClassifierKind parse_classifier_kind(const std::string& text);

struct ClassifierConfig {
  ClassifierKind kind = ClassifierKind::adaboost;
  int rounds = 100;
  ForestParams forest;

  /// Stable identifier used in result keys, e.g. "adaboost-T100".
  std::string key() const;
};

Model train_model(const ClassifierConfig& config, const LabeledDataset& data);

/// Fit/predict interface the experiment bench drives.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual void fit(const LabeledDataset& data) = 0;
  virtual Prediction predict(std::span<const double> x) const = 0;
  virtual std::string name() const = 0;
};

std::unique_ptr<Classifier> make_classifier(const ClassifierConfig& config);

/// "MBSIFM01" container, little-endian.
std::string serialize_model(const Model& model);
Model deserialize_model(std::string_view bytes, const std::string& context = "model");
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace mbsif
