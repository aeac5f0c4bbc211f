#include "mbsif/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <optional>

#include "binio.hpp"
#include "mbsif/errors.hpp"
#include "mbsif/rng.hpp"

namespace mbsif {

int label_of(Gender gender) {
  if (gender == Gender::male) return kMaleLabel;
  if (gender == Gender::female) return kFemaleLabel;
  throw ValidationError("sample has no gender label");
}

Gender gender_of(int label) { return label > 0 ? Gender::male : Gender::female; }

void LabeledDataset::validate(bool require_both_classes) const {
  if (features.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw ValidationError("feature rows and label count differ");
  }
  if (!subject_ids.empty() && subject_ids.size() != labels.size()) {
    throw ValidationError("subject id count and label count differ");
  }
  if (features.rows() == 0 || features.cols() == 0) throw ValidationError("dataset is empty");
  if (!features.allFinite()) throw ValidationError("dataset contains non-finite features");
  bool male = false;
  bool female = false;
  for (int y : labels) {
    if (y == kMaleLabel) {
      male = true;
    } else if (y == kFemaleLabel) {
      female = true;
    } else {
      throw ValidationError("labels must be +1 (male) or -1 (female)");
    }
  }
  if (require_both_classes && !(male && female)) throw ValidationError("training data must contain both classes");
}

double BoostModel::score(std::span<const double> x) const {
  double total = 0.0;
  for (const auto& s : stumps) total += s.offset + s.weight * s.stump.predict(x[static_cast<std::size_t>(s.stump.feature)]);
  return total;
}

int DecisionTree::predict(std::span<const double> x) const {
  int node = 0;
  while (!nodes[static_cast<std::size_t>(node)].leaf()) {
    const TreeNode& n = nodes[static_cast<std::size_t>(node)];
    node = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  const TreeNode& leaf = nodes[static_cast<std::size_t>(node)];
  return leaf.male_votes >= leaf.female_votes ? kMaleLabel : kFemaleLabel;
}

int DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  int deepest = 0;
  while (!stack.empty()) {
    auto [node, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    const TreeNode& n = nodes[static_cast<std::size_t>(node)];
    if (!n.leaf()) {
      stack.emplace_back(n.left, d + 1);
      stack.emplace_back(n.right, d + 1);
    }
  }
  return deepest;
}

double ForestModel::male_fraction(std::span<const double> x) const {
  int male = 0;
  for (const auto& tree : trees) male += tree.predict(x) == kMaleLabel ? 1 : 0;
  return static_cast<double>(male) / static_cast<double>(trees.size());
}

double gini_impurity(double male, double female) {
  const double total = male + female;
  if (total <= 0.0) return 0.0;
  const double p = male / total;
  const double q = female / total;
  return 1.0 - p * p - q * q;
}

namespace {

// Per-feature sample order by ascending value; ties by sample index.
class ColumnOrder {
 public:
  explicit ColumnOrder(const Eigen::MatrixXd& features) : order_(static_cast<std::size_t>(features.cols())) {
    const auto m = static_cast<std::size_t>(features.rows());
    for (Eigen::Index f = 0; f < features.cols(); ++f) {
      auto& idx = order_[static_cast<std::size_t>(f)];
      idx.resize(m);
      std::iota(idx.begin(), idx.end(), 0);
      const auto col = features.col(f);
      std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return col(a) < col(b); });
    }
  }

  const std::vector<int>& operator[](std::size_t f) const { return order_[f]; }
  std::size_t features() const { return order_.size(); }

 private:
  std::vector<std::vector<int>> order_;
};

struct Candidate {
  double criterion = std::numeric_limits<double>::infinity();
  int feature = -1;
  double threshold = 0.0;
  int polarity = 1;

  // Criteria within a relative 1e-12 tie, so summation order cannot change
  // the choice; ties go to the smaller (feature, threshold).
  bool improves_on(const Candidate& best) const {
    if (best.feature < 0) return true;
    const double tol = 1e-12 * std::max(1.0, std::abs(best.criterion));
    if (criterion < best.criterion - tol) return true;
    if (criterion > best.criterion + tol) return false;
    if (feature != best.feature) return feature < best.feature;
    return threshold < best.threshold;
  }
};

Candidate weighted_error_stump(const LabeledDataset& data, const ColumnOrder& order, std::span<const double> w) {
  const std::size_t m = data.labels.size();
  double pos_total = 0.0;
  double neg_total = 0.0;
  for (std::size_t i = 0; i < m; ++i) (data.labels[i] > 0 ? pos_total : neg_total) += w[i];

  Candidate best;
  for (std::size_t f = 0; f < order.features(); ++f) {
    const auto& idx = order[f];
    const auto col = data.features.col(static_cast<Eigen::Index>(f));
    double pos_left = 0.0;
    double neg_left = 0.0;
    for (std::size_t k = 0; k + 1 < m; ++k) {
      const int i = idx[k];
      (data.labels[static_cast<std::size_t>(i)] > 0 ? pos_left : neg_left) += w[static_cast<std::size_t>(i)];
      const double here = col(i);
      const double next = col(idx[k + 1]);
      if (!(here < next)) continue;
      const double threshold = here + (next - here) / 2.0;
      // polarity +1 predicts male right of the threshold
      const Candidate plus{pos_left + (neg_total - neg_left), static_cast<int>(f), threshold, 1};
      if (plus.improves_on(best)) best = plus;
      const Candidate minus{neg_left + (pos_total - pos_left), static_cast<int>(f), threshold, -1};
      if (minus.improves_on(best)) best = minus;
    }
  }
  return best;
}

struct RegressionStump {
  int feature = -1;
  double threshold = 0.0;
  double left = 0.0;
  double right = 0.0;
};

// Weighted least-squares stump: minimises sum w (z - f(x))^2, which is
// maximising S_l^2/W_l + S_r^2/W_r over splits.
RegressionStump least_squares_stump(const LabeledDataset& data, const ColumnOrder& order, std::span<const double> z,
                                    std::span<const double> w) {
  const std::size_t m = data.labels.size();
  double w_total = 0.0;
  double s_total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    w_total += w[i];
    s_total += w[i] * z[i];
  }
  Candidate best;
  RegressionStump out;
  for (std::size_t f = 0; f < order.features(); ++f) {
    const auto& idx = order[f];
    const auto col = data.features.col(static_cast<Eigen::Index>(f));
    double w_left = 0.0;
    double s_left = 0.0;
    for (std::size_t k = 0; k + 1 < m; ++k) {
      const auto i = static_cast<std::size_t>(idx[k]);
      w_left += w[i];
      s_left += w[i] * z[i];
      const double here = col(idx[k]);
      const double next = col(idx[k + 1]);
      if (!(here < next)) continue;
      const double w_right = w_total - w_left;
      const double s_right = s_total - s_left;
      const Candidate c{-(s_left * s_left / w_left + s_right * s_right / w_right), static_cast<int>(f),
                        here + (next - here) / 2.0, 1};
      if (c.improves_on(best)) {
        best = c;
        out = {c.feature, c.threshold, s_left / w_left, s_right / w_right};
      }
    }
  }
  return out;
}

void check_rounds(int rounds) {
  if (rounds < 1) throw ValidationError("boosting needs at least one round");
}

}  // namespace

StumpFit best_stump(const LabeledDataset& data, std::span<const double> weights) {
  data.validate(false);
  if (weights.size() != data.labels.size()) throw ValidationError("weight count does not match the dataset");
  const ColumnOrder order(data.features);
  const Candidate c = weighted_error_stump(data, order, weights);
  if (c.feature < 0) throw ValidationError("no feature takes two distinct values; cannot place a stump");
  return {Stump{c.feature, c.threshold, c.polarity}, c.criterion};
}

BoostModel fit_adaboost(const LabeledDataset& data, int rounds) {
  check_rounds(rounds);
  data.validate(true);
  const std::size_t m = data.labels.size();
  const ColumnOrder order(data.features);
  std::vector<double> w(m, 1.0 / static_cast<double>(m));

  BoostModel model{BoostKind::adaboost_m1, static_cast<int>(data.dims()), rounds, {}};
  constexpr double kErrorFloor = 1e-10;
  for (int t = 0; t < rounds; ++t) {
    const Candidate c = weighted_error_stump(data, order, w);
    if (c.feature < 0) throw ValidationError("no feature takes two distinct values; cannot place a stump");
    const double error = std::max(c.criterion, 0.0);
    if (error >= 0.5) {
      if (model.stumps.empty()) throw ValidationError("no stump beats chance on the training data");
      break;
    }
    const double alpha = 0.5 * std::log((1.0 - std::max(error, kErrorFloor)) / std::max(error, kErrorFloor));
    const Stump stump{c.feature, c.threshold, c.polarity};
    model.stumps.push_back({stump, alpha, 0.0});
    if (error <= 0.0) break;

    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const int h = stump.predict(data.features(static_cast<Eigen::Index>(i), c.feature));
      w[i] *= std::exp(-alpha * data.labels[i] * h);
      total += w[i];
    }
    for (double& wi : w) wi /= total;
  }
  return model;
}

BoostModel fit_logitboost(const LabeledDataset& data, int rounds) {
  check_rounds(rounds);
  data.validate(true);
  const std::size_t m = data.labels.size();
  const ColumnOrder order(data.features);
  constexpr double kMaxResponse = 4.0;
  constexpr double kWeightFloor = 2e-16;

  BoostModel model{BoostKind::logitboost, static_cast<int>(data.dims()), rounds, {}};
  std::vector<double> f(m, 0.0);
  std::vector<double> z(m);
  std::vector<double> w(m);
  for (int t = 0; t < rounds; ++t) {
    for (std::size_t i = 0; i < m; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-2.0 * f[i]));
      const double y01 = data.labels[i] > 0 ? 1.0 : 0.0;
      const double pq = p * (1.0 - p);
      w[i] = std::max(pq, kWeightFloor);
      z[i] = std::clamp((y01 - p) / w[i], -kMaxResponse, kMaxResponse);
    }
    const RegressionStump rs = least_squares_stump(data, order, z, w);
    if (rs.feature < 0) throw ValidationError("no feature takes two distinct values; cannot place a stump");
    // Half-step Newton update, written as offset + weight * (+-1).
    const double left = 0.5 * rs.left;
    const double right = 0.5 * rs.right;
    WeightedStump ws{Stump{rs.feature, rs.threshold, 1}, (right - left) / 2.0, (right + left) / 2.0};
    if (ws.weight < 0.0) {
      ws.stump.polarity = -1;
      ws.weight = -ws.weight;
    }
    model.stumps.push_back(ws);
    for (std::size_t i = 0; i < m; ++i) {
      const double x = data.features(static_cast<Eigen::Index>(i), rs.feature);
      f[i] += x > rs.threshold ? right : left;
    }
  }
  return model;
}

double logistic_loss(const BoostModel& model, const LabeledDataset& data) {
  double loss = 0.0;
  std::vector<double> row(static_cast<std::size_t>(data.dims()));
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dims(); ++j) row[static_cast<std::size_t>(j)] = data.features(i, j);
    const double margin = 2.0 * data.labels[static_cast<std::size_t>(i)] * model.score(row);
    loss += margin > 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
  }
  return loss;
}

namespace {

struct NodeTask {
  int node;
  int depth;
  std::vector<int> samples;
};

DecisionTree grow_tree(const LabeledDataset& data, const std::vector<int>& bootstrap, int features_per_split,
                       int max_depth, Rng& rng) {
  const auto d = static_cast<int>(data.dims());
  DecisionTree tree;
  tree.nodes.emplace_back();
  std::vector<NodeTask> stack;
  stack.push_back({0, 0, bootstrap});
  std::vector<int> permutation(static_cast<std::size_t>(d));
  std::vector<std::pair<double, int>> values;

  while (!stack.empty()) {
    NodeTask task = std::move(stack.back());
    stack.pop_back();
    std::uint32_t male = 0;
    std::uint32_t female = 0;
    for (int i : task.samples) (data.labels[static_cast<std::size_t>(i)] > 0 ? male : female) += 1;
    tree.nodes[static_cast<std::size_t>(task.node)].male_votes = male;
    tree.nodes[static_cast<std::size_t>(task.node)].female_votes = female;
    if (male == 0 || female == 0 || (max_depth > 0 && task.depth >= max_depth)) continue;

    const double n = static_cast<double>(task.samples.size());
    const double parent = gini_impurity(male, female);
    std::iota(permutation.begin(), permutation.end(), 0);
    rng.shuffle(permutation);

    Candidate best;  // criterion = weighted child impurity
    int examined = 0;
    for (int f : permutation) {
      // Keep drawing features past the quota until some feature can split.
      if (examined >= features_per_split && best.feature >= 0) break;
      ++examined;
      values.clear();
      for (int i : task.samples) values.emplace_back(data.features(i, f), i);
      std::sort(values.begin(), values.end());
      double male_left = 0.0;
      double female_left = 0.0;
      for (std::size_t k = 0; k + 1 < values.size(); ++k) {
        (data.labels[static_cast<std::size_t>(values[k].second)] > 0 ? male_left : female_left) += 1.0;
        if (!(values[k].first < values[k + 1].first)) continue;
        const double n_left = male_left + female_left;
        const double n_right = n - n_left;
        const double impurity = (n_left * gini_impurity(male_left, female_left) +
                                 n_right * gini_impurity(male - male_left, female - female_left)) /
                                n;
        const Candidate c{impurity, f, values[k].first + (values[k + 1].first - values[k].first) / 2.0, 1};
        if (c.improves_on(best)) best = c;
      }
    }
    if (best.feature < 0 || !(best.criterion <= parent)) continue;

    std::vector<int> left;
    std::vector<int> right;
    for (int i : task.samples) (data.features(i, best.feature) <= best.threshold ? left : right).push_back(i);
    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    TreeNode& node = tree.nodes[static_cast<std::size_t>(task.node)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = left_id;
    node.right = left_id + 1;
    stack.push_back({left_id + 1, task.depth + 1, std::move(right)});
    stack.push_back({left_id, task.depth + 1, std::move(left)});
  }
  return tree;
}

std::vector<int> bootstrap_sample(std::size_t m, Rng& rng) {
  std::vector<int> sample(m);
  for (auto& s : sample) s = static_cast<int>(rng.uniform_index(m));
  std::sort(sample.begin(), sample.end());
  return sample;
}

}  // namespace

ForestModel fit_forest(const LabeledDataset& data, const ForestParams& params) {
  if (params.trees < 1) throw ValidationError("a forest needs at least one tree");
  if (params.max_depth < 0) throw ValidationError("max depth must be non-negative");
  data.validate(true);
  const std::size_t m = data.labels.size();
  const int d = static_cast<int>(data.dims());
  int mtry = params.features_per_split > 0 ? params.features_per_split
                                           : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
  mtry = std::min(mtry, d);

  ForestModel model;
  model.dims = d;
  model.features_per_split = mtry;
  model.max_depth = params.max_depth;
  model.seed = params.seed;
  model.trees.resize(static_cast<std::size_t>(params.trees));
  std::vector<std::vector<int>> bags(static_cast<std::size_t>(params.trees));

  auto build = [&](int t) {
    Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(t)));
    bags[static_cast<std::size_t>(t)] = bootstrap_sample(m, rng);
    model.trees[static_cast<std::size_t>(t)] = grow_tree(data, bags[static_cast<std::size_t>(t)], mtry, params.max_depth, rng);
  };
  const int jobs = std::clamp(params.jobs, 1, params.trees);
  if (jobs == 1) {
    for (int t = 0; t < params.trees; ++t) build(t);
  } else {
    std::vector<std::future<void>> workers;
    for (int j = 0; j < jobs; ++j) {
      workers.push_back(std::async(std::launch::async, [&, j] {
        for (int t = j; t < params.trees; t += jobs) build(t);
      }));
    }
    for (auto& w : workers) w.get();
  }

  // Out-of-bag estimate.
  std::vector<int> male_votes(m, 0);
  std::vector<int> votes(m, 0);
  std::vector<char> in_bag(m);
  std::vector<double> row(static_cast<std::size_t>(d));
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    std::fill(in_bag.begin(), in_bag.end(), 0);
    for (int i : bags[t]) in_bag[static_cast<std::size_t>(i)] = 1;
    for (std::size_t i = 0; i < m; ++i) {
      if (in_bag[i]) continue;
      for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = data.features(static_cast<Eigen::Index>(i), j);
      ++votes[i];
      male_votes[i] += model.trees[t].predict(row) == kMaleLabel ? 1 : 0;
    }
  }
  int evaluated = 0;
  int correct = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (votes[i] == 0) continue;
    ++evaluated;
    const int predicted = 2 * male_votes[i] >= votes[i] ? kMaleLabel : kFemaleLabel;
    correct += predicted == data.labels[i] ? 1 : 0;
  }
  model.oob_accuracy = evaluated > 0 ? static_cast<double>(correct) / evaluated : std::numeric_limits<double>::quiet_NaN();
  return model;
}

namespace {

void check_dims(int expected, std::size_t actual) {
  if (static_cast<std::size_t>(expected) != actual) {
    throw ValidationError("feature vector has " + std::to_string(actual) + " values, model expects " +
                          std::to_string(expected));
  }
}

}  // namespace

Prediction predict(const BoostModel& model, std::span<const double> x) {
  if (model.stumps.empty()) throw ValidationError("cannot predict with an empty boosting model");
  check_dims(model.dims, x.size());
  const double s = model.score(x);
  return {s >= 0.0 ? Gender::male : Gender::female, s};
}

Prediction predict(const ForestModel& model, std::span<const double> x) {
  if (model.trees.empty()) throw ValidationError("cannot predict with an empty forest");
  check_dims(model.dims, x.size());
  const double fraction = model.male_fraction(x);
  return {fraction >= 0.5 ? Gender::male : Gender::female, fraction};
}

Prediction predict(const Model& model, std::span<const double> x) {
  return std::visit([&](const auto& m) { return predict(m, x); }, model);
}

std::string to_string(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::adaboost:
      return "adaboost";
    case ClassifierKind::logitboost:
      return "logitboost";
    case ClassifierKind::forest:
      return "forest";
  }
  return "?";
}

ClassifierKind parse_classifier_kind(const std::string& text) {
  if (text == "adaboost" || text == "adaboost_m1") return ClassifierKind::adaboost;
  if (text == "logitboost") return ClassifierKind::logitboost;
  if (text == "forest" || text == "random_forest" || text == "rf") return ClassifierKind::forest;
  throw ValidationError("unknown classifier '" + text + "' (expected adaboost, logitboost or forest)");
}

std::string ClassifierConfig::key() const {
  switch (kind) {
    case ClassifierKind::adaboost:
    case ClassifierKind::logitboost:
      return to_string(kind) + "-T" + std::to_string(rounds);
    case ClassifierKind::forest:
      return "forest-N" + std::to_string(forest.trees) + "-F" + std::to_string(forest.features_per_split) + "-D" +
             std::to_string(forest.max_depth);
  }
  return "?";
}

Model train_model(const ClassifierConfig& config, const LabeledDataset& data) {
  switch (config.kind) {
    case ClassifierKind::adaboost:
      return fit_adaboost(data, config.rounds);
    case ClassifierKind::logitboost:
      return fit_logitboost(data, config.rounds);
    case ClassifierKind::forest:
      return fit_forest(data, config.forest);
  }
  throw ValidationError("unknown classifier kind");
}

namespace {

class BuiltinClassifier final : public Classifier {
 public:
  explicit BuiltinClassifier(ClassifierConfig config) : config_(std::move(config)) {}

  void fit(const LabeledDataset& data) override { model_ = train_model(config_, data); }

  Prediction predict(std::span<const double> x) const override {
    if (!model_) throw ValidationError("classifier used before fit");
    return mbsif::predict(*model_, x);
  }

  std::string name() const override { return config_.key(); }

 private:
  ClassifierConfig config_;
  std::optional<Model> model_;
};

constexpr char kModelMagic[] = "MBSIFM01";
constexpr std::size_t kMagicLength = 8;
constexpr std::uint32_t kForestTag = 3;

}  // namespace

std::unique_ptr<Classifier> make_classifier(const ClassifierConfig& config) {
  return std::make_unique<BuiltinClassifier>(config);
}

std::string serialize_model(const Model& model) {
  std::string out(kModelMagic, kMagicLength);
  if (const auto* boost = std::get_if<BoostModel>(&model)) {
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(boost->kind));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(boost->dims));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(boost->rounds));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(boost->stumps.size()));
    for (const auto& s : boost->stumps) {
      binio::put<std::int32_t>(out, s.stump.feature);
      binio::put<double>(out, s.stump.threshold);
      binio::put<std::int32_t>(out, s.stump.polarity);
      binio::put<double>(out, s.weight);
      binio::put<double>(out, s.offset);
    }
    return out;
  }
  const auto& forest = std::get<ForestModel>(model);
  binio::put<std::uint32_t>(out, kForestTag);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(forest.dims));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(forest.features_per_split));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(forest.max_depth));
  binio::put<std::uint64_t>(out, forest.seed);
  binio::put<double>(out, forest.oob_accuracy);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(forest.trees.size()));
  for (const auto& tree : forest.trees) {
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& n : tree.nodes) {
      binio::put<std::int32_t>(out, n.feature);
      binio::put<double>(out, n.threshold);
      binio::put<std::int32_t>(out, n.left);
      binio::put<std::int32_t>(out, n.right);
      binio::put<std::uint32_t>(out, n.male_votes);
      binio::put<std::uint32_t>(out, n.female_votes);
    }
  }
  return out;
}

Model deserialize_model(std::string_view bytes, const std::string& context) {
  if (bytes.size() < kMagicLength) throw FormatError(context + ": truncated or corrupt file");
  const std::string_view magic = bytes.substr(0, kMagicLength);
  if (magic != std::string_view(kModelMagic, kMagicLength)) {
    if (magic.substr(0, 6) == "MBSIFM") {
      throw VersionError(context + ": unsupported model version '" + std::string(magic.substr(6)) + "'");
    }
    throw FormatError(context + ": not a model file");
  }
  binio::Reader in(bytes.substr(kMagicLength), context);
  const auto tag = in.get<std::uint32_t>();
  const auto dims = static_cast<int>(in.get<std::uint32_t>());
  auto check_feature = [&](int feature) {
    if (feature < 0 || feature >= dims) throw FormatError(context + ": feature index out of range");
  };

  if (tag == static_cast<std::uint32_t>(BoostKind::adaboost_m1) || tag == static_cast<std::uint32_t>(BoostKind::logitboost)) {
    BoostModel model;
    model.kind = static_cast<BoostKind>(tag);
    model.dims = dims;
    model.rounds = static_cast<int>(in.get<std::uint32_t>());
    const auto count = in.get<std::uint32_t>();
    if (in.remaining() != static_cast<std::size_t>(count) * 32) throw FormatError(context + ": truncated or corrupt file");
    for (std::uint32_t i = 0; i < count; ++i) {
      WeightedStump s;
      s.stump.feature = in.get<std::int32_t>();
      s.stump.threshold = in.get<double>();
      s.stump.polarity = in.get<std::int32_t>();
      s.weight = in.get<double>();
      s.offset = in.get<double>();
      check_feature(s.stump.feature);
      if (s.stump.polarity != 1 && s.stump.polarity != -1) throw FormatError(context + ": bad stump polarity");
      if (!std::isfinite(s.weight) || !std::isfinite(s.offset)) throw FormatError(context + ": non-finite weight");
      model.stumps.push_back(s);
    }
    return model;
  }
  if (tag != kForestTag) throw FormatError(context + ": unknown model kind tag " + std::to_string(tag));

  ForestModel model;
  model.dims = dims;
  model.features_per_split = static_cast<int>(in.get<std::uint32_t>());
  model.max_depth = static_cast<int>(in.get<std::uint32_t>());
  model.seed = in.get<std::uint64_t>();
  model.oob_accuracy = in.get<double>();
  const auto trees = in.get<std::uint32_t>();
  for (std::uint32_t t = 0; t < trees; ++t) {
    DecisionTree tree;
    const auto count = in.get<std::uint32_t>();
    if (count == 0 || in.remaining() < static_cast<std::size_t>(count) * 28) {
      throw FormatError(context + ": truncated or corrupt file");
    }
    tree.nodes.resize(count);
    for (auto& n : tree.nodes) {
      n.feature = in.get<std::int32_t>();
      n.threshold = in.get<double>();
      n.left = in.get<std::int32_t>();
      n.right = in.get<std::int32_t>();
      n.male_votes = in.get<std::uint32_t>();
      n.female_votes = in.get<std::uint32_t>();
    }
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      const auto& n = tree.nodes[i];
      if (n.leaf()) continue;
      check_feature(n.feature);
      // Children always follow their parent, which rules out cycles.
      if (n.left <= static_cast<int>(i) || n.right <= static_cast<int>(i) || n.left >= static_cast<int>(count) ||
          n.right >= static_cast<int>(count)) {
        throw FormatError(context + ": corrupt tree structure");
      }
    }
    model.trees.push_back(std::move(tree));
  }
  if (!in.at_end()) throw FormatError(context + ": trailing bytes after model payload");
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) { binio::write_file(path, serialize_model(model)); }

Model load_model(const std::filesystem::path& path) { return deserialize_model(binio::read_file(path), path.string()); }

}  // namespace mbsif
