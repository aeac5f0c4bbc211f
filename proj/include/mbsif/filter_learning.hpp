#pragma once

// Learning BSIF filter banks: patch sampling, PCA whitening and symmetric
// FastICA. The learned filters are W = U * P where P whitens vectorised
// patches and U is the ICA unmixing matrix in the whitened space.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mbsif/imaging.hpp"

namespace mbsif {

inline constexpr int kMinPatchSize = 3;
inline constexpr int kMaxPatchSize = 63;
inline constexpr int kMaxBits = 16;
inline constexpr std::size_t kDefaultPatchCount = 50'000;

/// Vectorised, DC-removed patches on the [0, 1] intensity scale, one per row.
/// Patch pixel (u, v), u the column and v the row inside the patch, is stored
/// at column v * l + u.
struct PatchMatrix {
  int patch_size = 0;
  Eigen::MatrixXd data;
  /// Indices of input images smaller than the patch size.
  std::vector<std::size_t> skipped_images;

  Eigen::Index count() const { return data.rows(); }
};

/// Draws `count` patches uniformly over (image, position). Requires odd l in
/// [3, 63] and count >= 10 * l^2.
PatchMatrix sample_patches(std::span<const GrayImage> images, int patch_size, std::size_t count,
                           std::uint64_t seed);

/// Projects centred samples onto the leading principal directions, scaled to
/// unit variance. Covariances throughout use the 1/m normalisation.
struct WhiteningTransform {
  Eigen::VectorXd mean;
  /// n x d, row k = k-th principal direction / sqrt(eigenvalue k).
  Eigen::MatrixXd projection;
  /// Covariance eigenvalues of the kept components, descending.
  Eigen::VectorXd variances;

  /// Whitens each row of `samples`.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& samples) const;
};

/// Requires 1 <= components <= d and more samples than dimensions.
WhiteningTransform fit_whitening(const Eigen::MatrixXd& samples, int components);
/// DC-removed patches span at most l^2 - 1 dimensions, so components <= l^2 - 1.
WhiteningTransform fit_whitening(const PatchMatrix& patches, int components);

/// Covariance of the rows of `samples` (1/m normalisation, mean removed).
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& samples);

struct IcaOptions {
  double tolerance = 1e-6;
  int max_iterations = 1000;
};

struct IcaResult {
  /// n x n with orthonormal rows; sources = whitened * unmixing^T.
  Eigen::MatrixXd unmixing;
  int iterations = 0;
  bool converged = false;
  double last_change = 0.0;
};

/// Symmetric FastICA with the tanh (log-cosh) contrast. Input rows must have
/// identity covariance within 1e-3.
IcaResult fast_ica(const Eigen::MatrixXd& whitened, std::uint64_t seed, const IcaOptions& options = {});

/// Replaces W by (W W^T)^{-1/2} W.
Eigen::MatrixXd symmetric_decorrelation(const Eigen::MatrixXd& w);

enum class CorpusKind : std::uint32_t { natural = 0, eye = 1, custom = 2 };

std::string to_string(CorpusKind kind);
CorpusKind parse_corpus_kind(const std::string& text);

class FilterBank {
 public:
  FilterBank() = default;

  /// Validates l (odd, 3..63), n (1..16, n <= l^2 - 1) and finiteness.
  FilterBank(int size, Eigen::MatrixXd weights, CorpusKind source = CorpusKind::custom,
             std::string description = {}, std::uint64_t seed = 0);

  int size() const { return size_; }
  int bits() const { return static_cast<int>(weights_.rows()); }
  const Eigen::MatrixXd& weights() const { return weights_; }
  CorpusKind source() const { return source_; }
  const std::string& description() const { return description_; }
  std::uint64_t seed() const { return seed_; }

  /// Tap (u = column, v = row) of filter i.
  double tap(int filter, int u, int v) const { return weights_(filter, v * size_ + u); }

  friend bool operator==(const FilterBank& a, const FilterBank& b) {
    return a.size_ == b.size_ && a.source_ == b.source_ && a.description_ == b.description_ &&
           a.seed_ == b.seed_ && a.weights_.rows() == b.weights_.rows() && a.weights_ == b.weights_;
  }

 private:
  int size_ = 0;
  Eigen::MatrixXd weights_;
  CorpusKind source_ = CorpusKind::custom;
  std::string description_;
  std::uint64_t seed_ = 0;
};

struct LearningOptions {
  std::size_t patch_count = kDefaultPatchCount;
  CorpusKind source = CorpusKind::custom;
  std::string description;
  IcaOptions ica;
};

struct LearningReport {
  std::vector<std::size_t> skipped_images;
  IcaResult ica;
};

FilterBank learn_filterbank(std::span<const GrayImage> images, int size, int bits, std::uint64_t seed,
                            const LearningOptions& options = {}, LearningReport* report = nullptr);

/// "MBSIFB01" container, little-endian.
std::string serialize_filterbank(const FilterBank& bank);
FilterBank deserialize_filterbank(std::string_view bytes, const std::string& context = "filter bank");

void save_filterbank(const FilterBank& bank, const std::filesystem::path& path);
FilterBank load_filterbank(const std::filesystem::path& path);

}  // namespace mbsif
