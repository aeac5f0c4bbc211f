#include "mbsif/filter_learning.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <sstream>

#include "binio.hpp"
#include "mbsif/errors.hpp"
#include "mbsif/rng.hpp"

namespace mbsif {

namespace {

constexpr char kBankMagic[] = "MBSIFB01";
constexpr std::size_t kMagicLength = 8;
constexpr std::uint32_t kMaxDescriptionLength = 1u << 20;

void check_patch_size(int l) {
  if (l % 2 == 0 || l < kMinPatchSize || l > kMaxPatchSize) {
    throw ValidationError("filter size must be odd and within [3, 63], got " + std::to_string(l));
  }
}

// Flip each direction so its largest-magnitude component is positive.
void canonical_signs(Eigen::MatrixXd& columns) {
  for (Eigen::Index k = 0; k < columns.cols(); ++k) {
    Eigen::Index arg = 0;
    columns.col(k).cwiseAbs().maxCoeff(&arg);
    if (columns(arg, k) < 0.0) columns.col(k) *= -1.0;
  }
}

}  // namespace

PatchMatrix sample_patches(std::span<const GrayImage> images, int patch_size, std::size_t count,
                           std::uint64_t seed) {
  check_patch_size(patch_size);
  const auto d = static_cast<std::size_t>(patch_size) * static_cast<std::size_t>(patch_size);
  if (count < 10 * d) {
    throw ValidationError("patch count " + std::to_string(count) + " is below the minimum 10*l^2 = " +
                          std::to_string(10 * d));
  }

  PatchMatrix out;
  out.patch_size = patch_size;
  std::vector<const GrayImage*> usable;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].width() >= patch_size && images[i].height() >= patch_size) {
      usable.push_back(&images[i]);
    } else {
      out.skipped_images.push_back(i);
    }
  }
  if (usable.empty()) throw ValidationError("no training image is at least " + std::to_string(patch_size) + " pixels");

  Rng rng(seed);
  out.data.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(d));
  for (std::size_t p = 0; p < count; ++p) {
    const GrayImage& image = *usable[rng.uniform_index(usable.size())];
    const int x0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(image.width() - patch_size + 1)));
    const int y0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(image.height() - patch_size + 1)));
    auto row = out.data.row(static_cast<Eigen::Index>(p));
    for (int v = 0; v < patch_size; ++v) {
      for (int u = 0; u < patch_size; ++u) row(v * patch_size + u) = image.at(x0 + u, y0 + v);
    }
    row.array() -= row.mean();
    row /= 255.0;
  }
  return out;
}

Eigen::MatrixXd WhiteningTransform::apply(const Eigen::MatrixXd& samples) const {
  return (samples.rowwise() - mean.transpose()) * projection.transpose();
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& samples) {
  const Eigen::MatrixXd centered = samples.rowwise() - samples.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(samples.rows());
}

WhiteningTransform fit_whitening(const Eigen::MatrixXd& samples, int components) {
  const Eigen::Index d = samples.cols();
  const Eigen::Index m = samples.rows();
  if (components < 1 || components > d) {
    throw ValidationError("component count " + std::to_string(components) + " must be within [1, " +
                          std::to_string(d) + "]");
  }
  if (m <= d) {
    throw ValidationError("whitening needs more samples (" + std::to_string(m) + ") than dimensions (" +
                          std::to_string(d) + ")");
  }

  WhiteningTransform out;
  out.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - out.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& singular = svd.singularValues();

  Eigen::Index rank = 0;
  const double floor = 1e-12 * singular(0);
  while (rank < singular.size() && singular(rank) > floor) ++rank;
  if (rank < components) {
    throw NumericError("data rank " + std::to_string(rank) + " is below the requested " +
                       std::to_string(components) + " components");
  }

  Eigen::MatrixXd directions = svd.matrixV().leftCols(components);
  canonical_signs(directions);
  out.variances = singular.head(components).array().square() / static_cast<double>(m);
  out.projection = (directions * out.variances.cwiseSqrt().cwiseInverse().asDiagonal()).transpose();
  return out;
}

WhiteningTransform fit_whitening(const PatchMatrix& patches, int components) {
  const int limit = patches.patch_size * patches.patch_size - 1;
  if (components > limit) {
    throw ValidationError("component count " + std::to_string(components) + " exceeds l^2 - 1 = " +
                          std::to_string(limit) + " for DC-removed patches");
  }
  return fit_whitening(patches.data, components);
}

Eigen::MatrixXd symmetric_decorrelation(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w * w.transpose());
  const Eigen::VectorXd inv_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().cwiseInverse();
  return eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose() * w;
}

IcaResult fast_ica(const Eigen::MatrixXd& whitened, std::uint64_t seed, const IcaOptions& options) {
  const Eigen::Index m = whitened.rows();
  const Eigen::Index n = whitened.cols();
  if (n < 1 || m < 2) throw ValidationError("FastICA needs at least one component and two samples");
  const Eigen::MatrixXd covariance = sample_covariance(whitened);
  const double deviation = (covariance - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
  if (!(deviation <= 1e-3)) {
    std::ostringstream msg;
    msg << "FastICA input is not white (max covariance deviation " << deviation << ")";
    throw ValidationError(msg.str());
  }

  Rng rng(seed);
  Eigen::MatrixXd w(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) w(i, j) = rng.normal();
  }
  w = symmetric_decorrelation(w);

  IcaResult result;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (int iteration = 1; iteration <= options.max_iterations; ++iteration) {
    const Eigen::MatrixXd g = (whitened * w.transpose()).array().tanh().matrix();
    const Eigen::VectorXd g_prime_mean = (1.0 - g.array().square()).colwise().sum().transpose() * inv_m;
    Eigen::MatrixXd next = (g.transpose() * whitened) * inv_m - g_prime_mean.asDiagonal() * w;
    next = symmetric_decorrelation(next);
    if (!next.allFinite()) {
      throw NumericError("FastICA produced a non-finite value at iteration " + std::to_string(iteration));
    }
    const double change = (1.0 - (next * w.transpose()).diagonal().array().abs()).abs().maxCoeff();
    w = std::move(next);
    result.iterations = iteration;
    result.last_change = change;
    if (change < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.unmixing = std::move(w);
  return result;
}

std::string to_string(CorpusKind kind) {
  switch (kind) {
    case CorpusKind::natural:
      return "natural";
    case CorpusKind::eye:
      return "eye";
    case CorpusKind::custom:
      break;
  }
  return "custom";
}

CorpusKind parse_corpus_kind(const std::string& text) {
  if (text == "natural") return CorpusKind::natural;
  if (text == "eye") return CorpusKind::eye;
  if (text == "custom") return CorpusKind::custom;
  throw ValidationError("unknown corpus kind '" + text + "' (expected natural, eye or custom)");
}

FilterBank::FilterBank(int size, Eigen::MatrixXd weights, CorpusKind source, std::string description,
                       std::uint64_t seed)
    : size_(size), weights_(std::move(weights)), source_(source), description_(std::move(description)), seed_(seed) {
  check_patch_size(size);
  const Eigen::Index n = weights_.rows();
  if (n < 1 || n > kMaxBits || n > static_cast<Eigen::Index>(size) * size - 1) {
    throw ValidationError("bit count " + std::to_string(n) + " must be within [1, min(16, l^2-1)] for l = " +
                          std::to_string(size));
  }
  if (weights_.cols() != static_cast<Eigen::Index>(size) * size) {
    throw ValidationError("filter rows must hold l^2 = " + std::to_string(size * size) + " weights");
  }
  if (!weights_.allFinite()) throw ValidationError("filter weights must be finite");
  if (source_ != CorpusKind::natural && source_ != CorpusKind::eye && source_ != CorpusKind::custom) {
    throw ValidationError("unknown filter-bank source tag");
  }
}

FilterBank learn_filterbank(std::span<const GrayImage> images, int size, int bits, std::uint64_t seed,
                            const LearningOptions& options, LearningReport* report) {
  check_patch_size(size);
  if (bits < 1 || bits > kMaxBits || bits > size * size - 1) {
    throw ValidationError("bit count " + std::to_string(bits) + " must be within [1, min(16, l^2-1)]");
  }
  PatchMatrix patches = sample_patches(images, size, options.patch_count, seed);
  const WhiteningTransform whitening = fit_whitening(patches, bits);
  IcaResult ica = fast_ica(whitening.apply(patches.data), derive_seed(seed, 1), options.ica);
  Eigen::MatrixXd weights = ica.unmixing * whitening.projection;
  if (report) {
    report->skipped_images = std::move(patches.skipped_images);
    report->ica = std::move(ica);
  }
  return FilterBank(size, std::move(weights), options.source, options.description, seed);
}

std::string serialize_filterbank(const FilterBank& bank) {
  std::string out(kBankMagic, kMagicLength);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.size()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.bits()));
  binio::put<std::uint64_t>(out, bank.seed());
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.source()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.description().size()));
  out += bank.description();
  for (Eigen::Index i = 0; i < bank.weights().rows(); ++i) {
    for (Eigen::Index j = 0; j < bank.weights().cols(); ++j) binio::put<double>(out, bank.weights()(i, j));
  }
  return out;
}

FilterBank deserialize_filterbank(std::string_view bytes, const std::string& context) {
  if (bytes.size() < kMagicLength) throw FormatError(context + ": truncated or corrupt file");
  const std::string_view magic = bytes.substr(0, kMagicLength);
  if (magic != std::string_view(kBankMagic, kMagicLength)) {
    if (magic.substr(0, 6) == "MBSIFB") {
      throw VersionError(context + ": unsupported filter-bank version '" + std::string(magic.substr(6)) + "'");
    }
    throw FormatError(context + ": not a filter-bank file");
  }
  binio::Reader in(bytes.substr(kMagicLength), context);
  const auto size = in.get<std::uint32_t>();
  const auto bits = in.get<std::uint32_t>();
  const auto seed = in.get<std::uint64_t>();
  const auto source = in.get<std::uint32_t>();
  const auto description_length = in.get<std::uint32_t>();
  if (description_length > kMaxDescriptionLength) throw FormatError(context + ": truncated or corrupt file");
  std::string description = in.get_bytes(description_length);
  if (size > static_cast<std::uint32_t>(kMaxPatchSize) || bits > static_cast<std::uint32_t>(kMaxBits)) {
    throw ValidationError(context + ": filter size " + std::to_string(size) + " / bits " + std::to_string(bits) +
                          " out of range");
  }
  const auto taps = static_cast<std::size_t>(size) * size;
  if (in.remaining() != static_cast<std::size_t>(bits) * taps * sizeof(double)) {
    throw FormatError(context + ": truncated or corrupt file (weight payload size mismatch)");
  }
  Eigen::MatrixXd weights(bits, static_cast<Eigen::Index>(taps));
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < weights.cols(); ++j) weights(i, j) = in.get<double>();
  }
  if (source > static_cast<std::uint32_t>(CorpusKind::custom)) throw ValidationError(context + ": unknown source tag");
  try {
    return FilterBank(static_cast<int>(size), std::move(weights), static_cast<CorpusKind>(source),
                      std::move(description), seed);
  } catch (const ValidationError& e) {
    throw ValidationError(context + ": " + e.what());
  }
}

void save_filterbank(const FilterBank& bank, const std::filesystem::path& path) {
  binio::write_file(path, serialize_filterbank(bank));
}

FilterBank load_filterbank(const std::filesystem::path& path) {
  return deserialize_filterbank(binio::read_file(path), path.string());
}

}  // namespace mbsif
