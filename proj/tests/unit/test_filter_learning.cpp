#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mbsif/errors.hpp"
#include "mbsif/filter_learning.hpp"
#include "mbsif/rng.hpp"
#include "mbsif/synthetic.hpp"
#include "oracles.hpp"

using namespace mbsif;
using oracle::correlation;
using oracle::loop_covariance;
using oracle::max_identity_deviation;
using oracle::max_orthonormal_deviation;

TEST_CASE("sample_patches") {
  const auto images = synthetic_natural_images(3, 5);
  SUBCASE("shape, DC removal and determinism") {
    const PatchMatrix a = sample_patches(images, 7, 1000, 11);
    CHECK(a.patch_size == 7);
    CHECK(a.data.rows() == 1000);
    CHECK(a.data.cols() == 49);
    CHECK(a.data.rowwise().mean().cwiseAbs().maxCoeff() < 1e-9);
    const PatchMatrix b = sample_patches(images, 7, 1000, 11);
    CHECK(a.data == b.data);
    const PatchMatrix c = sample_patches(images, 7, 1000, 12);
    CHECK(a.data != c.data);
  }
  SUBCASE("constant images give zero rows") {
    const std::vector<GrayImage> flat = {GrayImage(20, 20, 77), GrayImage(30, 12, 200)};
    const PatchMatrix p = sample_patches(flat, 5, 250, 1);
    CHECK(p.data.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("small images are skipped, none usable is an error") {
    const std::vector<GrayImage> mixed = {GrayImage(4, 4), images[0]};
    const PatchMatrix p = sample_patches(mixed, 5, 250, 1);
    CHECK(p.skipped_images == std::vector<std::size_t>{0});
    const std::vector<GrayImage> tiny = {GrayImage(4, 4), GrayImage(6, 3)};
    CHECK_THROWS_AS(sample_patches(tiny, 5, 250, 1), ValidationError);
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(sample_patches(images, 6, 1000, 1), ValidationError);
    CHECK_THROWS_AS(sample_patches(images, 7, 489, 1), ValidationError);
    CHECK_NOTHROW(sample_patches(images, 7, 490, 1));
  }
  SUBCASE("thirteen images, l=11, m=50000") {
    const auto thirteen = synthetic_natural_images(13, 2);
    const PatchMatrix p = sample_patches(thirteen, 11, 50000, 3);
    CHECK(p.data.rows() == 50000);
    CHECK(p.data.cols() == 121);
  }
}

TEST_CASE("whitening a 2D Gaussian with covariance diag(4, 1)") {
  Rng rng(2024);
  Eigen::MatrixXd x(100000, 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x(i, 0) = 3.0 + 2.0 * rng.normal();
    x(i, 1) = -1.0 + rng.normal();
  }
  const WhiteningTransform t = fit_whitening(x, 2);
  CHECK(max_identity_deviation(loop_covariance(t.apply(x))) < 1e-6);
  CHECK(t.variances(0) > t.variances(1));
  CHECK(t.variances(0) == doctest::Approx(4.0).epsilon(0.03));
  CHECK(t.variances(1) == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("whitening isotropic data gives an orthonormal projection up to scale") {
  Rng rng(7);
  Eigen::MatrixXd x(50000, 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
  }
  const WhiteningTransform t = fit_whitening(x, 3);
  Eigen::MatrixXd p = t.projection;
  for (Eigen::Index k = 0; k < p.rows(); ++k) p.row(k) /= p.row(k).norm();
  CHECK(max_orthonormal_deviation(p) < 1e-9);
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(t.projection.row(k).norm() == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("whitening rank and shape errors") {
  Rng rng(1);
  Eigen::MatrixXd x(500, 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double a = rng.normal();
    x(i, 0) = a;
    x(i, 1) = 2.0 * a;
    x(i, 2) = 5.0;
  }
  CHECK_THROWS_WITH_AS(fit_whitening(x, 2), doctest::Contains("rank 1"), NumericError);
  CHECK_THROWS_AS(fit_whitening(x, 4), ValidationError);
  PatchMatrix patches{3, Eigen::MatrixXd::Random(100, 9), {}};
  CHECK_THROWS_AS(fit_whitening(patches, 9), ValidationError);
  CHECK_THROWS_AS(fit_whitening(Eigen::MatrixXd::Random(3, 3), 2), ValidationError);
}

TEST_CASE("FastICA recovers two mixed uniform sources") {
  Rng rng(99);
  const Eigen::Index m = 20000;
  Eigen::MatrixXd s(m, 2);
  for (Eigen::Index i = 0; i < m; ++i) {
    s(i, 0) = rng.uniform(-1.0, 1.0);
    s(i, 1) = rng.uniform(-1.0, 1.0);
  }
  Eigen::Matrix2d mixing;
  mixing << 1.0, 0.6, 0.4, 1.0;
  const Eigen::MatrixXd x = s * mixing.transpose();
  const WhiteningTransform t = fit_whitening(x, 2);
  const Eigen::MatrixXd z = t.apply(x);
  const IcaResult r = fast_ica(z, 5);
  CHECK(r.converged);
  CHECK(max_orthonormal_deviation(r.unmixing) < 1e-6);
  const Eigen::MatrixXd y = z * r.unmixing.transpose();
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double best = std::max(std::abs(correlation(y.col(k), s.col(0))), std::abs(correlation(y.col(k), s.col(1))));
    CHECK(best > 0.99);
  }
  const IcaResult again = fast_ica(z, 5);
  CHECK(again.unmixing == r.unmixing);
}

TEST_CASE("FastICA on already independent sources preserves them") {
  Rng rng(13);
  Eigen::MatrixXd s(20000, 3);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    s(i, 0) = rng.uniform(-1.0, 1.0);
    s(i, 1) = std::pow(rng.uniform(-1.0, 1.0), 3);
    s(i, 2) = rng.uniform01() < 0.5 ? -1.0 : 1.0;
  }
  const Eigen::MatrixXd z = fit_whitening(s, 3).apply(s);
  const IcaResult r = fast_ica(z, 1);
  CHECK(max_orthonormal_deviation(r.unmixing) < 1e-6);
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(r.unmixing.row(k).cwiseAbs().maxCoeff() > 0.99);
}

TEST_CASE("FastICA rejects non-white input") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(1000, 2) * 5.0;
  CHECK_THROWS_AS(fast_ica(x, 1), ValidationError);
}

TEST_CASE("symmetric_decorrelation returns orthonormal rows") {
  Rng rng(8);
  Eigen::MatrixXd w(5, 5);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  CHECK(max_orthonormal_deviation(symmetric_decorrelation(w)) < 1e-10);
}

TEST_CASE("learn_filterbank") {
  const auto natural = synthetic_natural_images(13, 21);
  const auto eyes = synthetic_eye_images(13, 21);
  LearningOptions options;
  options.patch_count = 20000;
  LearningReport report;
  const FilterBank a = learn_filterbank(natural, 7, 8, 42, options, &report);
  CHECK(a.size() == 7);
  CHECK(a.bits() == 8);
  CHECK(a.weights().cols() == 49);
  CHECK(a.seed() == 42);
  CHECK(report.ica.converged);

  SUBCASE("deterministic to the byte") {
    CHECK(serialize_filterbank(learn_filterbank(natural, 7, 8, 42, options)) == serialize_filterbank(a));
  }
  SUBCASE("eye corpus differs from natural corpus") {
    const FilterBank e = learn_filterbank(eyes, 7, 8, 42, options);
    CHECK((e.weights() - a.weights()).cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("responses on held-out patches are nearly uncorrelated") {
    const PatchMatrix held_out = sample_patches(natural, 7, 20000, 4242);
    const Eigen::MatrixXd responses = held_out.data * a.weights().transpose();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < responses.cols(); ++i) {
      for (Eigen::Index j = i + 1; j < responses.cols(); ++j) {
        worst = std::max(worst, std::abs(correlation(responses.col(i), responses.col(j))));
      }
    }
    CHECK(worst < 0.15);
  }
  SUBCASE("whitened training patches have identity covariance") {
    const PatchMatrix patches = sample_patches(natural, 7, 20000, 42);
    const WhiteningTransform t = fit_whitening(patches, 8);
    CHECK(max_identity_deviation(loop_covariance(t.apply(patches.data))) < 1e-6);
  }
  SUBCASE("shape 8 x 121 at l=11") {
    LearningOptions big = options;
    big.patch_count = 1210;
    CHECK(learn_filterbank(natural, 11, 8, 1, big).weights().cols() == 121);
  }
}

TEST_CASE("FilterBank validation") {
  CHECK_THROWS_AS(FilterBank(12, Eigen::MatrixXd::Ones(2, 144)), ValidationError);
  CHECK_THROWS_AS(FilterBank(1, Eigen::MatrixXd::Ones(1, 1)), ValidationError);
  CHECK_THROWS_AS(FilterBank(3, Eigen::MatrixXd::Ones(9, 9)), ValidationError);
  CHECK_THROWS_AS(FilterBank(5, Eigen::MatrixXd::Ones(17, 25)), ValidationError);
  CHECK_THROWS_AS(FilterBank(5, Eigen::MatrixXd::Ones(2, 24)), ValidationError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(2, 9);
  bad(1, 4) = std::nan("");
  CHECK_THROWS_AS(FilterBank(3, bad), ValidationError);
  CHECK_NOTHROW(FilterBank(3, Eigen::MatrixXd::Ones(8, 9)));
}

TEST_CASE("filter bank persistence") {
  const auto dir = std::filesystem::temp_directory_path() / "mbsif_test_banks";
  std::filesystem::create_directories(dir);
  Rng rng(3);
  Eigen::MatrixXd w(6, 25);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  const FilterBank bank(5, w, CorpusKind::eye, "thirteen eyes", 77);

  const auto path = dir / "bank.bsif";
  save_filterbank(bank, path);
  CHECK(load_filterbank(path) == bank);

  const std::string bytes = serialize_filterbank(bank);
  SUBCASE("truncated") {
    CHECK_THROWS_WITH_AS(deserialize_filterbank(bytes.substr(0, bytes.size() - 3)), doctest::Contains("corrupt"),
                         FormatError);
    CHECK_THROWS_AS(deserialize_filterbank(bytes.substr(0, 10)), FormatError);
  }
  SUBCASE("even size is a validation error") {
    std::string even = bytes;
    even[8] = 12;
    std::string payload = even.substr(0, 8 + 4 + 4 + 8 + 4 + 4 + 13);
    payload += std::string(6 * 144 * 8, '\0');
    CHECK_THROWS_AS(deserialize_filterbank(payload), ValidationError);
  }
  SUBCASE("version mismatch") {
    std::string other = bytes;
    other[7] = '2';
    CHECK_THROWS_AS(deserialize_filterbank(other), VersionError);
    other[0] = 'X';
    CHECK_THROWS_AS(deserialize_filterbank(other), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_filterbank(dir / "nope.bsif"), IoError); }
}
