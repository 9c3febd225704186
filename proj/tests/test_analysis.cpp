#include <doctest.h>

#include <filesystem>
#include <random>

#include "skd/analysis.hpp"

using namespace skd;
using namespace skd::analysis;
namespace fs = std::filesystem;

TEST_CASE("top-1 accuracy with lowest-index tie break") {
  Mat logits(3, 4);
  logits << 1, 0, 2, 4,   //
      3, -1, 2, 1,        //
      2, 5, 2, -3;
  // argmaxes: 1, 2, 0 (tie 2=2=2 breaks to class 0), 0
  CHECK(top1_accuracy(logits, {1, 2, 0, 0}) == doctest::Approx(1.0));
  CHECK(top1_accuracy(logits, {1, 2, 1, 0}) == doctest::Approx(0.75));
  CHECK(top1_accuracy(logits, {0, 0, 1, 1}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(top1_accuracy(logits, {0, 0, 0}), InvalidInput);
}

TEST_CASE("ranked output variance oracle") {
  Mat logits(3, 4);
  logits << 1, 0, 2, 4,  //
      3, -1, 2, 1,       //
      2, 5, 2, -3;
  const VarianceReport r = ranked_output_variance(logits);
  CHECK(r.per_position.size() == 3);
  CHECK(r.per_position[0] == doctest::Approx(3.6875).epsilon(1e-12));
  CHECK(r.per_position[1] == doctest::Approx(0.6875).epsilon(1e-12));
  CHECK(r.per_position[2] == doctest::Approx(1.25).epsilon(1e-12));
  CHECK(r.mean == doctest::Approx(1.875).epsilon(1e-12));

  // Identical columns have zero variance everywhere.
  Mat constant(3, 5);
  for (int j = 0; j < 5; ++j) constant.col(j) << 0.4, -1.0, 2.2;
  CHECK(ranked_output_variance(constant).mean == doctest::Approx(0.0));

  // Column-wise permutations do not change the report.
  Mat shuffled = logits;
  shuffled.col(1).reverseInPlace();
  CHECK(ranked_output_variance(shuffled).mean == doctest::Approx(r.mean).epsilon(1e-12));

  const VarianceReport rp = ranked_output_variance_probs(logits);
  CHECK(rp.mean < r.mean);  // probabilities live on a tighter scale
  CHECK(rp.mean > 0.0);
}

TEST_CASE("pearson correlation") {
  CHECK(pearson({1, 2, 3, 4, 5}, {2, 1, 4, 3, 7}) ==
        doctest::Approx(0.824163383692134).epsilon(1e-12));
  CHECK(pearson({1, 2, 3}, {10, 20, 30}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), InvalidInput);
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), InvalidInput);
}

TEST_CASE("metrics log csv round trip") {
  MetricsLog log;
  for (int e = 0; e < 3; ++e) {
    MetricsRow train{e, "train", 0.5 + 0.01 * e, 1.7 - 0.3 * e, 0.123456789012345 + e,
                     0.0321, 0.1};
    MetricsRow test{e, "test", 0.4 + 0.02 * e, 1.9 - 0.2 * e, 2.0 + e, 0.0, 0.1};
    log.append(train);
    log.append(test);
  }
  const auto path = (fs::temp_directory_path() / "skd-metrics-roundtrip.csv").string();
  log.to_csv(path);
  const MetricsLog back = MetricsLog::from_csv(path);
  REQUIRE(back.rows.size() == log.rows.size());
  for (size_t i = 0; i < log.rows.size(); ++i) {
    CHECK(back.rows[i].epoch == log.rows[i].epoch);
    CHECK(back.rows[i].split == log.rows[i].split);
    CHECK(back.rows[i].top1_accuracy == log.rows[i].top1_accuracy);
    CHECK(back.rows[i].mean_loss == log.rows[i].mean_loss);
    CHECK(back.rows[i].ranked_output_variance == log.rows[i].ranked_output_variance);
    CHECK(back.rows[i].seconds_per_iteration == log.rows[i].seconds_per_iteration);
    CHECK(back.rows[i].learning_rate == log.rows[i].learning_rate);
  }
  const auto series = back.series("test", &MetricsRow::top1_accuracy);
  REQUIRE(series.size() == 3);
  CHECK(series[2] == doctest::Approx(0.44));
  CHECK_THROWS_AS(MetricsLog::from_csv("/no/such/file.csv"), IoError);
}

TEST_CASE("logit export import round trip") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist(0.0, 3.0);
  Mat logits(10, 25);
  std::vector<int> labels;
  for (int j = 0; j < 25; ++j) {
    labels.push_back(j % 10);
    for (int i = 0; i < 10; ++i) logits(i, j) = dist(rng);
  }
  const auto path = (fs::temp_directory_path() / "skd-logits-roundtrip.txt").string();
  export_logits(logits, labels, path);
  std::vector<int> labels_back;
  const Mat back = import_logits(path, &labels_back);
  CHECK(labels_back == labels);
  CHECK(back == logits);  // 17 significant digits survive the text round trip
}
