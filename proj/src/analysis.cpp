#include "skd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "skd/losses.hpp"

namespace skd::analysis {

double top1_accuracy(const Mat& logits, const std::vector<int>& labels) {
  if (logits.cols() == 0) throw InvalidInput("top1_accuracy: empty batch");
  if (static_cast<size_t>(logits.cols()) != labels.size())
    throw InvalidInput("top1_accuracy: batch/label size mismatch");
  long hits = 0;
  for (Eigen::Index s = 0; s < logits.cols(); ++s) {
    int best = 0;
    for (Eigen::Index k = 1; k < logits.rows(); ++k)
      if (logits(k, s) > logits(best, s)) best = static_cast<int>(k);
    if (best == labels[static_cast<size_t>(s)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.cols());
}

namespace {

VarianceReport variance_of_ranked(const Mat& ranked) {
  VarianceReport rep;
  rep.per_position.resize(ranked.rows());
  for (Eigen::Index k = 0; k < ranked.rows(); ++k) {
    const double mean = ranked.row(k).mean();
    rep.per_position[k] = (ranked.row(k).array() - mean).square().mean();
  }
  rep.mean = rep.per_position.mean();
  return rep;
}

Mat rank_columns(const Mat& logits) {
  Mat ranked(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.cols(); ++s)
    ranked.col(s) = losses::rank_ascending(logits.col(s)).values;
  return ranked;
}

}  // namespace

VarianceReport ranked_output_variance(const Mat& logits) {
  if (logits.cols() < 2) throw InvalidInput("ranked_output_variance needs >= 2 samples");
  return variance_of_ranked(rank_columns(logits));
}

VarianceReport ranked_output_variance_probs(const Mat& logits) {
  if (logits.cols() < 2) throw InvalidInput("ranked_output_variance needs >= 2 samples");
  Mat probs(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.cols(); ++s)
    probs.col(s) = losses::softened_distribution(logits.col(s), losses::Temperature(1.0));
  return variance_of_ranked(rank_columns(probs));
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 3)
    throw InvalidInput("pearson needs two equal-length series of >= 3 points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw InvalidInput("pearson undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

void MetricsLog::to_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,split,top1_accuracy,mean_loss,ranked_output_variance,"
         "seconds_per_iteration,learning_rate\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.epoch << ',' << r.split << ',' << r.top1_accuracy << ',' << r.mean_loss << ','
        << r.ranked_output_variance << ',' << r.seconds_per_iteration << ',' << r.learning_rate
        << '\n';
}

MetricsLog MetricsLog::from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  MetricsLog log;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    MetricsRow r;
    std::string field;
    std::getline(ss, field, ',');
    r.epoch = std::stoi(field);
    std::getline(ss, r.split, ',');
    std::getline(ss, field, ',');
    r.top1_accuracy = std::stod(field);
    std::getline(ss, field, ',');
    r.mean_loss = std::stod(field);
    std::getline(ss, field, ',');
    r.ranked_output_variance = std::stod(field);
    std::getline(ss, field, ',');
    r.seconds_per_iteration = std::stod(field);
    std::getline(ss, field, ',');
    r.learning_rate = std::stod(field);
    log.rows.push_back(r);
  }
  return log;
}

std::vector<double> MetricsLog::series(const std::string& split,
                                       double MetricsRow::* field) const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.split == split) out.push_back(r.*field);
  return out;
}

void export_logits(const Mat& logits, const std::vector<int>& labels, const std::string& path) {
  if (static_cast<size_t>(logits.cols()) != labels.size())
    throw InvalidInput("export_logits: batch/label size mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# label";
  for (Eigen::Index k = 0; k < logits.rows(); ++k) out << " z" << k;
  out << '\n';
  out.precision(17);
  for (Eigen::Index s = 0; s < logits.cols(); ++s) {
    out << labels[static_cast<size_t>(s)];
    for (Eigen::Index k = 0; k < logits.rows(); ++k) out << ' ' << logits(k, s);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

Mat import_logits(const std::string& path, std::vector<int>* labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  std::vector<int> labs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int lab;
    ss >> lab;
    labs.push_back(lab);
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw IoError("no logit rows in " + path);
  Mat logits(static_cast<Eigen::Index>(rows[0].size()), static_cast<Eigen::Index>(rows.size()));
  for (size_t s = 0; s < rows.size(); ++s)
    for (size_t k = 0; k < rows[s].size(); ++k)
      logits(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s)) = rows[s][k];
  if (labels) *labels = std::move(labs);
  return logits;
}

}  // namespace skd::analysis
