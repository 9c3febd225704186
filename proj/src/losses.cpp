#include "skd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace skd::losses {

namespace {

double clamped_log(double x) { return std::log(std::max(x, kEps)); }

void check_same_k(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size())
    throw InvalidInput(std::string(what) + ": class-count mismatch (" +
                       std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
}

void check_coeff(double c, const char* name) {
  if (!(c >= 0.0) || !std::isfinite(c))
    throw InvalidInput(std::string(name) + " must be finite and >= 0");
}

}  // namespace

void check_logits(const Vec& z) {
  if (z.size() < 2) throw InvalidInput("logit vector needs K >= 2");
  if (!z.allFinite()) throw InvalidInput("logit vector contains non-finite entries");
}

void check_distribution(const Vec& p) {
  if (p.size() < 2) throw InvalidInput("distribution needs K >= 2");
  if (!p.allFinite() || (p.array() <= 0.0).any())
    throw InvalidInput("distribution entries must be finite and strictly positive");
  if (std::abs(p.sum() - 1.0) > 1e-6)
    throw InvalidInput("distribution does not sum to 1 (sum=" + std::to_string(p.sum()) + ")");
}

void check_label(int y, Eigen::Index k) {
  if (y < 0 || y >= k)
    throw InvalidInput("label " + std::to_string(y) + " out of [0," + std::to_string(k) + ")");
}

Vec softened_distribution(const Vec& z, Temperature tau) {
  check_logits(z);
  Vec scaled = z / tau.tau;
  const double m = scaled.maxCoeff();
  Vec e = (scaled.array() - m).exp();
  return e / e.sum();
}

double cross_entropy(const Vec& p, int y) {
  check_distribution(p);
  check_label(y, p.size());
  return -clamped_log(p[y]);
}

double kl_divergence(const Vec& q, const Vec& p) {
  check_distribution(q);
  check_distribution(p);
  check_same_k(q, p, "kl_divergence");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < q.size(); ++k)
    acc += q[k] * (clamped_log(q[k]) - clamped_log(p[k]));
  return acc;
}

double kd_loss(const Vec& p, int y, const Vec& q, Temperature tau) {
  return cross_entropy(p, y) + tau.tau * tau.tau * kl_divergence(q, p);
}

double hard_label_loss(const Vec& q, const Vec& p, int y) {
  return cross_entropy(q, y) + cross_entropy(p, y);
}

double reverse_guidance_loss(const Vec& q, const Vec& p, Temperature tau) {
  return tau.tau * tau.tau * kl_divergence(q, p);
}

double drg_loss(const Vec& q, const Vec& p, int y, Temperature tau, double alpha) {
  check_coeff(alpha, "alpha");
  return hard_label_loss(q, p, y) + alpha * reverse_guidance_loss(q, p, tau);
}

RankedLogits rank_ascending(const Vec& z) {
  check_logits(z);
  RankedLogits out;
  out.perm.resize(static_cast<size_t>(z.size()));
  std::iota(out.perm.begin(), out.perm.end(), 0);
  std::stable_sort(out.perm.begin(), out.perm.end(),
                   [&](int a, int b) { return z[a] < z[b]; });
  out.values.resize(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) out.values[i] = z[out.perm[static_cast<size_t>(i)]];
  return out;
}

double shape_regularization_loss(const RankedLogits& prev, const RankedLogits& cur,
                                 Temperature tau) {
  check_same_k(prev.values, cur.values, "shape_regularization_loss");
  const Vec target = softened_distribution(prev.values, tau);
  const Vec current = softened_distribution(cur.values, tau);
  return tau.tau * tau.tau * kl_divergence(target, current);
}

double dsr_loss(const Vec& p, int y, double sr, double beta) {
  check_coeff(beta, "beta");
  if (!std::isfinite(sr)) throw InvalidInput("sr term must be finite");
  return cross_entropy(p, y) + beta * sr;
}

double combined_loss(const Vec& q, const Vec& p, int y, double sr, Temperature tau,
                     double alpha, double beta) {
  check_coeff(beta, "beta");
  if (!std::isfinite(sr)) throw InvalidInput("sr term must be finite");
  return drg_loss(q, p, y, tau, alpha) + beta * sr;
}

double ce_on_logits(const Vec& z, int y, Vec* dz) {
  check_logits(z);
  check_label(y, z.size());
  const Vec p = softened_distribution(z, Temperature(1.0));
  if (dz) {
    *dz = p;
    (*dz)[y] -= 1.0;
  }
  return -clamped_log(p[y]);
}

double kl_on_logits(const Vec& zq, const Vec& zp, double tau, Vec* dzq, Vec* dzp) {
  check_same_k(zq, zp, "kl_on_logits");
  const Temperature t(tau);
  const Vec q = softened_distribution(zq, t);
  const Vec p = softened_distribution(zp, t);
  double kl = 0.0;
  Vec log_ratio(q.size());
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    log_ratio[k] = clamped_log(q[k]) - clamped_log(p[k]);
    kl += q[k] * log_ratio[k];
  }
  if (dzp) *dzp = tau * (p - q);
  if (dzq) {
    // d(tau^2 KL)/dzq = tau * q .* (log_ratio - KL)
    *dzq = tau * (q.array() * (log_ratio.array() - kl)).matrix();
  }
  return tau * tau * kl;
}

double hl_on_logits(const Vec& z_aux, const Vec& z, int y, Vec* dz_aux, Vec* dz) {
  return ce_on_logits(z_aux, y, dz_aux) + ce_on_logits(z, y, dz);
}

double rg_on_logits(const Vec& z_aux, const Vec& z, double tau, Vec* dz_aux, Vec* dz) {
  return kl_on_logits(z_aux, z, tau, dz_aux, dz);
}

double drg_on_logits(const Vec& z_aux, const Vec& z, int y, double tau, double alpha,
                     bool teacher_detach, Vec* dz_aux, Vec* dz) {
  check_coeff(alpha, "alpha");
  Vec hl_daux, hl_dz, rg_daux, rg_dz;
  const double hl = hl_on_logits(z_aux, z, y, dz_aux ? &hl_daux : nullptr, dz ? &hl_dz : nullptr);
  const double rg = rg_on_logits(z_aux, z, tau, dz_aux && !teacher_detach ? &rg_daux : nullptr,
                                 dz ? &rg_dz : nullptr);
  if (dz) *dz = hl_dz + alpha * rg_dz;
  if (dz_aux) {
    *dz_aux = hl_daux;
    if (!teacher_detach) *dz_aux += alpha * rg_daux;
  }
  return hl + alpha * rg;
}

double sr_on_logits(const Vec& z_prev_ranked, const Vec& z, double tau, Vec* dz) {
  check_logits(z);
  check_same_k(z_prev_ranked, z, "sr_on_logits");
  const RankedLogits cur = rank_ascending(z);
  Vec d_ranked;
  const double value =
      kl_on_logits(z_prev_ranked, cur.values, tau, nullptr, dz ? &d_ranked : nullptr);
  if (dz) {
    // Route the gradient back through the sort permutation.
    dz->setZero(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      (*dz)[cur.perm[static_cast<size_t>(i)]] = d_ranked[i];
  }
  return value;
}

double dsr_on_logits(const Vec& z, int y, const Vec* z_prev_ranked, double tau,
                     double beta, Vec* dz) {
  check_coeff(beta, "beta");
  Vec ce_dz, sr_dz;
  const double ce = ce_on_logits(z, y, dz ? &ce_dz : nullptr);
  double sr = 0.0;
  if (z_prev_ranked) {
    sr = sr_on_logits(*z_prev_ranked, z, tau, dz ? &sr_dz : nullptr);
  } else {
    sr_dz = Vec::Zero(z.size());
  }
  if (dz) *dz = z_prev_ranked ? Vec(ce_dz + beta * sr_dz) : ce_dz;
  return ce + beta * sr;
}

double combined_on_logits(const Vec& z_aux, const Vec& z, int y, const Vec* z_prev_ranked,
                          double tau_drg, double tau_dsr, double alpha, double beta,
                          bool teacher_detach, Vec* dz_aux, Vec* dz) {
  check_coeff(beta, "beta");
  Vec drg_dz;
  const double drg =
      drg_on_logits(z_aux, z, y, tau_drg, alpha, teacher_detach, dz_aux, dz ? &drg_dz : nullptr);
  double sr = 0.0;
  Vec sr_dz;
  if (z_prev_ranked) sr = sr_on_logits(*z_prev_ranked, z, tau_dsr, dz ? &sr_dz : nullptr);
  if (dz) {
    *dz = drg_dz;
    if (z_prev_ranked) *dz += beta * sr_dz;
  }
  return drg + beta * sr;
}

}  // namespace skd::losses
