#pragma once

#include <vector>

#include "skd/common.hpp"

// Loss functions for self-knowledge distillation: cross-entropy, softened
// KL, reverse guidance against an auxiliary-classifier teacher, and
// shape-wise regularization against ranked logits of the previous iteration.
//
// Two surfaces are provided:
//   * distribution-level ops that take already-normalized probabilities and
//     return scalar loss values;
//   * logit-level ops ("*_on_logits") that take raw logits and also emit the
//     analytic gradient with respect to those logits; trainers use these.
// All ops are pure and thread-safe.

namespace skd::losses {

// Lower clamp for every log argument; keeps losses finite under underflow.
inline constexpr double kEps = 1e-12;

struct Temperature {
  double tau;
  explicit Temperature(double t) : tau(t) {
    if (!(t > 0.0)) throw InvalidInput("temperature must be > 0, got " + std::to_string(t));
  }
};

// Ascending-sorted logits plus the argsort that produced them:
// values[i] == original[perm[i]]. Ties broken by original index.
struct RankedLogits {
  Vec values;
  std::vector<int> perm;
};

void check_logits(const Vec& z);
void check_distribution(const Vec& p);
void check_label(int y, Eigen::Index k);

// softmax(z / tau), max-subtracted before exponentiation.
Vec softened_distribution(const Vec& z, Temperature tau);

// -log p_y
double cross_entropy(const Vec& p, int y);

// sum_k q_k log(q_k / p_k); computed in log space.
double kl_divergence(const Vec& q, const Vec& p);

// CE(p, y) + tau^2 * KL(q, p). Distributions are used as given; pass the
// tau-softened pair when tau != 1.
double kd_loss(const Vec& p, int y, const Vec& q, Temperature tau);

// CE(q, y) + CE(p, y); q is the auxiliary (teacher) head, p the full model.
double hard_label_loss(const Vec& q, const Vec& p, int y);

// tau^2 * KL(q, p) with the teacher q in the target slot.
double reverse_guidance_loss(const Vec& q, const Vec& p, Temperature tau);

// hard_label_loss + alpha * reverse_guidance_loss
double drg_loss(const Vec& q, const Vec& p, int y, Temperature tau, double alpha);

RankedLogits rank_ascending(const Vec& z);

// tau^2 * KL(softened(prev), softened(cur)); prev is a stored constant.
double shape_regularization_loss(const RankedLogits& prev, const RankedLogits& cur,
                                 Temperature tau);

// CE(p, y) + beta * sr
double dsr_loss(const Vec& p, int y, double sr, double beta);

// hard_label_loss + alpha * reverse_guidance_loss + beta * sr
double combined_loss(const Vec& q, const Vec& p, int y, double sr, Temperature tau,
                     double alpha, double beta);

// ---- logit-level ops with analytic gradients ----
// Gradient outputs may be null when not needed.

// CE(softmax(z), y); dz = softmax(z) - onehot(y).
double ce_on_logits(const Vec& z, int y, Vec* dz);

// tau^2 * KL(softmax(zq/tau), softmax(zp/tau)).
double kl_on_logits(const Vec& zq, const Vec& zp, double tau, Vec* dzq, Vec* dzp);

// Eq. of hard-label training: CE on both heads at tau = 1.
double hl_on_logits(const Vec& z_aux, const Vec& z, int y, Vec* dz_aux, Vec* dz);

double rg_on_logits(const Vec& z_aux, const Vec& z, double tau, Vec* dz_aux, Vec* dz);

// Full DRG objective on one sample. teacher_detach stops the KL gradient
// into the auxiliary branch (the hard-label CE still reaches it).
double drg_on_logits(const Vec& z_aux, const Vec& z, int y, double tau, double alpha,
                     bool teacher_detach, Vec* dz_aux, Vec* dz);

// Shape regularization on one sample: ranks z, compares against the stored
// ranked vector, and routes the gradient back through the sort permutation.
double sr_on_logits(const Vec& z_prev_ranked, const Vec& z, double tau, Vec* dz);

// DSR objective; z_prev_ranked == nullptr means "no cache yet" (SR term 0).
double dsr_on_logits(const Vec& z, int y, const Vec* z_prev_ranked, double tau,
                     double beta, Vec* dz);

// Combined DRG + DSR objective.
double combined_on_logits(const Vec& z_aux, const Vec& z, int y, const Vec* z_prev_ranked,
                          double tau_drg, double tau_dsr, double alpha, double beta,
                          bool teacher_detach, Vec* dz_aux, Vec* dz);

}  // namespace skd::losses
