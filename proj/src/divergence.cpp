// SPDX-License-Identifier: Apache-2.0
#include "selectkd/divergence.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>

#include "selectkd/stats.hpp"

namespace selectkd {

namespace {

void check_sizes(const ProbVector& p, const ProbVector& q, const char* who) {
  if (p.size() != q.size())
    throw std::invalid_argument(std::string(who) + ": size mismatch");
}

void check_alpha(Scalar alpha, const char* who) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw std::invalid_argument(std::string(who) + ": alpha must be in [0, 1)");
}

// sum_i a_i * log(max(a,floor)_i / max(b,floor)_i); terms with a_i == 0
// contribute exactly zero.
Scalar kl_clamped(const Vec& a, const Vec& b) {
  const auto la = a.array().max(kProbFloor).log();
  const auto lb = b.array().max(kProbFloor).log();
  const Scalar v = (a.array() * (la - lb)).sum();
  return std::max(v, 0.0);  // round-off can leave a tiny negative at a == b
}

// Softmax-Jacobian product J * g = q .* (g - q.g) without forming J.
// Results more than 14 orders of magnitude below the input scale are pure
// cancellation residue (the projection of a constant vector is exactly
// zero), so they flush to zero; adaptive optimizers would otherwise blow
// the dust up into full-size steps.
Vec jacobian_apply(const Vec& q, const Vec& g) {
  Vec r = (q.array() * (g.array() - q.dot(g))).matrix();
  if (r.lpNorm<Eigen::Infinity>() <= 1e-14 * g.lpNorm<Eigen::Infinity>()) r.setZero();
  return r;
}

}  // namespace

DivergenceKind::DivergenceKind(Family family, Scalar alpha)
    : family_(family), alpha_(alpha) {
  if (skewed())
    check_alpha(alpha, "DivergenceKind");
  else if (alpha != 0.0)
    throw std::invalid_argument("DivergenceKind: alpha only applies to skl/srkl");
}

std::string DivergenceKind::name() const {
  switch (family_) {
    case Family::kFkl: return "fkl";
    case Family::kRkl: return "rkl";
    case Family::kSkl: return "skl";
    case Family::kSrkl: return "srkl";
  }
  return "?";
}

DivergenceKind DivergenceKind::parse(const std::string& name, std::optional<Scalar> alpha) {
  const bool skew_name = (name == "skl" || name == "srkl");
  if (skew_name != alpha.has_value())
    throw std::invalid_argument("DivergenceKind: alpha required iff kind is skl/srkl");
  if (name == "fkl") return fkl();
  if (name == "rkl") return rkl();
  if (name == "skl") return skl(*alpha);
  if (name == "srkl") return srkl(*alpha);
  throw std::invalid_argument("DivergenceKind: unknown kind '" + name + "'");
}

Scalar fkl(const ProbVector& p, const ProbVector& q) {
  check_sizes(p, q, "fkl");
  return kl_clamped(p.probs(), q.probs());
}

Scalar rkl(const ProbVector& p, const ProbVector& q) {
  check_sizes(p, q, "rkl");
  return kl_clamped(q.probs(), p.probs());
}

Scalar skl(const ProbVector& p, const ProbVector& q, Scalar alpha) {
  check_sizes(p, q, "skl");
  check_alpha(alpha, "skl");
  const Vec m = alpha * p.probs() + (1.0 - alpha) * q.probs();
  return kl_clamped(p.probs(), m);
}

Scalar srkl(const ProbVector& p, const ProbVector& q, Scalar alpha) {
  check_sizes(p, q, "srkl");
  check_alpha(alpha, "srkl");
  const Vec m = (1.0 - alpha) * p.probs() + alpha * q.probs();
  return kl_clamped(q.probs(), m);
}

Scalar divergence(const DivergenceKind& kind, const ProbVector& p, const ProbVector& q) {
  switch (kind.family()) {
    case DivergenceKind::Family::kFkl: return fkl(p, q);
    case DivergenceKind::Family::kRkl: return rkl(p, q);
    case DivergenceKind::Family::kSkl: return skl(p, q, kind.alpha());
    case DivergenceKind::Family::kSrkl: return srkl(p, q, kind.alpha());
  }
  throw std::logic_error("divergence: unreachable");
}

Vec grad_logits(const DivergenceKind& kind, const ProbVector& p, const LogitVector& z_q) {
  if (p.size() != z_q.size())
    throw std::invalid_argument("grad_logits: size mismatch");
  const Vec q = softmax(z_q).probs();
  const Vec& pv = p.probs();
  switch (kind.family()) {
    case DivergenceKind::Family::kFkl:
      return q - pv;
    case DivergenceKind::Family::kRkl: {
      const Vec g = (q.array().max(kProbFloor).log() -
                     pv.array().max(kProbFloor).log() + 1.0)
                        .matrix();
      return jacobian_apply(q, g);
    }
    case DivergenceKind::Family::kSkl: {
      const Scalar alpha = kind.alpha();
      const Vec m = (alpha * pv + (1.0 - alpha) * q).array().max(kProbFloor).matrix();
      const Vec g = (-(1.0 - alpha) * (pv.array() / m.array())).matrix();
      return jacobian_apply(q, g);
    }
    case DivergenceKind::Family::kSrkl: {
      const Scalar alpha = kind.alpha();
      const Vec m = ((1.0 - alpha) * pv + alpha * q).array().max(kProbFloor).matrix();
      const auto ratio = q.array().max(kProbFloor) / m.array();
      const Vec g = (ratio.log() + 1.0 - alpha * (q.array() / m.array())).matrix();
      return jacobian_apply(q, g);
    }
  }
  throw std::logic_error("grad_logits: unreachable");
}

TokenLoss token_loss(const DivergenceKind& kind, const ProbVector& p, const LogitVector& z_q) {
  TokenLoss out;
  out.value = divergence(kind, p, softmax(z_q));
  out.grad_logits = grad_logits(kind, p, z_q);
  return out;
}

SequenceLoss selectkd_loss(const DivergenceKind& kind,
                           const std::vector<ProbVector>& p_seq,
                           const std::vector<LogitVector>& z_seq,
                           const std::vector<Scalar>& weights) {
  const std::size_t n = p_seq.size();
  if (n == 0 || z_seq.size() != n || weights.size() != n)
    throw std::invalid_argument("selectkd_loss: sequences must be nonempty and equal length");
  for (Scalar w : weights)
    if (!(w >= 0.0 && w <= 1.0))
      throw std::invalid_argument("selectkd_loss: weights must lie in [0, 1]");

  const Scalar inv_t = 1.0 / static_cast<Scalar>(n);
  SequenceLoss out;
  out.grad_logits.reserve(n);
  CompensatedSum weighted, raw;
  for (std::size_t t = 0; t < n; ++t) {
    const TokenLoss tl = token_loss(kind, p_seq[t], z_seq[t]);
    weighted.add(weights[t] * tl.value);
    raw.add(tl.value);
    out.grad_logits.push_back((weights[t] * inv_t) * tl.grad_logits);
  }
  out.value = weighted.value() * inv_t;
  out.raw_value = raw.value() * inv_t;
  return out;
}

CompositeLoss distillm2_loss(const std::vector<SequenceTerms>& teacher_batch,
                             const std::vector<SequenceTerms>& student_batch,
                             Scalar mu, Scalar alpha_t, Scalar alpha_s) {
  if (!(mu >= 0.0 && mu <= 1.0))
    throw std::invalid_argument("distillm2_loss: mu must be in [0, 1]");
  check_alpha(alpha_t, "distillm2_loss(alpha_t)");
  check_alpha(alpha_s, "distillm2_loss(alpha_s)");
  if (teacher_batch.empty() || student_batch.empty())
    throw std::invalid_argument("distillm2_loss: batches must be nonempty");

  auto run_side = [](const std::vector<SequenceTerms>& batch, const DivergenceKind& kind,
                     Scalar scale, std::vector<SequenceLoss>& terms) {
    CompensatedSum mean;
    for (const SequenceTerms& seq : batch) {
      SequenceLoss loss = selectkd_loss(kind, seq.teacher, seq.student, seq.weights);
      mean.add(loss.value);
      for (Vec& g : loss.grad_logits) g *= scale / static_cast<Scalar>(batch.size());
      terms.push_back(std::move(loss));
    }
    return mean.value() / static_cast<Scalar>(batch.size());
  };

  CompositeLoss out;
  const Scalar skl_mean =
      run_side(teacher_batch, DivergenceKind::skl(alpha_t), 1.0 - mu, out.teacher_terms);
  const Scalar srkl_mean =
      run_side(student_batch, DivergenceKind::srkl(alpha_s), mu, out.student_terms);
  out.value = (1.0 - mu) * skl_mean + mu * srkl_mean;
  return out;
}

}  // namespace selectkd
