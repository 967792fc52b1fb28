// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "selectkd/prob.hpp"
#include "selectkd/types.hpp"

namespace selectkd {

/// Which token-wise divergence to apply. The skewed families carry a mixing
/// coefficient alpha in [0, 1); alpha = 1 is excluded because both losses
/// degenerate to a constant there.
class DivergenceKind {
 public:
  enum class Family { kFkl, kRkl, kSkl, kSrkl };

  static DivergenceKind fkl() { return DivergenceKind(Family::kFkl, 0.0); }
  static DivergenceKind rkl() { return DivergenceKind(Family::kRkl, 0.0); }
  static DivergenceKind skl(Scalar alpha) { return DivergenceKind(Family::kSkl, alpha); }
  static DivergenceKind srkl(Scalar alpha) { return DivergenceKind(Family::kSrkl, alpha); }

  Family family() const { return family_; }
  bool skewed() const { return family_ == Family::kSkl || family_ == Family::kSrkl; }
  Scalar alpha() const { return alpha_; }

  /// Same family with a different alpha; no-op for FKL/RKL.
  DivergenceKind with_alpha(Scalar alpha) const {
    return skewed() ? DivergenceKind(family_, alpha) : *this;
  }

  std::string name() const;
  /// Parses "fkl" | "rkl" | "skl" | "srkl"; alpha required iff skewed.
  static DivergenceKind parse(const std::string& name, std::optional<Scalar> alpha);

 private:
  DivergenceKind(Family family, Scalar alpha);

  Family family_;
  Scalar alpha_;
};

/// Forward KL, sum_i p_i log(p_i / q_i), with kProbFloor clamps inside the
/// logs. Zero teacher entries contribute exactly zero.
Scalar fkl(const ProbVector& p, const ProbVector& q);

/// Reverse KL, sum_i q_i log(q_i / p_i).
Scalar rkl(const ProbVector& p, const ProbVector& q);

/// Skew KL: KL(p || alpha*p + (1-alpha)*q). Reduces to fkl at alpha = 0.
Scalar skl(const ProbVector& p, const ProbVector& q, Scalar alpha);

/// Skew reverse KL: KL(q || (1-alpha)*p + alpha*q). Reduces to rkl at alpha = 0.
Scalar srkl(const ProbVector& p, const ProbVector& q, Scalar alpha);

/// Dispatch to one of the four divergences above.
Scalar divergence(const DivergenceKind& kind, const ProbVector& p, const ProbVector& q);

/// Analytic gradient of the chosen divergence with respect to the student
/// logits z_q (teacher p constant). Every output sums to zero: gradients
/// live in the softmax tangent space.
Vec grad_logits(const DivergenceKind& kind, const ProbVector& p, const LogitVector& z_q);

/// One token's divergence value and logit gradient.
struct TokenLoss {
  Scalar value = 0.0;
  Vec grad_logits;
};

TokenLoss token_loss(const DivergenceKind& kind, const ProbVector& p, const LogitVector& z_q);

/// Loss for one sequence: value = (1/T) * sum_t V_t * D(p_t || q_t), plus the
/// per-position logit gradients already scaled by V_t / T. The weights V_t
/// are plain constants; nothing differentiates through them.
struct SequenceLoss {
  Scalar value = 0.0;
  Scalar raw_value = 0.0;                // unweighted mean divergence
  std::vector<Vec> grad_logits;          // one vocab-sized gradient per position
};

SequenceLoss selectkd_loss(const DivergenceKind& kind,
                           const std::vector<ProbVector>& p_seq,
                           const std::vector<LogitVector>& z_seq,
                           const std::vector<Scalar>& weights);

/// One sequence's aligned teacher/student distributions plus verification
/// weights (all-ones when absent).
struct SequenceTerms {
  std::vector<ProbVector> teacher;
  std::vector<LogitVector> student;
  std::vector<Scalar> weights;
};

/// Composite objective mixing SKL(alpha_t) on teacher-generated sequences
/// with SRKL(alpha_s) on student-generated ones:
///   (1 - mu) * mean_teacher[SKL] + mu * mean_student[SRKL].
/// Per-sequence gradients come back scaled by their batch factor, so summing
/// every gradient reproduces the total.
struct CompositeLoss {
  Scalar value = 0.0;
  std::vector<SequenceLoss> teacher_terms;
  std::vector<SequenceLoss> student_terms;
};

CompositeLoss distillm2_loss(const std::vector<SequenceTerms>& teacher_batch,
                             const std::vector<SequenceTerms>& student_batch,
                             Scalar mu, Scalar alpha_t, Scalar alpha_s);

}  // namespace selectkd
