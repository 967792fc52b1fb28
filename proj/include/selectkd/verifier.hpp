// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "selectkd/prob.hpp"
#include "selectkd/rng.hpp"
#include "selectkd/types.hpp"

namespace selectkd {

enum class VerifyMode { kHellinger, kGreedyTopK, kSpecK };

std::string verify_mode_name(VerifyMode mode);
VerifyMode parse_verify_mode(const std::string& name);

/// Verifier settings. Defaults are the flagship preset: Spec-k with k = 5
/// and rejected-token weight beta = 0.01.
struct VerifierConfig {
  VerifyMode mode = VerifyMode::kSpecK;
  int k = 5;           // unused in Hellinger mode
  Scalar beta = 0.01;  // in [0, 1]

  void validate(Index vocab_size) const;
};

/// Per-token verification result. For the discrete modes the weight is
/// exactly beta or exactly 1 and `accepted` mirrors weight == 1. Hellinger
/// mode stores the distance itself as the weight.
struct VerificationOutcome {
  VerifyMode mode = VerifyMode::kSpecK;
  Scalar weight = 0.0;
  bool accepted = false;
  int accepted_count = 0;            // Spec-k only
  std::vector<TokenId> candidates;   // Spec-k only
};

/// Greedy Top-k: accept iff argmax(q) lies in the teacher's k most probable
/// tokens. Deterministic; consumes no randomness.
VerificationOutcome verify_greedy(const ProbVector& p, const ProbVector& q,
                                  const VerifierConfig& cfg);

/// Spec-k: draw k candidates i.i.d. from q and accept the position iff any
/// candidate passes u < min(1, p(y)/q(y)) (ratio clamped at kProbFloor).
/// Consumes exactly 2k draws from rng in the fixed order
/// (token_1, u_1, token_2, u_2, ...).
VerificationOutcome verify_spec(const ProbVector& p, const ProbVector& q,
                                const VerifierConfig& cfg, Rng& rng);

/// Soft Hellinger weight V = H(p, q). Kept for ablations; not part of the
/// default training presets.
VerificationOutcome verify_hellinger(const ProbVector& p, const ProbVector& q);

/// Evaluate the configured verifier (dispatch on cfg.mode).
VerificationOutcome verify(const ProbVector& p, const ProbVector& q,
                           const VerifierConfig& cfg, Rng& rng);

/// Token acceptance rate: the fraction of outcomes with weight exactly 1.
/// Defined for the discrete modes only; Hellinger outcomes are rejected.
Scalar tar(std::span<const VerificationOutcome> outcomes);

}  // namespace selectkd
