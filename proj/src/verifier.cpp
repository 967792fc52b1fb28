// SPDX-License-Identifier: Apache-2.0
#include "selectkd/verifier.hpp"

#include <algorithm>
#include <stdexcept>

namespace selectkd {

std::string verify_mode_name(VerifyMode mode) {
  switch (mode) {
    case VerifyMode::kHellinger: return "hellinger";
    case VerifyMode::kGreedyTopK: return "greedy-topk";
    case VerifyMode::kSpecK: return "spec-k";
  }
  return "?";
}

VerifyMode parse_verify_mode(const std::string& name) {
  if (name == "hellinger") return VerifyMode::kHellinger;
  if (name == "greedy-topk") return VerifyMode::kGreedyTopK;
  if (name == "spec-k") return VerifyMode::kSpecK;
  throw std::invalid_argument("unknown verifier mode '" + name + "'");
}

void VerifierConfig::validate(Index vocab_size) const {
  if (!(beta >= 0.0 && beta <= 1.0))
    throw std::invalid_argument("VerifierConfig: beta must be in [0, 1]");
  if (mode == VerifyMode::kHellinger) return;
  if (k < 1 || k > vocab_size)
    throw std::invalid_argument("VerifierConfig: k must be in [1, vocab_size]");
}

VerificationOutcome verify_greedy(const ProbVector& p, const ProbVector& q,
                                  const VerifierConfig& cfg) {
  if (cfg.mode != VerifyMode::kGreedyTopK)
    throw std::invalid_argument("verify_greedy: cfg.mode must be GreedyTopK");
  if (p.size() != q.size())
    throw std::invalid_argument("verify_greedy: size mismatch");
  cfg.validate(p.size());

  // Student proposal = argmax(q); maxCoeff reports the first maximum, which
  // is the lowest-index tie rule.
  Index proposal = 0;
  q.probs().maxCoeff(&proposal);
  const std::vector<TokenId> top = top_k_set(p, cfg.k);
  const bool in_top =
      std::find(top.begin(), top.end(), static_cast<TokenId>(proposal)) != top.end();

  VerificationOutcome out;
  out.mode = VerifyMode::kGreedyTopK;
  out.accepted = in_top;
  out.weight = in_top ? 1.0 : cfg.beta;
  return out;
}

VerificationOutcome verify_spec(const ProbVector& p, const ProbVector& q,
                                const VerifierConfig& cfg, Rng& rng) {
  if (cfg.mode != VerifyMode::kSpecK)
    throw std::invalid_argument("verify_spec: cfg.mode must be SpecK");
  if (p.size() != q.size())
    throw std::invalid_argument("verify_spec: size mismatch");
  cfg.validate(p.size());

  VerificationOutcome out;
  out.mode = VerifyMode::kSpecK;
  out.candidates.reserve(static_cast<std::size_t>(cfg.k));
  for (int j = 0; j < cfg.k; ++j) {
    const TokenId y = sample(q, rng);
    const Scalar u = rng.uniform();
    out.candidates.push_back(y);
    const Scalar ratio = std::max(p[y], kProbFloor) / std::max(q[y], kProbFloor);
    if (u < std::min(1.0, ratio)) ++out.accepted_count;
  }
  out.accepted = out.accepted_count >= 1;
  out.weight = out.accepted ? 1.0 : cfg.beta;
  return out;
}

VerificationOutcome verify_hellinger(const ProbVector& p, const ProbVector& q) {
  VerificationOutcome out;
  out.mode = VerifyMode::kHellinger;
  out.weight = hellinger(p, q);
  out.accepted = out.weight == 1.0;
  return out;
}

VerificationOutcome verify(const ProbVector& p, const ProbVector& q,
                           const VerifierConfig& cfg, Rng& rng) {
  switch (cfg.mode) {
    case VerifyMode::kHellinger: return verify_hellinger(p, q);
    case VerifyMode::kGreedyTopK: return verify_greedy(p, q, cfg);
    case VerifyMode::kSpecK: return verify_spec(p, q, cfg, rng);
  }
  throw std::logic_error("verify: unreachable");
}

Scalar tar(std::span<const VerificationOutcome> outcomes) {
  if (outcomes.empty())
    throw std::invalid_argument("tar: outcomes must be nonempty");
  long accepted = 0;
  for (const VerificationOutcome& o : outcomes) {
    if (o.mode == VerifyMode::kHellinger)
      throw std::invalid_argument("tar: undefined for Hellinger-mode outcomes");
    if (o.weight == 1.0) ++accepted;
  }
  return static_cast<Scalar>(accepted) / static_cast<Scalar>(outcomes.size());
}

}  // namespace selectkd
