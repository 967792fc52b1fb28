// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "selectkd/prob.hpp"
#include "selectkd/rng.hpp"
#include "selectkd/types.hpp"

namespace selectkd {

/// Numeric failure during training (non-finite loss or gradient).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Origin { kTeacher, kStudent, kCorpus };

struct Sequence {
  std::vector<TokenId> prompt;
  std::vector<TokenId> completion;
  Origin origin = Origin::kCorpus;

  std::vector<TokenId> tokens() const;  // prompt followed by completion
};

/// Tabular autoregressive model: one softmax problem per context. The table
/// has vocab_size^order rows; contexts shorter than `order` are left-padded
/// with the bos token.
class NGramModel {
 public:
  NGramModel(int vocab_size, int order, TokenId bos, Mat logit_table);

  /// All-zero logits (uniform rows).
  static NGramModel uniform(int vocab_size, int order, TokenId bos = 0);

  int vocab_size() const { return vocab_size_; }
  int order() const { return order_; }
  TokenId bos_token() const { return bos_; }
  Index num_contexts() const { return logits_.rows(); }
  const Mat& logit_table() const { return logits_; }
  Mat& logit_table() { return logits_; }

  /// Mixed-radix row index of the bos-padded last `order` tokens.
  Index context_index(std::span<const TokenId> context) const;

 private:
  int vocab_size_;
  int order_;
  TokenId bos_;
  Mat logits_;
};

/// Logits for the next token after `context` (a row of the table).
LogitVector predict_logits(const NGramModel& model, std::span<const TokenId> context);

/// Teacher with each context row drawn from a symmetric
/// Dirichlet(concentration); logits are the log-probabilities. Low
/// concentration gives peaked rows, high concentration near-uniform rows.
NGramModel random_teacher(int vocab_size, int order, Scalar concentration,
                          std::uint64_t seed, TokenId bos = 0);

/// Teacher from add-lambda-smoothed n-gram counts over the corpus (prompt
/// and completion tokens alike). Contexts with no mass become uniform rows.
NGramModel corpus_teacher(const std::vector<Sequence>& corpus, int vocab_size,
                          int order, Scalar smoothing, TokenId bos = 0);

enum class GenMode { kGreedy, kSample };

/// Autoregressive rollout of `length` tokens after `prompt`. Greedy takes
/// the argmax (ties to the lowest index) and ignores rng; Sample draws from
/// softmax(logits / temperature), one uniform per emitted token.
Sequence generate(const NGramModel& model, std::span<const TokenId> prompt,
                  int length, GenMode mode, Scalar temperature, Rng& rng,
                  Origin origin);

/// Sparse gradient: context-row index -> d(loss)/d(logit row). Ordered map
/// so updates walk rows in a fixed order.
using RowGradMap = std::map<Index, Vec>;

struct SgdConfig {
  Scalar lr = 0.5;
};

struct AdamConfig {
  Scalar lr = 0.05;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

/// Owns optimizer state across steps. Adam keeps first/second moments for
/// the whole table and bias-corrects with a global step count; rows absent
/// from a step's gradient map are left untouched (lazy update).
class Optimizer {
 public:
  explicit Optimizer(SgdConfig cfg) : sgd_(cfg), is_adam_(false) {}
  explicit Optimizer(AdamConfig cfg) : adam_(cfg), is_adam_(true) {}

  /// Scheduled runs retarget the step size between updates.
  void set_lr(Scalar lr) { (is_adam_ ? adam_.lr : sgd_.lr) = lr; }

  void apply_grad(NGramModel& model, const RowGradMap& grads);

 private:
  SgdConfig sgd_;
  AdamConfig adam_;
  bool is_adam_;
  long step_ = 0;
  Mat m_, v_;
};

/// Binary model file: 8-byte magic, version, shape fields, then the logit
/// table row-major as little-endian IEEE doubles. Round-trips bit-exactly.
void save_model(const NGramModel& model, const std::filesystem::path& path);
NGramModel load_model(const std::filesystem::path& path);

}  // namespace selectkd
