// SPDX-License-Identifier: Apache-2.0
#include "selectkd/ngram.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace selectkd {

namespace {

constexpr char kMagic[8] = {'S', 'K', 'D', 'N', 'G', 'R', 'A', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

Index pow_checked(int base, int exp) {
  Index r = 1;
  for (int i = 0; i < exp; ++i) {
    if (r > (1LL << 40) / base)
      throw std::invalid_argument("NGramModel: vocab_size^order too large");
    r *= base;
  }
  return r;
}

void check_tokens(std::span<const TokenId> tokens, int vocab_size, const char* who) {
  for (TokenId t : tokens)
    if (t < 0 || t >= vocab_size)
      throw std::invalid_argument(std::string(who) + ": token id out of range");
}

void write_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return x;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return x;
}

}  // namespace

std::vector<TokenId> Sequence::tokens() const {
  std::vector<TokenId> out = prompt;
  out.insert(out.end(), completion.begin(), completion.end());
  return out;
}

NGramModel::NGramModel(int vocab_size, int order, TokenId bos, Mat logit_table)
    : vocab_size_(vocab_size), order_(order), bos_(bos), logits_(std::move(logit_table)) {
  if (vocab_size_ < 2) throw std::invalid_argument("NGramModel: vocab_size must be >= 2");
  if (order_ < 0) throw std::invalid_argument("NGramModel: order must be >= 0");
  if (bos_ < 0 || bos_ >= vocab_size_)
    throw std::invalid_argument("NGramModel: bos token out of range");
  const Index rows = pow_checked(vocab_size_, order_);
  if (logits_.rows() != rows || logits_.cols() != vocab_size_)
    throw std::invalid_argument("NGramModel: logit table has the wrong shape");
  if (!logits_.allFinite())
    throw std::invalid_argument("NGramModel: logits must be finite");
}

NGramModel NGramModel::uniform(int vocab_size, int order, TokenId bos) {
  const Index rows = pow_checked(vocab_size, order);
  return NGramModel(vocab_size, order, bos, Mat::Zero(rows, vocab_size));
}

Index NGramModel::context_index(std::span<const TokenId> context) const {
  check_tokens(context, vocab_size_, "context_index");
  Index idx = 0;
  for (int i = 0; i < order_; ++i) {
    const Index pos = static_cast<Index>(context.size()) - order_ + i;
    const TokenId t = pos >= 0 ? context[static_cast<std::size_t>(pos)] : bos_;
    idx = idx * vocab_size_ + t;
  }
  return idx;
}

LogitVector predict_logits(const NGramModel& model, std::span<const TokenId> context) {
  return LogitVector(model.logit_table().row(model.context_index(context)).transpose());
}

NGramModel random_teacher(int vocab_size, int order, Scalar concentration,
                          std::uint64_t seed, TokenId bos) {
  if (!(concentration > 0.0))
    throw std::invalid_argument("random_teacher: concentration must be > 0");
  Rng rng(seed);
  const Index rows = pow_checked(vocab_size, order);
  Mat logits(rows, vocab_size);
  for (Index r = 0; r < rows; ++r) {
    const Vec p = rng.dirichlet(concentration, vocab_size);
    logits.row(r) = p.array().max(kProbFloor).log().transpose();
  }
  return NGramModel(vocab_size, order, bos, std::move(logits));
}

NGramModel corpus_teacher(const std::vector<Sequence>& corpus, int vocab_size,
                          int order, Scalar smoothing, TokenId bos) {
  if (corpus.empty()) throw std::invalid_argument("corpus_teacher: corpus must be nonempty");
  if (smoothing < 0.0) throw std::invalid_argument("corpus_teacher: smoothing must be >= 0");
  NGramModel shape = NGramModel::uniform(vocab_size, order, bos);
  Mat counts = Mat::Zero(shape.num_contexts(), vocab_size);
  for (const Sequence& seq : corpus) {
    const std::vector<TokenId> tokens = seq.tokens();
    check_tokens(tokens, vocab_size, "corpus_teacher");
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const std::span<const TokenId> ctx(tokens.data(), t);
      counts(shape.context_index(ctx), tokens[t]) += 1.0;
    }
  }
  Mat logits(counts.rows(), counts.cols());
  for (Index r = 0; r < counts.rows(); ++r) {
    const Scalar total = counts.row(r).sum() + smoothing * vocab_size;
    if (total <= 0.0) {
      logits.row(r).setConstant(std::log(1.0 / vocab_size));
      continue;
    }
    const Vec probs = ((counts.row(r).transpose().array() + smoothing) / total).matrix();
    logits.row(r) = probs.array().max(kProbFloor).log().transpose();
  }
  return NGramModel(vocab_size, order, bos, std::move(logits));
}

Sequence generate(const NGramModel& model, std::span<const TokenId> prompt,
                  int length, GenMode mode, Scalar temperature, Rng& rng,
                  Origin origin) {
  if (length < 1) throw std::invalid_argument("generate: length must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("generate: temperature must be > 0");
  check_tokens(prompt, model.vocab_size(), "generate");

  Sequence out;
  out.prompt.assign(prompt.begin(), prompt.end());
  out.origin = origin;
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  for (int i = 0; i < length; ++i) {
    const LogitVector z = predict_logits(model, context);
    TokenId next;
    if (mode == GenMode::kGreedy) {
      Index argmax = 0;
      z.values().maxCoeff(&argmax);
      next = static_cast<TokenId>(argmax);
    } else {
      const ProbVector p = softmax(LogitVector(z.values() / temperature));
      next = sample(p, rng);
    }
    out.completion.push_back(next);
    context.push_back(next);
  }
  return out;
}

void Optimizer::apply_grad(NGramModel& model, const RowGradMap& grads) {
  Mat& table = model.logit_table();
  for (const auto& [row, g] : grads) {
    if (row < 0 || row >= table.rows())
      throw std::invalid_argument("apply_grad: row index out of range");
    if (g.size() != table.cols())
      throw std::invalid_argument("apply_grad: gradient has the wrong width");
    if (!g.allFinite()) throw NumericError("apply_grad: non-finite gradient");
  }
  ++step_;
  if (!is_adam_) {
    for (const auto& [row, g] : grads) table.row(row) -= sgd_.lr * g.transpose();
  } else {
    if (m_.rows() != table.rows() || m_.cols() != table.cols()) {
      m_ = Mat::Zero(table.rows(), table.cols());
      v_ = Mat::Zero(table.rows(), table.cols());
    }
    const Scalar bc1 = 1.0 - std::pow(adam_.beta1, static_cast<Scalar>(step_));
    const Scalar bc2 = 1.0 - std::pow(adam_.beta2, static_cast<Scalar>(step_));
    for (const auto& [row, g] : grads) {
      m_.row(row) = adam_.beta1 * m_.row(row) + (1.0 - adam_.beta1) * g.transpose();
      v_.row(row) = (adam_.beta2 * v_.row(row).array() +
                     (1.0 - adam_.beta2) * g.transpose().array().square())
                        .matrix();
      const Eigen::RowVectorXd m_hat = m_.row(row) / bc1;
      const Eigen::RowVectorXd v_hat = v_.row(row) / bc2;
      table.row(row) -=
          adam_.lr * (m_hat.array() / (v_hat.array().sqrt() + adam_.eps)).matrix();
    }
  }
  for (const auto& [row, g] : grads) {
    (void)g;
    if (!table.row(row).allFinite()) throw NumericError("apply_grad: update overflowed");
  }
}

void save_model(const NGramModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_model: cannot open " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kFormatVersion);
  write_u32(os, static_cast<std::uint32_t>(model.vocab_size()));
  write_u32(os, static_cast<std::uint32_t>(model.order()));
  write_u32(os, static_cast<std::uint32_t>(model.bos_token()));
  write_u64(os, static_cast<std::uint64_t>(model.num_contexts()));
  const Mat& table = model.logit_table();
  for (Index r = 0; r < table.rows(); ++r)
    for (Index c = 0; c < table.cols(); ++c)
      write_u64(os, std::bit_cast<std::uint64_t>(table(r, c)));
  if (!os) throw std::runtime_error("save_model: write failed for " + path.string());
}

NGramModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_model: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_model: bad magic in " + path.string());
  const std::uint32_t version = read_u32(is);
  if (version != kFormatVersion)
    throw std::runtime_error("load_model: unsupported format version");
  const int vocab = static_cast<int>(read_u32(is));
  const int order = static_cast<int>(read_u32(is));
  const TokenId bos = static_cast<TokenId>(read_u32(is));
  const Index rows = static_cast<Index>(read_u64(is));
  Mat table(rows, vocab);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < vocab; ++c)
      table(r, c) = std::bit_cast<Scalar>(read_u64(is));
  if (!is) throw std::runtime_error("load_model: truncated file " + path.string());
  return NGramModel(vocab, order, bos, std::move(table));
}

}  // namespace selectkd
