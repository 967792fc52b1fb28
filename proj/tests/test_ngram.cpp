// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "selectkd/ngram.hpp"

using namespace selectkd;

namespace {

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

Scalar mean_row_entropy(const NGramModel& m) {
  Scalar acc = 0.0;
  for (Index r = 0; r < m.num_contexts(); ++r)
    acc += entropy(softmax(LogitVector(m.logit_table().row(r).transpose())));
  return acc / static_cast<Scalar>(m.num_contexts());
}

}  // namespace

TEST_CASE("context indexing is mixed-radix over the bos-padded suffix") {
  const NGramModel order0 = NGramModel::uniform(4, 0);
  const std::vector<TokenId> any{1, 2, 3};
  CHECK(order0.context_index(any) == 0);
  CHECK(order0.context_index({}) == 0);

  const NGramModel order1 = NGramModel::uniform(4, 1);
  CHECK(order1.context_index(std::vector<TokenId>{0, 2, 3}) == 3);

  const NGramModel order2 = NGramModel::uniform(4, 2);
  CHECK(order2.context_index(std::vector<TokenId>{1, 2}) == 1 * 4 + 2);
  // Short context pads with bos (0 here) on the left.
  CHECK(order2.context_index(std::vector<TokenId>{3}) == 0 * 4 + 3);
  CHECK(order2.context_index({}) == 0);

  CHECK_THROWS_AS(order1.context_index(std::vector<TokenId>{7}), std::invalid_argument);
}

TEST_CASE("order-0 models ignore the context") {
  Rng rng(1);
  NGramModel m = NGramModel::uniform(5, 0);
  m.logit_table().row(0) << 1.0, 2.0, 3.0, 4.0, 5.0;
  const Vec a = predict_logits(m, std::vector<TokenId>{1, 4}).values();
  const Vec b = predict_logits(m, std::vector<TokenId>{}).values();
  CHECK(a == b);
}

TEST_CASE("random_teacher is seed-deterministic with a working entropy knob") {
  const NGramModel a = random_teacher(8, 1, 0.5, 99);
  const NGramModel b = random_teacher(8, 1, 0.5, 99);
  CHECK(a.logit_table() == b.logit_table());
  CHECK(a.logit_table() != random_teacher(8, 1, 0.5, 100).logit_table());

  // Very high concentration: rows are near uniform in total variation.
  const NGramModel flat = random_teacher(8, 1, 1e6, 5);
  const ProbVector uniform = ProbVector::uniform(8);
  for (Index r = 0; r < flat.num_contexts(); ++r) {
    const ProbVector row = softmax(predict_logits(flat, std::vector<TokenId>{
                                                            static_cast<TokenId>(r)}));
    CHECK(tv_distance(row, uniform) < 0.01);
  }

  // Peaked vs flat teachers, 256 rows each at vocab 16.
  const NGramModel peaked = random_teacher(16, 2, 0.1, 7);
  const NGramModel broad = random_teacher(16, 2, 10.0, 7);
  CHECK(mean_row_entropy(peaked) < mean_row_entropy(broad));
}

TEST_CASE("corpus_teacher counts transitions with add-lambda smoothing") {
  // One sequence that repeats token 0.
  Sequence zeros{{}, std::vector<TokenId>(16, 0), Origin::kCorpus};
  const NGramModel m0 = corpus_teacher({zeros}, 3, 1, 0.0);
  const ProbVector row0 = softmax(predict_logits(m0, std::vector<TokenId>{0}));
  CHECK(row0[0] > 0.999);

  // Unseen context with add-one smoothing is uniform.
  const NGramModel m1 = corpus_teacher({zeros}, 3, 1, 1.0);
  const ProbVector unseen = softmax(predict_logits(m1, std::vector<TokenId>{2}));
  for (Index i = 0; i < 3; ++i) CHECK(unseen[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // Alternating tokens: the chain structure is recovered. A dedicated bos
  // token keeps the sequence start out of the 0/1 rows.
  std::vector<TokenId> alt;
  for (int i = 0; i < 32; ++i) alt.push_back(i % 2);
  const NGramModel m2 =
      corpus_teacher({Sequence{{}, alt, Origin::kCorpus}}, 3, 1, 0.0, /*bos=*/2);
  CHECK(softmax(predict_logits(m2, std::vector<TokenId>{0}))[1] > 0.999);
  CHECK(softmax(predict_logits(m2, std::vector<TokenId>{1}))[0] > 0.999);

  CHECK_THROWS_AS(corpus_teacher({}, 3, 1, 0.0), std::invalid_argument);
}

TEST_CASE("corpus_teacher with smoothing has full support") {
  Sequence zeros{{}, std::vector<TokenId>(8, 0), Origin::kCorpus};
  const NGramModel m = corpus_teacher({zeros}, 4, 1, 0.5);
  for (Index r = 0; r < m.num_contexts(); ++r) {
    const ProbVector row = softmax(LogitVector(m.logit_table().row(r).transpose()));
    for (Index i = 0; i < 4; ++i) CHECK(row[i] > 0.0);
  }
}

TEST_CASE("generate: degenerate, greedy, and low-temperature behavior") {
  NGramModel sure = NGramModel::uniform(3, 1);
  for (Index r = 0; r < 3; ++r) sure.logit_table().row(r) << 0.0, -30.0, -30.0;
  Rng rng(2);
  const Sequence s =
      generate(sure, std::vector<TokenId>{1}, 8, GenMode::kSample, 1.0, rng, Origin::kTeacher);
  CHECK(s.completion == std::vector<TokenId>(8, 0));
  CHECK(s.origin == Origin::kTeacher);
  CHECK(s.prompt == std::vector<TokenId>{1});

  const NGramModel m = random_teacher(6, 1, 0.3, 11);
  Rng r1(1), r2(999);
  const Sequence g1 =
      generate(m, std::vector<TokenId>{2}, 12, GenMode::kGreedy, 1.0, r1, Origin::kStudent);
  const Sequence g2 =
      generate(m, std::vector<TokenId>{2}, 12, GenMode::kGreedy, 1.0, r2, Origin::kStudent);
  CHECK(g1.completion == g2.completion);

  // Sampling at temperature 1e-4 on a peaked model behaves like greedy.
  int agree = 0;
  Rng sample_rng(3);
  for (int t = 0; t < 1000; ++t) {
    const Sequence sampled = generate(m, std::vector<TokenId>{2}, 12, GenMode::kSample, 1e-4,
                                      sample_rng, Origin::kStudent);
    agree += sampled.completion == g1.completion ? 1 : 0;
  }
  CHECK(agree >= 999);

  CHECK_THROWS_AS(
      generate(m, std::vector<TokenId>{2}, 0, GenMode::kGreedy, 1.0, r1, Origin::kStudent),
      std::invalid_argument);
}

TEST_CASE("sgd applies the plain rule and leaves untouched rows alone") {
  NGramModel m = random_teacher(4, 1, 1.0, 3);
  const Mat before = m.logit_table();
  Optimizer opt{SgdConfig{0.1}};

  Vec g(4);
  g << 1.0, -2.0, 0.5, 0.25;
  opt.apply_grad(m, {{2, g}});
  CHECK(m.logit_table().row(2).transpose() == (before.row(2).transpose() - 0.1 * g).eval());
  for (Index r : {0, 1, 3}) CHECK(m.logit_table().row(r) == before.row(r));

  opt.apply_grad(m, {{1, Vec::Zero(4)}});
  CHECK(m.logit_table().row(1) == before.row(1));

  CHECK_THROWS_AS(opt.apply_grad(m, {{0, Vec::Zero(3)}}), std::invalid_argument);
  Vec bad = Vec::Zero(4);
  bad[1] = std::nan("");
  CHECK_THROWS_AS(opt.apply_grad(m, {{0, bad}}), NumericError);
}

TEST_CASE("adam matches a scalar reference trajectory and fights the gradient sign") {
  NGramModel m = NGramModel::uniform(2, 0);
  const AdamConfig cfg;
  Optimizer opt{cfg};
  Vec g(2);
  g << 0.3, -0.3;

  // Scalar Adam on a constant gradient, bias-corrected.
  Scalar theta = 0.0, mm = 0.0, vv = 0.0;
  Scalar prev = 0.0;
  for (int t = 1; t <= 100; ++t) {
    opt.apply_grad(m, {{0, g}});
    mm = cfg.beta1 * mm + (1 - cfg.beta1) * 0.3;
    vv = cfg.beta2 * vv + (1 - cfg.beta2) * 0.09;
    const Scalar mhat = mm / (1 - std::pow(cfg.beta1, t));
    const Scalar vhat = vv / (1 - std::pow(cfg.beta2, t));
    theta -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    CHECK(m.logit_table()(0, 0) == doctest::Approx(theta).epsilon(1e-12));
    CHECK(m.logit_table()(0, 0) < prev);        // monotone against the gradient
    CHECK(m.logit_table()(0, 1) == -m.logit_table()(0, 0));
    prev = m.logit_table()(0, 0);
  }
}

TEST_CASE("model files round-trip bit-exactly") {
  const NGramModel m = random_teacher(6, 2, 0.7, 21);
  const auto path = temp_file("selectkd_model_roundtrip.bin");
  save_model(m, path);
  const NGramModel loaded = load_model(path);
  CHECK(loaded.vocab_size() == m.vocab_size());
  CHECK(loaded.order() == m.order());
  CHECK(loaded.bos_token() == m.bos_token());
  CHECK(loaded.logit_table() == m.logit_table());  // bitwise: no tolerance

  // Writing the same model twice produces identical bytes.
  const auto path2 = temp_file("selectkd_model_roundtrip2.bin");
  save_model(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {});
  const std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);

  std::ofstream corrupt(path, std::ios::binary);
  corrupt << "NOTMAGIC garbage";
  corrupt.close();
  CHECK_THROWS_AS(load_model(path), std::runtime_error);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("sequence origin labels are preserved") {
  const NGramModel m = random_teacher(4, 1, 1.0, 5);
  Rng rng(1);
  CHECK(generate(m, std::vector<TokenId>{0}, 4, GenMode::kSample, 1.0, rng, Origin::kTeacher)
            .origin == Origin::kTeacher);
  CHECK(generate(m, std::vector<TokenId>{0}, 4, GenMode::kSample, 1.0, rng, Origin::kStudent)
            .origin == Origin::kStudent);
}
