#include <doctest.h>

#include <cmath>
#include <random>

#include "cases.hpp"
#include "oracles.hpp"
#include "pcev/embedding.hpp"
#include "pcev/errors.hpp"
#include "pcev/metrics.hpp"

using namespace pcev;

TEST_SUITE("metrics") {
  TEST_CASE("normalize_answer folds case, punctuation and newlines") {
    CHECK(normalize_answer("Hello,\nWorld!") == std::vector<std::string>{"hello", "world"});
    CHECK(normalize_answer("  ").empty());
    CHECK(normalize_answer("Café au lait") == std::vector<std::string>{"café", "au", "lait"});
  }

  TEST_CASE("exact match hand cases") {
    for (const auto& c : cases::em_cases()) {
      INFO(c.name);
      CHECK(exact_match(c.prediction, c.references, c.config) == c.expected);
    }
  }

  TEST_CASE("last number extraction") {
    CHECK(last_number("400 / 80 = <<400/80=5>>5 #### 5") == 5.0);
    CHECK(last_number("#### 1,250") == 1250.0);
    CHECK(last_number("A-1 wins") == 1.0);
    CHECK_FALSE(last_number("none").has_value());
  }

  TEST_CASE("rouge matches the brute-force oracle") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 300; ++trial) {
      const auto a = oracle::random_tokens(rng, 12, 6);
      const auto b = oracle::random_tokens(rng, 12, 6);
      for (std::size_t n : {1u, 2u}) {
        const auto got = rouge_n(a, b, n);
        const auto want = oracle::rouge_n(a, b, n);
        CHECK(got.precision == want.p);
        CHECK(got.recall == want.r);
        CHECK(got.f1 == want.f);
      }
      const auto got = rouge_l(a, b);
      const auto want = oracle::rouge_l(a, b);
      CHECK(got.precision == want.p);
      CHECK(got.recall == want.r);
      CHECK(got.f1 == want.f);
    }
  }

  TEST_CASE("rouge on text uses normalized tokens") {
    const auto r = rouge("The cat sat.", "the CAT sat on the mat");
    CHECK(r.rouge1.precision == doctest::Approx(1.0));
    CHECK(r.rouge1.recall == doctest::Approx(0.5));
    CHECK(r.rougeL.recall == doctest::Approx(0.5));
    CHECK(rouge("", "x").rouge1.f1 == 0.0);
  }

  TEST_CASE("bertscore matches the double-loop oracle") {
    HashEmbedder emb(32, 7);
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      auto a = oracle::random_tokens(rng, 12, 20);
      auto b = oracle::random_tokens(rng, 12, 20);
      if (a.empty()) a.push_back("w0");
      if (b.empty()) b.push_back("w1");
      const auto pa = emb.embed(oracle::join(a));
      const auto pb = emb.embed(oracle::join(b));
      const auto got = bert_score_vectors(pa, pb);
      const auto want = oracle::bert_score(pa.vectors, pb.vectors);
      CHECK(std::abs(got.precision - want.p) <= 1e-9);
      CHECK(std::abs(got.recall - want.r) <= 1e-9);
      CHECK(std::abs(got.f1 - want.f) <= 1e-9);
    }
  }

  TEST_CASE("bertscore of a text with itself is one") {
    HashEmbedder emb;
    const auto s = bert_score("Anna Vissi married Nikos Karvelas in 1983.",
                              "Anna Vissi married Nikos Karvelas in 1983.", emb);
    CHECK(std::abs(s.f1 - 1.0) <= 1e-6);
    CHECK(std::abs(s.precision - 1.0) <= 1e-6);
  }

  TEST_CASE("bertscore flags empty input") {
    HashEmbedder emb;
    const auto s = bert_score("  ", "text", emb);
    CHECK(s.empty_input);
    CHECK(s.f1 == 0.0);
  }

  TEST_CASE("synonyms embed identically") {
    HashEmbedder emb;
    emb.add_synonyms({"wed", "married"});
    CHECK(bert_score("she wed him", "she married him", emb).f1 == doctest::Approx(1.0));
  }

  TEST_CASE("idf weighting changes the average") {
    HashEmbedder emb;
    const std::map<std::string, double> idf{{"the", 0.0}, {"cat", 1.0}};
    const auto s = bert_score("the cat", "cat", emb, &idf);
    CHECK(s.idf_weighted);
    CHECK(s.precision == doctest::Approx(1.0));
  }

  TEST_CASE("compression stats and relative change") {
    CHECK(compression_stats(1515, 65).reported_rate() == doctest::Approx(23.3));
    CHECK(compression_stats(6424, 27).reported_rate() == doctest::Approx(237.9));
    CHECK_THROWS_AS(compression_stats(10, 0), InvalidArgument);
    CHECK(relative_change(0.297, 0.664).rounded == -55);
    CHECK(relative_change(0.5, 0.4).rounded == 25);
    CHECK_THROWS_AS(relative_change(0.5, 0.0), InvalidArgument);
  }

  TEST_CASE("flops estimate matches the layer-wise oracle") {
    // Hand count: per position and layer, Q/K/V/O 4 * 2*8*8 = 512 plus
    // FFN 2 * 2*8*16 = 512; two layers and an LM head of 2*8*32 = 512
    // give 2560 per position, 10240 over 4 positions. Attention adds
    // 2 layers * 4*8*p for p = 1..4, i.e. 640.
    ModelSpec spec;
    spec.n_layers = 2;
    spec.d_model = 8;
    spec.n_heads = 2;
    spec.d_ff = 16;
    spec.vocab_size = 32;
    CHECK(estimate_flops(spec, 3, 1) == 10880.0);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      ModelSpec s;
      s.n_heads = 1 + rng() % 4;
      s.n_kv_heads = s.n_heads % 2 == 0 ? s.n_heads / 2 : s.n_heads;
      s.d_model = s.n_heads * (1 + rng() % 8);
      s.n_layers = 1 + rng() % 4;
      s.d_ff = 1 + rng() % 40;
      s.vocab_size = 1 + rng() % 100;
      s.ffn_matrices = 2 + rng() % 2;
      const std::size_t prompt = rng() % 30, gen = rng() % 10;
      const oracle::ToySpec toy{s.n_layers, s.d_model, s.n_heads, s.kv_heads(),
                                s.d_ff,     s.vocab_size, s.ffn_matrices};
      CHECK(estimate_flops(s, prompt, gen) == oracle::flops(toy, prompt, gen));
    }
  }

  TEST_CASE("mistral spec validates and counts its parameters") {
    const auto spec = mistral_7b_spec();
    CHECK_NOTHROW(spec.validate());
    CHECK(spec.derived_params() > 7'000'000'000ULL);
    CHECK(spec.derived_params() < 7'500'000'000ULL);
    ModelSpec wrong = spec;
    wrong.n_params = 3'000'000'000ULL;
    CHECK_THROWS_AS(wrong.validate(), InvalidArgument);
  }
}
