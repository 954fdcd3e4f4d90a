#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "oracles/reference.hpp"
#include "pss/topics.hpp"

using namespace pss::topics;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<int>> tiny_corpus() {
  // two clearly separated word groups
  return {
      {0, 1, 0, 2, 1}, {1, 2, 2, 0}, {0, 0, 1},
      {5, 6, 7, 5},    {6, 7, 7, 5}, {5, 5, 6, 6, 7},
  };
}

}  // namespace

TEST_CASE("theta follows the smoothed count formula") {
  TopicModel m;
  m.k = 2;
  m.alpha = 0.5;
  m.doc_topic = {{10, 0}};
  auto theta = theta_from_assignments(m, 0);
  REQUIRE(theta.size() == 2);
  CHECK(theta[0] == Catch::Approx(10.5 / 11.0).epsilon(1e-12));
  CHECK(theta[1] == Catch::Approx(0.5 / 11.0).epsilon(1e-12));
}

TEST_CASE("fit keeps every count table consistent") {
  auto docs = tiny_corpus();
  LdaOptions opt;
  opt.k = 2;
  opt.n_sweeps = 50;
  opt.seed = 9;
  auto m = fit_lda(docs, 8, opt);

  long long total_tokens = 0;
  for (const auto& d : docs) total_tokens += static_cast<long long>(d.size());

  long long tw_sum = 0, tt_sum = 0;
  for (int t = 0; t < m.k; ++t) {
    long long row = 0;
    for (int w = 0; w < m.vocab_size; ++w) {
      REQUIRE(m.tw(t, w) >= 0);
      row += m.tw(t, w);
    }
    CHECK(row == m.topic_total[static_cast<std::size_t>(t)]);
    tw_sum += row;
    tt_sum += m.topic_total[static_cast<std::size_t>(t)];
  }
  CHECK(tw_sum == total_tokens);
  CHECK(tt_sum == total_tokens);

  REQUIRE(m.doc_topic.size() == docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d) {
    long long row = 0;
    for (int t = 0; t < m.k; ++t) row += m.doc_topic[d][static_cast<std::size_t>(t)];
    CHECK(row == static_cast<long long>(docs[d].size()));
    CHECK(m.assignments[d].size() == docs[d].size());
  }
}

TEST_CASE("fit is deterministic per seed") {
  auto docs = tiny_corpus();
  LdaOptions opt;
  opt.k = 2;
  opt.n_sweeps = 40;
  opt.seed = 123;
  auto a = fit_lda(docs, 8, opt);
  auto b = fit_lda(docs, 8, opt);
  CHECK(a.assignments == b.assignments);
  CHECK(a.topic_word == b.topic_word);
}

TEST_CASE("fit validates its inputs") {
  LdaOptions opt;
  opt.k = 1;
  CHECK_THROWS(fit_lda(tiny_corpus(), 8, opt));  // K >= 2 invariant
  opt.k = 2;
  CHECK_THROWS(fit_lda({{0, 9}}, 5, opt));  // token id out of range
  CHECK_THROWS(fit_lda({}, 5, opt));
}

TEST_CASE("theta inference stays on the simplex and is seeded") {
  auto docs = tiny_corpus();
  LdaOptions opt;
  opt.k = 2;
  opt.n_sweeps = 60;
  opt.seed = 5;
  auto m = fit_lda(docs, 8, opt);

  auto theta = infer_theta(m, {0, 1, 2, 0}, 77);
  REQUIRE(theta.size() == 2);
  double sum = 0.0;
  for (double v : theta) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == Catch::Approx(1.0).epsilon(1e-9));
  CHECK(infer_theta(m, {0, 1, 2, 0}, 77) == theta);

  auto uniform = infer_theta(m, {}, 1);
  CHECK(uniform == std::vector<double>{0.5, 0.5});
}

TEST_CASE("inference never mutates the fitted model") {
  auto docs = tiny_corpus();
  LdaOptions opt;
  opt.k = 2;
  opt.n_sweeps = 30;
  opt.seed = 2;
  auto m = fit_lda(docs, 8, opt);
  auto counts_before = m.topic_word;
  (void)infer_theta(m, {0, 5, 6, 1, 2}, 4);
  CHECK(m.topic_word == counts_before);
}

TEST_CASE("model serialization round-trips") {
  auto docs = tiny_corpus();
  LdaOptions opt;
  opt.k = 3;
  opt.n_sweeps = 25;
  opt.seed = 31;
  auto m = fit_lda(docs, 8, opt);

  auto path = fs::temp_directory_path() / "pss_lda_test.bin";
  m.save(path);
  auto loaded = TopicModel::load(path);
  CHECK(loaded.k == m.k);
  CHECK(loaded.alpha == m.alpha);
  CHECK(loaded.beta == m.beta);
  CHECK(loaded.seed == m.seed);
  CHECK(loaded.vocab_size == m.vocab_size);
  CHECK(loaded.topic_word == m.topic_word);
  CHECK(loaded.topic_total == m.topic_total);
  CHECK_FALSE(loaded.has_training_state());
  // fold-in works identically on the reloaded model
  CHECK(infer_theta(loaded, {0, 1, 5}, 9) == infer_theta(m, {0, 1, 5}, 9));
  fs::remove(path);
}

TEST_CASE("hellinger matches the direct formula and its frozen value") {
  std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
  CHECK(hellinger(p, q) == Catch::Approx(0.5411961).margin(1e-5));
  CHECK(hellinger(p, q) == Catch::Approx(oracle::hellinger_direct(p, q)).epsilon(1e-12));
  CHECK(hellinger(p, p) == 0.0);
  CHECK(hellinger({1.0, 0.0}, {0.0, 1.0}) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("cosine distance matches the direct formula and its frozen value") {
  std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
  CHECK(cosine_distance(p, q) == Catch::Approx(0.2928932).margin(1e-5));
  CHECK(cosine_distance(p, q) == Catch::Approx(oracle::cosine_distance_direct(p, q)).epsilon(1e-9));
  CHECK(cosine_distance(p, p) == Catch::Approx(0.0).margin(1e-12));
  CHECK(cosine_distance({1.0, 0.0}, {0.0, 1.0}) == Catch::Approx(1.0).margin(1e-12));
  CHECK_THROWS(cosine_distance({0.0, 0.0}, {0.5, 0.5}));
}

TEST_CASE("distances are symmetric and bounded on the simplex") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(4), q(4);
    double sp = 0.0, sq = 0.0;
    for (int i = 0; i < 4; ++i) {
      p[static_cast<std::size_t>(i)] = u(rng) + 1e-9;
      q[static_cast<std::size_t>(i)] = u(rng) + 1e-9;
      sp += p[static_cast<std::size_t>(i)];
      sq += q[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 4; ++i) {
      p[static_cast<std::size_t>(i)] /= sp;
      q[static_cast<std::size_t>(i)] /= sq;
    }
    double h = hellinger(p, q), c = cosine_distance(p, q);
    CHECK(h == Catch::Approx(hellinger(q, p)).epsilon(1e-12));
    CHECK(c == Catch::Approx(cosine_distance(q, p)).epsilon(1e-12));
    CHECK(h >= 0.0);
    CHECK(h <= 1.0 + 1e-12);
    CHECK(c >= -1e-12);
    CHECK(c <= 1.0 + 1e-12);
  }
}

TEST_CASE("hellinger satisfies the triangle inequality on random triples") {
  std::mt19937 rng(29);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto sample = [&] {
    std::vector<double> p(3);
    double s = 0.0;
    for (auto& v : p) {
      v = u(rng) + 1e-9;
      s += v;
    }
    for (auto& v : p) v /= s;
    return p;
  };
  for (int trial = 0; trial < 200; ++trial) {
    auto a = sample(), b = sample(), c = sample();
    CHECK(hellinger(a, c) <= hellinger(a, b) + hellinger(b, c) + 1e-12);
  }
}

TEST_CASE("topic recovery separates disjoint vocabularies") {
  auto corpus = oracle::make_recovery_corpus(60, 30, 99);
  LdaOptions opt;
  opt.k = 3;
  opt.alpha = 0.1;
  opt.beta = 0.01;
  opt.n_sweeps = 120;
  opt.seed = 13;
  auto m = fit_lda(corpus.docs, corpus.vocab_size, opt);
  std::vector<std::vector<double>> thetas;
  for (std::size_t d = 0; d < corpus.docs.size(); ++d)
    thetas.push_back(theta_from_assignments(m, d));
  int hit = oracle::count_recovered(thetas, corpus.topic_of_doc, 0.7);
  CHECK(hit >= 54);  // 90% of 60
}
