#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pss/io.hpp"
#include "pss/rng.hpp"

namespace pss::topics {

inline constexpr char kLdaMagic[9] = "PSSLDA01";

struct LdaOptions {
  int k = 50;
  double alpha = -1.0;  // <= 0 means the default 50/K
  double beta = 0.01;
  int n_sweeps = 1000;
  int fold_in_sweeps = 50;
  std::uint64_t seed = 1;

  double resolved_alpha() const { return alpha > 0.0 ? alpha : 50.0 / k; }
};

/// Fitted topic model. The topic-word table is what gets serialized; the
/// per-document state exists only for models fitted in-process and lets
/// training pages reuse their Gibbs assignments directly.
struct TopicModel {
  int k = 0;
  int vocab_size = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  int fold_in_sweeps = 50;

  std::vector<std::int64_t> topic_word;   // [topic * vocab_size + word]
  std::vector<std::int64_t> topic_total;  // [topic]

  std::vector<std::vector<int>> doc_topic;    // per training doc: K counts
  std::vector<std::vector<int>> assignments;  // per training doc: token topics

  bool has_training_state() const { return !doc_topic.empty(); }

  std::int64_t tw(int topic, int word) const {
    return topic_word[static_cast<std::size_t>(topic) * static_cast<std::size_t>(vocab_size) +
                      static_cast<std::size_t>(word)];
  }

  void save(const std::filesystem::path& path) const {
    io::BinaryWriter w(path);
    w.magic(kLdaMagic);
    w.u32(static_cast<std::uint32_t>(k));
    w.f64(alpha);
    w.f64(beta);
    w.u32(static_cast<std::uint32_t>(vocab_size));
    w.u64(seed);
    for (std::int64_t c : topic_word) w.u64(static_cast<std::uint64_t>(c));
    w.close();
  }

  static TopicModel load(const std::filesystem::path& path) {
    io::BinaryReader r(path);
    r.expect_magic(kLdaMagic);
    TopicModel m;
    m.k = static_cast<int>(r.u32());
    m.alpha = r.f64();
    m.beta = r.f64();
    m.vocab_size = static_cast<int>(r.u32());
    m.seed = r.u64();
    if (m.k < 2 || m.vocab_size < 1)
      throw std::runtime_error("topic model header invalid in " + path.string());
    std::size_t cells = static_cast<std::size_t>(m.k) * static_cast<std::size_t>(m.vocab_size);
    m.topic_word.resize(cells);
    for (std::size_t i = 0; i < cells; ++i) m.topic_word[i] = static_cast<std::int64_t>(r.u64());
    m.topic_total.assign(static_cast<std::size_t>(m.k), 0);
    for (int t = 0; t < m.k; ++t)
      for (int w = 0; w < m.vocab_size; ++w) m.topic_total[static_cast<std::size_t>(t)] += m.tw(t, w);
    return m;
  }
};

namespace detail {

inline int sample_topic(const std::vector<double>& weights, double total, Rng& rng) {
  double u = rng.uniform() * total;
  double acc = 0.0;
  int last = static_cast<int>(weights.size()) - 1;
  for (int t = 0; t <= last; ++t) {
    acc += weights[static_cast<std::size_t>(t)];
    if (u < acc) return t;
  }
  return last;  // guards against accumulated rounding at u ~ total
}

}  // namespace detail

/// Collapsed Gibbs sampling with pages as pseudo-documents. Deterministic for
/// a fixed corpus and seed: a single sequential sampler visits documents and
/// tokens in order.
inline TopicModel fit_lda(const std::vector<std::vector<int>>& docs, int vocab_size,
                          const LdaOptions& options) {
  if (docs.empty()) throw std::invalid_argument("fit_lda: empty corpus");
  if (options.k < 2) throw std::invalid_argument("fit_lda: K must be >= 2");
  if (vocab_size < 1) throw std::invalid_argument("fit_lda: vocabulary is empty");
  double alpha = options.resolved_alpha();
  if (alpha <= 0.0 || options.beta <= 0.0)
    throw std::invalid_argument("fit_lda: hyperparameters must be positive");

  TopicModel m;
  m.k = options.k;
  m.vocab_size = vocab_size;
  m.alpha = alpha;
  m.beta = options.beta;
  m.seed = options.seed;
  m.fold_in_sweeps = options.fold_in_sweeps;
  const int K = m.k;
  const std::size_t n_docs = docs.size();
  m.topic_word.assign(static_cast<std::size_t>(K) * static_cast<std::size_t>(vocab_size), 0);
  m.topic_total.assign(static_cast<std::size_t>(K), 0);
  m.doc_topic.assign(n_docs, std::vector<int>(static_cast<std::size_t>(K), 0));
  m.assignments.resize(n_docs);

  for (const auto& doc : docs)
    for (int w : doc)
      if (w < 0 || w >= vocab_size)
        throw std::invalid_argument("fit_lda: token id out of vocabulary range");

  Rng rng(derive_seed(options.seed, "lda_fit"));

  auto cell = [&m](int topic, int word) -> std::int64_t& {
    return m.topic_word[static_cast<std::size_t>(topic) * static_cast<std::size_t>(m.vocab_size) +
                        static_cast<std::size_t>(word)];
  };

  for (std::size_t d = 0; d < n_docs; ++d) {
    m.assignments[d].resize(docs[d].size());
    for (std::size_t i = 0; i < docs[d].size(); ++i) {
      int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
      m.assignments[d][i] = t;
      ++m.doc_topic[d][static_cast<std::size_t>(t)];
      ++cell(t, docs[d][i]);
      ++m.topic_total[static_cast<std::size_t>(t)];
    }
  }

  const double v_beta = static_cast<double>(vocab_size) * m.beta;
  std::vector<double> weights(static_cast<std::size_t>(K));
  for (int sweep = 0; sweep < options.n_sweeps; ++sweep) {
    for (std::size_t d = 0; d < n_docs; ++d) {
      auto& dt = m.doc_topic[d];
      for (std::size_t i = 0; i < docs[d].size(); ++i) {
        int w = docs[d][i];
        int old_t = m.assignments[d][i];
        --dt[static_cast<std::size_t>(old_t)];
        --cell(old_t, w);
        --m.topic_total[static_cast<std::size_t>(old_t)];
        double total = 0.0;
        for (int t = 0; t < K; ++t) {
          double p = (static_cast<double>(dt[static_cast<std::size_t>(t)]) + alpha) *
                     (static_cast<double>(cell(t, w)) + m.beta) /
                     (static_cast<double>(m.topic_total[static_cast<std::size_t>(t)]) + v_beta);
          weights[static_cast<std::size_t>(t)] = p;
          total += p;
        }
        int new_t = detail::sample_topic(weights, total, rng);
        m.assignments[d][i] = new_t;
        ++dt[static_cast<std::size_t>(new_t)];
        ++cell(new_t, w);
        ++m.topic_total[static_cast<std::size_t>(new_t)];
      }
    }
  }
  return m;
}

/// θ_k = (n_dk + α) / (N_d + Kα) for a training document of the fitted model.
inline std::vector<double> theta_from_assignments(const TopicModel& m, std::size_t doc_index) {
  if (doc_index >= m.doc_topic.size())
    throw std::out_of_range("theta_from_assignments: no training state for document");
  const auto& dt = m.doc_topic[doc_index];
  double n_d = 0.0;
  for (int c : dt) n_d += static_cast<double>(c);
  std::vector<double> theta(static_cast<std::size_t>(m.k));
  double denom = n_d + static_cast<double>(m.k) * m.alpha;
  for (int t = 0; t < m.k; ++t)
    theta[static_cast<std::size_t>(t)] = (static_cast<double>(dt[static_cast<std::size_t>(t)]) + m.alpha) / denom;
  return theta;
}

/// Fold-in inference for an unseen page: the topic-word table stays frozen and
/// only the page's own topic counts are resampled. The caller supplies the rng
/// seed, typically derived from (model seed, stream id, page index), so pages
/// can be inferred independently and still deterministically.
inline std::vector<double> infer_theta(const TopicModel& m, const std::vector<int>& token_ids,
                                       std::uint64_t rng_seed) {
  const int K = m.k;
  std::vector<int> in_vocab;
  in_vocab.reserve(token_ids.size());
  for (int w : token_ids)
    if (w >= 0 && w < m.vocab_size) in_vocab.push_back(w);

  std::vector<double> theta(static_cast<std::size_t>(K));
  double n_d = static_cast<double>(in_vocab.size());
  double denom = n_d + static_cast<double>(K) * m.alpha;
  if (in_vocab.empty()) {
    for (auto& v : theta) v = 1.0 / static_cast<double>(K);
    return theta;
  }

  Rng rng(rng_seed);
  std::vector<int> dt(static_cast<std::size_t>(K), 0);
  std::vector<int> assign(in_vocab.size());
  for (std::size_t i = 0; i < in_vocab.size(); ++i) {
    int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
    assign[i] = t;
    ++dt[static_cast<std::size_t>(t)];
  }
  const double v_beta = static_cast<double>(m.vocab_size) * m.beta;
  std::vector<double> weights(static_cast<std::size_t>(K));
  for (int sweep = 0; sweep < m.fold_in_sweeps; ++sweep) {
    for (std::size_t i = 0; i < in_vocab.size(); ++i) {
      int w = in_vocab[i];
      --dt[static_cast<std::size_t>(assign[i])];
      double total = 0.0;
      for (int t = 0; t < K; ++t) {
        double p = (static_cast<double>(dt[static_cast<std::size_t>(t)]) + m.alpha) *
                   (static_cast<double>(m.tw(t, w)) + m.beta) /
                   (static_cast<double>(m.topic_total[static_cast<std::size_t>(t)]) + v_beta);
        weights[static_cast<std::size_t>(t)] = p;
        total += p;
      }
      int new_t = detail::sample_topic(weights, total, rng);
      assign[i] = new_t;
      ++dt[static_cast<std::size_t>(new_t)];
    }
  }
  for (int t = 0; t < K; ++t)
    theta[static_cast<std::size_t>(t)] = (static_cast<double>(dt[static_cast<std::size_t>(t)]) + m.alpha) / denom;
  return theta;
}

// --- topic-distribution distances --------------------------------------------

inline double hellinger(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size() || p.empty())
    throw std::invalid_argument("hellinger: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double d = std::sqrt(p[i]) - std::sqrt(q[i]);
    s += d * d;
  }
  return std::sqrt(s) / std::sqrt(2.0);
}

inline double cosine_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size() || p.empty())
    throw std::invalid_argument("cosine_distance: dimension mismatch");
  double dot = 0.0, np = 0.0, nq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    dot += p[i] * q[i];
    np += p[i] * p[i];
    nq += q[i] * q[i];
  }
  if (np == 0.0 || nq == 0.0)
    throw std::invalid_argument("cosine_distance: zero vector");
  double c = dot / (std::sqrt(np) * std::sqrt(nq));
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return 1.0 - c;
}

}  // namespace pss::topics
