#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pss/io.hpp"
#include "pss/rng.hpp"
#include "pss/textproc.hpp"
#include "pss/topics.hpp"

namespace pss::svm {

/// Cumulative feature stages of the baseline: unigram counts, topic
/// proportions, topic differences vs the predecessor page, and a prefixed
/// copy of the predecessor page's features.
struct FeatureSpec {
  bool use_unigrams = true;
  bool use_topics = false;
  bool use_topic_diff = false;
  bool use_predecessor = false;

  void validate() const {
    if (!use_unigrams && !use_topics && !use_topic_diff && !use_predecessor)
      throw std::invalid_argument("FeatureSpec: at least one feature group required");
  }

  bool needs_topic_model() const { return use_topics || use_topic_diff; }

  /// Parses the comma-separated flag form, e.g. "unigrams,topics,topicdiff".
  static FeatureSpec parse(const std::string& s) {
    FeatureSpec spec;
    spec.use_unigrams = false;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) {
      if (part == "unigrams") spec.use_unigrams = true;
      else if (part == "topics") spec.use_topics = true;
      else if (part == "topicdiff") spec.use_topic_diff = true;
      else if (part == "prev") spec.use_predecessor = true;
      else if (!part.empty())
        throw std::invalid_argument("unknown feature group: " + part);
    }
    spec.validate();
    return spec;
  }

  std::string format() const {
    std::string out;
    auto add = [&out](const char* name) {
      if (!out.empty()) out.push_back(',');
      out += name;
    };
    if (use_unigrams) add("unigrams");
    if (use_topics) add("topics");
    if (use_topic_diff) add("topicdiff");
    if (use_predecessor) add("prev");
    return out;
  }

  std::string format_filename() const {
    std::string out = format();
    for (char& c : out)
      if (c == ',') c = '_';
    return out;
  }
};

/// Precomputed per-page inputs for feature assembly, supplied in stream order.
struct PageFeatureInputs {
  textproc::SparseVector counts;  // unigram counts with raw stem keys
  std::vector<double> theta;      // topic proportions (may be empty if unused)
};

namespace detail {

inline void append_page_block(textproc::SparseVector& out, const std::string& prefix,
                              const std::vector<PageFeatureInputs>& pages, std::size_t page_index,
                              const FeatureSpec& spec) {
  const PageFeatureInputs& page = pages[page_index];
  if (spec.use_unigrams) {
    for (const auto& [stem, count] : page.counts.entries) out.set(prefix + "W:" + stem, count);
  }
  if (spec.use_topics) {
    if (page.theta.empty())
      throw std::invalid_argument("assemble_features: topics requested but theta missing");
    for (std::size_t k = 0; k < page.theta.size(); ++k)
      out.set(prefix + "T:" + std::to_string(k), page.theta[k]);
  }
  if (spec.use_topic_diff) {
    double hell = 1.0, cos = 1.0;
    if (page_index > 0) {
      const auto& prev = pages[page_index - 1];
      if (page.theta.empty() || prev.theta.empty())
        throw std::invalid_argument("assemble_features: topic differences need theta vectors");
      hell = topics::hellinger(prev.theta, page.theta);
      cos = topics::cosine_distance(prev.theta, page.theta);
    }
    out.set(prefix + "D:hell", hell);
    out.set(prefix + "D:cos", cos);
  }
}

}  // namespace detail

/// Assembles the staged feature vector for one page. The predecessor block is
/// a copy of the previous page's own groups (without its predecessor block)
/// under ids prefixed PREV#; the first page of a stream has no PREV# block and
/// maximal-change distances D:hell = D:cos = 1.
inline textproc::SparseVector assemble_features(const std::vector<PageFeatureInputs>& pages,
                                                std::size_t page_index, const FeatureSpec& spec) {
  spec.validate();
  if (page_index >= pages.size())
    throw std::out_of_range("assemble_features: page_index out of range");
  textproc::SparseVector out;
  detail::append_page_block(out, "", pages, page_index, spec);
  if (spec.use_predecessor && page_index > 0) {
    FeatureSpec base = spec;
    base.use_predecessor = false;
    detail::append_page_block(out, "PREV#", pages, page_index - 1, base);
  }
  out.finalize();
  return out;
}

// --- linear SVM --------------------------------------------------------------

struct LinearSvmModel {
  std::map<std::string, double> weights;  // sorted feature dictionary snapshot
  double bias = 0.0;
  double c = 1.0;

  double score(const textproc::SparseVector& x) const {
    double s = bias;
    for (const auto& [id, v] : x.entries) {
      auto it = weights.find(id);
      if (it != weights.end()) s += it->second * v;
    }
    return s;
  }

  /// ND iff score > 0; an exact zero falls back to SD.
  bool predict_nd(const textproc::SparseVector& x) const { return score(x) > 0.0; }

  void save(const std::filesystem::path& path) const {
    std::ostringstream out;
    char buf[64];
    for (const auto& [id, w] : weights) {
      std::snprintf(buf, sizeof(buf), "%.17g", w);
      out << id << '\t' << buf << '\n';
    }
    std::snprintf(buf, sizeof(buf), "%.17g", bias);
    out << "#bias\t" << buf << '\n';
    io::write_file_text(path, out.str());
  }

  static LinearSvmModel load(const std::filesystem::path& path) {
    LinearSvmModel m;
    std::istringstream in(io::read_file_text(path));
    std::string line;
    bool saw_bias = false;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::size_t tab = line.find('\t');
      if (tab == std::string::npos)
        throw std::runtime_error("malformed model line in " + path.string());
      std::string id = line.substr(0, tab);
      double value = std::stod(line.substr(tab + 1));
      if (id == "#bias") {
        m.bias = value;
        saw_bias = true;
      } else {
        m.weights[id] = value;
      }
    }
    if (!saw_bias) throw std::runtime_error("model file missing #bias line: " + path.string());
    return m;
  }
};

struct SvmTrainOptions {
  double c = 1.0;
  double tolerance = 0.1;
  int max_epochs = 1000;
  std::uint64_t seed = 1;
  bool add_bias = true;
};

struct SvmTrainLog {
  std::vector<double> dual_objective;  // one entry per completed epoch
  int epochs = 0;
  double final_max_violation = 0.0;
};

/// Dual coordinate descent for the L2-regularized L1-loss SVM. Examples are
/// visited in a freshly seeded random permutation each epoch; the bias is an
/// augmented always-1 feature so the solver stays uniform.
inline LinearSvmModel train_svm(const std::vector<textproc::SparseVector>& examples,
                                const std::vector<int>& labels, const SvmTrainOptions& options,
                                SvmTrainLog* log = nullptr) {
  if (examples.size() != labels.size() || examples.empty())
    throw std::invalid_argument("train_svm: examples/labels size mismatch or empty");
  bool has_pos = false, has_neg = false;
  for (int y : labels) {
    if (y == 1) has_pos = true;
    else if (y == -1) has_neg = true;
    else throw std::invalid_argument("train_svm: labels must be +1 or -1");
  }
  if (!has_pos || !has_neg)
    throw std::invalid_argument("train_svm: need at least one example of each class");
  if (options.c <= 0.0) throw std::invalid_argument("train_svm: C must be positive");

  // Deterministic dense interning: sorted union of all feature ids.
  std::map<std::string, int> index;
  for (const auto& x : examples)
    for (const auto& [id, v] : x.entries) index.emplace(id, 0);
  int n_features = 0;
  for (auto& [id, idx] : index) idx = n_features++;
  const int bias_idx = options.add_bias ? n_features : -1;
  const int dim = n_features + (options.add_bias ? 1 : 0);

  struct Row {
    std::vector<std::pair<int, double>> x;
    double q = 0.0;  // squared norm
    int y = 0;
  };
  std::vector<Row> rows(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    Row& r = rows[i];
    r.y = labels[i];
    for (const auto& [id, v] : examples[i].entries) {
      r.x.emplace_back(index[id], v);
      r.q += v * v;
    }
    if (options.add_bias) {
      r.x.emplace_back(bias_idx, 1.0);
      r.q += 1.0;
    }
  }

  std::vector<double> w(static_cast<std::size_t>(dim), 0.0);
  std::vector<double> alpha(examples.size(), 0.0);
  std::vector<std::size_t> perm(examples.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(derive_seed(options.seed, "svm_train"));

  const double C = options.c;
  double max_pg = 0.0;
  int epoch = 0;
  for (; epoch < options.max_epochs; ++epoch) {
    rng.shuffle(perm);
    max_pg = 0.0;
    for (std::size_t pi : perm) {
      Row& r = rows[pi];
      if (r.q <= 0.0) {
        alpha[pi] = C;  // empty row: dual is linear in alpha_i, optimum at C
        continue;
      }
      double dot = 0.0;
      for (const auto& [j, v] : r.x) dot += w[static_cast<std::size_t>(j)] * v;
      double g = static_cast<double>(r.y) * dot - 1.0;
      double a = alpha[pi];
      double pg = g;
      if (a <= 0.0) pg = std::min(g, 0.0);
      else if (a >= C) pg = std::max(g, 0.0);
      max_pg = std::max(max_pg, std::fabs(pg));
      if (std::fabs(pg) > 1e-12) {
        double a_new = std::clamp(a - g / r.q, 0.0, C);
        double delta = (a_new - a) * static_cast<double>(r.y);
        if (delta != 0.0) {
          for (const auto& [j, v] : r.x) w[static_cast<std::size_t>(j)] += delta * v;
        }
        alpha[pi] = a_new;
      }
    }
    if (log) {
      double sum_alpha = 0.0;
      for (double a : alpha) sum_alpha += a;
      double w_norm2 = 0.0;
      for (double v : w) w_norm2 += v * v;
      log->dual_objective.push_back(sum_alpha - 0.5 * w_norm2);
    }
    if (max_pg < options.tolerance) {
      ++epoch;
      break;
    }
  }
  if (log) {
    log->epochs = epoch;
    log->final_max_violation = max_pg;
  }

  LinearSvmModel model;
  model.c = C;
  model.bias = options.add_bias ? w[static_cast<std::size_t>(bias_idx)] : 0.0;
  for (const auto& [id, idx] : index) model.weights[id] = w[static_cast<std::size_t>(idx)];
  return model;
}

/// ½·(‖w‖² [+ b² if the bias was trained as an augmented feature]) + C·Σ hinge.
inline double primal_objective(const LinearSvmModel& model,
                               const std::vector<textproc::SparseVector>& examples,
                               const std::vector<int>& labels, bool bias_regularized = true) {
  double reg = bias_regularized ? model.bias * model.bias : 0.0;
  for (const auto& [id, w] : model.weights) reg += w * w;
  double hinge = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i)
    hinge += std::max(0.0, 1.0 - static_cast<double>(labels[i]) * model.score(examples[i]));
  return 0.5 * reg + model.c * hinge;
}

}  // namespace pss::svm
