#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pss/config.hpp"
#include "pss/corpus.hpp"
#include "pss/neural.hpp"
#include "pss/svm.hpp"
#include "pss/textproc.hpp"
#include "pss/topics.hpp"

namespace pss::pipeline {

// --- fusion vectors -----------------------------------------------------------

/// Layout of the fused page representation: three text blocks (current page
/// and its two predecessors), each [text penultimate | theta | Hellinger |
/// cosine], then the current page's image penultimate block.
struct FusionLayout {
  int text_dim = 256;
  int k = 50;
  int image_dim = 256;

  int block_dim() const { return text_dim + k + 2; }
  int total_dim() const { return 3 * block_dim() + image_dim; }
};

/// Builds the fusion vector for one page of a stream from per-page features.
/// A text block is a pure function of its page, so the current block of page p
/// reappears verbatim as the predecessor-1 block of page p+1; pages before the
/// stream start contribute zero blocks with distance slots at 1.
template <typename T>
std::vector<T> build_fusion_vector(const std::vector<std::vector<T>>& text_penult,
                                   const std::vector<std::vector<double>>& thetas,
                                   const std::vector<std::vector<T>>& image_penult,
                                   std::size_t page_index, const FusionLayout& layout) {
  std::size_t n = text_penult.size();
  if (thetas.size() != n || image_penult.size() != n)
    throw std::invalid_argument("build_fusion_vector: per-page feature lists disagree in length");
  if (page_index >= n) throw std::out_of_range("build_fusion_vector: page_index out of range");

  std::vector<T> out(static_cast<std::size_t>(layout.total_dim()), T{});
  for (int back = 0; back < 3; ++back) {
    std::size_t base = static_cast<std::size_t>(back) * static_cast<std::size_t>(layout.block_dim());
    long long q = static_cast<long long>(page_index) - back;
    if (q < 0) {
      out[base + static_cast<std::size_t>(layout.text_dim + layout.k)] = T{1};
      out[base + static_cast<std::size_t>(layout.text_dim + layout.k) + 1] = T{1};
      continue;
    }
    auto uq = static_cast<std::size_t>(q);
    if (text_penult[uq].size() != static_cast<std::size_t>(layout.text_dim) ||
        thetas[uq].size() != static_cast<std::size_t>(layout.k))
      throw std::invalid_argument("build_fusion_vector: feature sizes do not match layout");
    for (int i = 0; i < layout.text_dim; ++i)
      out[base + static_cast<std::size_t>(i)] = text_penult[uq][static_cast<std::size_t>(i)];
    for (int i = 0; i < layout.k; ++i)
      out[base + static_cast<std::size_t>(layout.text_dim + i)] =
          static_cast<T>(thetas[uq][static_cast<std::size_t>(i)]);
    double hell = 1.0, cos = 1.0;
    if (q > 0) {
      hell = topics::hellinger(thetas[uq - 1], thetas[uq]);
      cos = topics::cosine_distance(thetas[uq - 1], thetas[uq]);
    }
    out[base + static_cast<std::size_t>(layout.text_dim + layout.k)] = static_cast<T>(hell);
    out[base + static_cast<std::size_t>(layout.text_dim + layout.k) + 1] = static_cast<T>(cos);
  }
  std::size_t img_base = static_cast<std::size_t>(3 * layout.block_dim());
  if (image_penult[page_index].size() != static_cast<std::size_t>(layout.image_dim))
    throw std::invalid_argument("build_fusion_vector: image feature size does not match layout");
  for (int i = 0; i < layout.image_dim; ++i)
    out[img_base + static_cast<std::size_t>(i)] = image_penult[page_index][static_cast<std::size_t>(i)];
  return out;
}

// --- evaluation ---------------------------------------------------------------

/// Confusion counts and derived metrics with ND as the positive class.
struct MetricSet {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;
  double p_expected = 0.0;
  std::optional<double> kappa;  // empty when p_expected = 1 (kappa undefined)
  double fp_error_share = 0.0;
  double fn_error_share = 0.0;

  long long total() const { return tp + fp + fn + tn; }
};

inline MetricSet metrics_from_counts(long long tp, long long fp, long long fn, long long tn) {
  MetricSet m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  long long total = m.total();
  if (total <= 0) throw std::invalid_argument("metrics_from_counts: no evaluated pages");
  if (tp < 0 || fp < 0 || fn < 0 || tn < 0)
    throw std::invalid_argument("metrics_from_counts: negative count");
  double n = static_cast<double>(total);
  double p_o = static_cast<double>(tp + tn) / n;
  double pred_nd = static_cast<double>(tp + fp) / n;
  double gold_nd = static_cast<double>(tp + fn) / n;
  double pred_sd = static_cast<double>(fn + tn) / n;
  double gold_sd = static_cast<double>(fp + tn) / n;
  m.accuracy = p_o;
  m.p_expected = pred_nd * gold_nd + pred_sd * gold_sd;
  if (m.p_expected < 1.0) m.kappa = (p_o - m.p_expected) / (1.0 - m.p_expected);
  long long errors = fp + fn;
  if (errors > 0) {
    m.fp_error_share = static_cast<double>(fp) / static_cast<double>(errors);
    m.fn_error_share = static_cast<double>(fn) / static_cast<double>(errors);
  }
  return m;
}

/// Flat prediction/gold comparison; entries are 1 for ND, 0 for SD.
inline MetricSet compute_metrics(const std::vector<int>& pred_nd, const std::vector<int>& gold_nd) {
  if (pred_nd.size() != gold_nd.size())
    throw std::invalid_argument("compute_metrics: prediction/gold length mismatch");
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred_nd.size(); ++i) {
    bool p = pred_nd[i] != 0, g = gold_nd[i] != 0;
    if (p && g) ++tp;
    else if (p && !g) ++fp;
    else if (!p && g) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

// --- segmentation -------------------------------------------------------------

struct DocumentRange {
  int first_page = 0;
  int last_page = 0;
};

struct SegmentationResult {
  std::string stream_id;
  std::vector<DocumentRange> documents;
};

/// Splits a stream by its ND predictions; page 0 is forced ND so the output
/// always partitions the stream into contiguous documents.
inline SegmentationResult segment_stream(const std::string& stream_id,
                                         std::vector<int> nd_predictions) {
  if (nd_predictions.empty()) throw std::invalid_argument("segment_stream: empty stream");
  nd_predictions[0] = 1;
  SegmentationResult result;
  result.stream_id = stream_id;
  for (int p = 0; p < static_cast<int>(nd_predictions.size()); ++p) {
    if (nd_predictions[static_cast<std::size_t>(p)])
      result.documents.push_back(DocumentRange{p, p});
    else
      result.documents.back().last_page = p;
  }
  return result;
}

template <typename Predictor>
SegmentationResult segment_stream(const corpus::PageStream& stream, Predictor&& predict_nd) {
  std::vector<int> preds(stream.pages.size());
  for (std::size_t p = 0; p < stream.pages.size(); ++p)
    preds[p] = predict_nd(stream, p) ? 1 : 0;
  return segment_stream(stream.stream_id, std::move(preds));
}

inline std::vector<int> predictions_from_segments(const SegmentationResult& seg, int n_pages) {
  std::vector<int> preds(static_cast<std::size_t>(n_pages), 0);
  int expected = 0;
  for (const auto& doc : seg.documents) {
    if (doc.first_page != expected || doc.last_page < doc.first_page || doc.last_page >= n_pages)
      throw std::invalid_argument("segments for stream " + seg.stream_id +
                                  " do not partition its pages");
    preds[static_cast<std::size_t>(doc.first_page)] = 1;
    expected = doc.last_page + 1;
  }
  if (expected != n_pages)
    throw std::invalid_argument("segments for stream " + seg.stream_id +
                                " do not cover all pages");
  return preds;
}

inline void write_segments_csv(const std::vector<SegmentationResult>& segments,
                               const std::filesystem::path& path) {
  std::ostringstream out;
  out << "stream_id,doc_id,first_page,last_page\n";
  for (const auto& seg : segments)
    for (std::size_t d = 0; d < seg.documents.size(); ++d)
      out << seg.stream_id << ',' << d << ',' << seg.documents[d].first_page << ','
          << seg.documents[d].last_page << '\n';
  io::write_file_text(path, out.str());
}

inline std::vector<SegmentationResult> read_segments_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_file_text(path));
  std::string line;
  if (!std::getline(in, line) ||
      (line != "stream_id,doc_id,first_page,last_page" &&
       line != "stream_id,doc_id,first_page,last_page\r"))
    throw std::runtime_error("bad segments header in " + path.string());
  std::map<std::string, SegmentationResult> by_stream;
  std::vector<std::string> order;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = corpus::detail::split_csv_row(line);
    if (fields.size() != 4)
      throw std::runtime_error("bad segments row in " + path.string() + ": " + line);
    auto& seg = by_stream[fields[0]];
    if (seg.stream_id.empty()) {
      seg.stream_id = fields[0];
      order.push_back(fields[0]);
    }
    seg.documents.push_back(DocumentRange{std::stoi(fields[2]), std::stoi(fields[3])});
  }
  std::vector<SegmentationResult> out;
  out.reserve(order.size());
  for (const auto& id : order) out.push_back(std::move(by_stream[id]));
  return out;
}

// --- stream-level evaluation --------------------------------------------------

struct EvaluationReport {
  MetricSet overall;                          // all pages, page 0 forced ND
  std::optional<MetricSet> excluding_first;   // pages with index > 0
  std::vector<SegmentationResult> boundaries;
};

/// Evaluates per-stream ND predictions against the streams' gold labels.
/// Page 0 of each stream is forced ND before scoring (segmentation semantics),
/// and a secondary metric set excludes those forced instances.
inline EvaluationReport evaluate_streams(const std::vector<corpus::PageStream>& streams,
                                         std::vector<std::vector<int>> predictions) {
  if (streams.size() != predictions.size())
    throw std::invalid_argument("evaluate_streams: stream/prediction count mismatch");
  EvaluationReport report;
  std::vector<int> flat_pred, flat_gold, tail_pred, tail_gold;
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const auto& stream = streams[s];
    auto& preds = predictions[s];
    if (preds.size() != stream.pages.size())
      throw std::invalid_argument("evaluate_streams: prediction length mismatch for stream " +
                                  stream.stream_id);
    if (!stream.labeled())
      throw std::invalid_argument("evaluate_streams: stream " + stream.stream_id + " is unlabeled");
    preds[0] = 1;
    for (std::size_t p = 0; p < preds.size(); ++p) {
      int gold = stream.pages[p].label == corpus::Label::nd ? 1 : 0;
      flat_pred.push_back(preds[p]);
      flat_gold.push_back(gold);
      if (p > 0) {
        tail_pred.push_back(preds[p]);
        tail_gold.push_back(gold);
      }
    }
    report.boundaries.push_back(segment_stream(stream.stream_id, preds));
  }
  report.overall = compute_metrics(flat_pred, flat_gold);
  if (!tail_pred.empty()) report.excluding_first = compute_metrics(tail_pred, tail_gold);
  return report;
}

// --- prepared in-memory dataset -----------------------------------------------

struct PreparedData {
  textproc::Language language = textproc::Language::english;
  int min_count = 3;
  std::vector<corpus::PageStream> train, test;
  std::vector<std::vector<std::vector<std::string>>> train_stems, test_stems;
  textproc::Vocabulary vocab;  // built on training pages only

  std::size_t n_train_pages() const {
    std::size_t n = 0;
    for (const auto& s : train) n += s.pages.size();
    return n;
  }
  std::size_t n_test_pages() const {
    std::size_t n = 0;
    for (const auto& s : test) n += s.pages.size();
    return n;
  }
};

inline PreparedData prepare_data(corpus::DatasetSplit split, textproc::Language language,
                                 int min_count) {
  PreparedData d;
  d.language = language;
  d.min_count = min_count;
  d.train = std::move(split.train);
  d.test = std::move(split.test);
  auto stems_of = [&](const std::vector<corpus::PageStream>& streams) {
    std::vector<std::vector<std::vector<std::string>>> out;
    out.reserve(streams.size());
    for (const auto& s : streams) {
      std::vector<std::vector<std::string>> pages;
      pages.reserve(s.pages.size());
      for (const auto& p : s.pages) pages.push_back(textproc::preprocess(p.text, language));
      out.push_back(std::move(pages));
    }
    return out;
  };
  d.train_stems = stems_of(d.train);
  d.test_stems = stems_of(d.test);
  std::vector<std::vector<std::string>> train_pages;
  train_pages.reserve(d.n_train_pages());
  for (const auto& s : d.train_stems)
    for (const auto& p : s) train_pages.push_back(p);
  d.vocab = textproc::build_vocabulary(train_pages, min_count);
  return d;
}

/// Token-id documents for the topic model, one per training page, in stream
/// order; this ordering is what maps pages to fitted-model document indices.
inline std::vector<std::vector<int>> lda_documents(
    const std::vector<std::vector<std::vector<std::string>>>& stems,
    const textproc::Vocabulary& vocab) {
  std::vector<std::vector<int>> docs;
  for (const auto& stream : stems)
    for (const auto& page : stream) docs.push_back(textproc::token_ids(page, vocab));
  return docs;
}

/// Per-stream, per-page theta vectors for the corpus the model was fitted on,
/// read directly from the Gibbs assignments.
inline std::vector<std::vector<std::vector<double>>> assignment_thetas(
    const topics::TopicModel& model, const std::vector<corpus::PageStream>& streams) {
  if (!model.has_training_state())
    throw std::invalid_argument("assignment_thetas: model has no training state");
  std::vector<std::vector<std::vector<double>>> out;
  std::size_t doc = 0;
  for (const auto& stream : streams) {
    std::vector<std::vector<double>> per_page;
    for (std::size_t p = 0; p < stream.pages.size(); ++p)
      per_page.push_back(topics::theta_from_assignments(model, doc++));
    out.push_back(std::move(per_page));
  }
  if (doc != model.doc_topic.size())
    throw std::invalid_argument("assignment_thetas: stream pages do not match fitted documents");
  return out;
}

/// Fold-in thetas for pages the model has not seen; each page's sampler seed
/// derives from (model seed, stream id, page index).
inline std::vector<std::vector<std::vector<double>>> fold_in_thetas(
    const topics::TopicModel& model, const std::vector<corpus::PageStream>& streams,
    const std::vector<std::vector<std::vector<std::string>>>& stems,
    const textproc::Vocabulary& vocab) {
  std::vector<std::vector<std::vector<double>>> out;
  for (std::size_t s = 0; s < streams.size(); ++s) {
    std::vector<std::vector<double>> per_page;
    for (std::size_t p = 0; p < streams[s].pages.size(); ++p) {
      auto ids = textproc::token_ids(stems[s][p], vocab);
      std::uint64_t seed =
          derive_seed(model.seed, "theta:" + streams[s].stream_id, static_cast<std::uint64_t>(p));
      per_page.push_back(topics::infer_theta(model, ids, seed));
    }
    out.push_back(std::move(per_page));
  }
  return out;
}

/// Embedding-ready id sequence: pad 0 is never produced here, out-of-vocabulary
/// stems map to 1, vocabulary id v maps to v+2.
inline std::vector<int> encode_for_cnn(const std::vector<std::string>& stems,
                                       const textproc::Vocabulary& vocab) {
  std::vector<int> out;
  out.reserve(stems.size());
  for (const auto& s : stems) {
    auto id = vocab.id_of(s);
    out.push_back(id ? *id + 2 : 1);
  }
  return out;
}

inline std::vector<std::vector<int>> encode_streams_for_cnn(
    const std::vector<std::vector<std::vector<std::string>>>& stems,
    const textproc::Vocabulary& vocab) {
  std::vector<std::vector<int>> seqs;
  for (const auto& stream : stems)
    for (const auto& page : stream) seqs.push_back(encode_for_cnn(page, vocab));
  return seqs;
}

/// Per-stream SVM feature inputs (unigram counts plus theta) for one side of a
/// split. Theta lists may be empty when no stage needs the topic model.
inline std::vector<std::vector<svm::PageFeatureInputs>> make_feature_inputs(
    const std::vector<corpus::PageStream>& streams,
    const std::vector<std::vector<std::vector<std::string>>>& stems,
    const std::vector<std::vector<std::vector<double>>>& thetas,
    const textproc::Vocabulary& vocab) {
  std::vector<std::vector<svm::PageFeatureInputs>> out;
  for (std::size_t si = 0; si < streams.size(); ++si) {
    std::vector<svm::PageFeatureInputs> pages;
    for (std::size_t p = 0; p < streams[si].pages.size(); ++p) {
      svm::PageFeatureInputs in;
      in.counts = textproc::count_vector(stems[si][p], vocab);
      if (!thetas.empty()) in.theta = thetas[si][p];
      pages.push_back(std::move(in));
    }
    out.push_back(std::move(pages));
  }
  return out;
}

/// Runs layers [first, last) over an indexed dataset in evaluation mode and
/// returns one row per example; used to harvest penultimate activations.
template <typename T, typename GatherFn>
std::vector<std::vector<T>> batched_rows(neural::Network<T>& net, std::size_t first,
                                         std::size_t last, std::size_t n, const GatherFn& gather,
                                         int batch) {
  std::vector<std::vector<T>> rows;
  rows.reserve(n);
  std::size_t bs = static_cast<std::size_t>(std::max(1, batch));
  for (std::size_t start = 0; start < n; start += bs) {
    std::size_t end = std::min(n, start + bs);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    auto out = net.forward_range(first, last, gather(idx), false, nullptr);
    if (out.rank() != 2 || out.dim(0) != idx.size())
      throw std::runtime_error("batched_rows: expected a (batch, features) output");
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::vector<T> row(out.dim(1));
      for (std::size_t j = 0; j < out.dim(1); ++j) row[j] = out(b, j);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

/// Splits a flat per-page prediction list back into per-stream lists matching
/// the given streams.
inline std::vector<std::vector<int>> per_stream_predictions(
    const std::vector<corpus::PageStream>& streams, const std::vector<double>& probs) {
  std::vector<std::vector<int>> preds;
  std::size_t at = 0;
  for (const auto& st : streams) {
    std::vector<int> p(st.pages.size());
    for (auto& v : p) v = probs.at(at++) > 0.5 ? 1 : 0;
    preds.push_back(std::move(p));
  }
  if (at != probs.size())
    throw std::invalid_argument("per_stream_predictions: probability count mismatch");
  return preds;
}

// --- experiment ---------------------------------------------------------------

struct ExperimentSettings {
  std::string manifest;  // empty -> generate synthetic streams
  corpus::SyntheticStreamParams synth;
  double train_fraction = 0.8;
  textproc::Language language = textproc::Language::english;
  int min_count = 3;

  topics::LdaOptions lda;
  svm::SvmTrainOptions svm_options;

  neural::TextCnnConfig text_cnn;
  int text_max_epochs = 100;
  int text_patience = 5;

  neural::ImageCnnConfig image_cnn;
  int image_max_epochs = 100;
  int image_patience = 5;

  neural::FusionMlpConfig fusion;
  int fusion_max_epochs = 100;
  int fusion_patience = 5;

  std::uint64_t seed = 1;
  std::ostream* progress = nullptr;

  static ExperimentSettings from_config(config::Config& cfg) {
    ExperimentSettings s;
    s.manifest = cfg.take_string("data.manifest", "");
    s.synth.n_streams = cfg.take_int("synth.streams", 25);
    s.synth.pages_per_stream = cfg.take_int("synth.pages", 40);
    s.synth.doc_length_mean = cfg.take_double("synth.doc_length_mean", 3.0);
    s.synth.header_vocab_size = cfg.take_int("synth.header_vocab", 120);
    s.synth.body_vocab_size = cfg.take_int("synth.body_vocab", 900);
    s.synth.n_latent_topics = cfg.take_int("synth.topics", 6);
    s.synth.pixel_noise_rate = cfg.take_double("synth.noise", 0.01);
    s.train_fraction = cfg.take_double("split.train_fraction", 0.8);
    s.language = textproc::parse_language(cfg.take_string("corpus.language", "english"));
    s.min_count = cfg.take_int("corpus.min_count", 3);

    s.lda.k = cfg.take_int("lda.k", 50);
    s.lda.alpha = cfg.take_double("lda.alpha", -1.0);
    s.lda.beta = cfg.take_double("lda.beta", 0.01);
    s.lda.n_sweeps = cfg.take_int("lda.sweeps", 1000);
    s.lda.fold_in_sweeps = cfg.take_int("lda.fold_in_sweeps", 50);

    s.svm_options.c = cfg.take_double("svm.c", 1.0);
    s.svm_options.tolerance = cfg.take_double("svm.tolerance", 0.1);
    s.svm_options.max_epochs = cfg.take_int("svm.max_epochs", 1000);

    s.text_cnn.embed_dim = cfg.take_int("text_cnn.embed_dim", 300);
    s.text_cnn.filters = cfg.take_int("text_cnn.filters", 350);
    s.text_cnn.kernel = cfg.take_int("text_cnn.kernel", 3);
    s.text_cnn.dense = cfg.take_int("text_cnn.dense", 256);
    s.text_cnn.dropout = cfg.take_double("text_cnn.dropout", 0.5);
    s.text_cnn.max_seq_len = cfg.take_int("text_cnn.max_seq_len", 512);
    s.text_cnn.lr = cfg.take_double("text_cnn.lr", 0.0002);
    s.text_cnn.batch = cfg.take_int("text_cnn.batch", 32);
    s.text_max_epochs = cfg.take_int("text_cnn.max_epochs", 100);
    s.text_patience = cfg.take_int("text_cnn.patience", 5);

    s.image_cnn.channels = cfg.take_int_list("image_cnn.channels", {8, 16, 32, 64});
    s.image_cnn.dense = cfg.take_int("image_cnn.dense", 256);
    s.image_cnn.dropout = cfg.take_double("image_cnn.dropout", 0.5);
    s.image_cnn.lr = cfg.take_double("image_cnn.lr", 0.0001);
    s.image_cnn.batch = cfg.take_int("image_cnn.batch", 32);
    s.image_cnn.backbone_frozen = cfg.take_bool("image_cnn.frozen", true);
    s.image_max_epochs = cfg.take_int("image_cnn.max_epochs", 100);
    s.image_patience = cfg.take_int("image_cnn.patience", 5);

    s.fusion.hidden = cfg.take_int("fusion.hidden", 256);
    s.fusion.l2 = cfg.take_double("fusion.l2", 0.01);
    s.fusion.dropout = cfg.take_double("fusion.dropout", 0.5);
    s.fusion.lr = cfg.take_double("fusion.lr", 0.0005);
    s.fusion.batch = cfg.take_int("fusion.batch", 16);
    s.fusion_max_epochs = cfg.take_int("fusion.max_epochs", 100);
    s.fusion_patience = cfg.take_int("fusion.patience", 5);

    s.seed = cfg.take_u64("seed", 1);
    cfg.ensure_consumed();
    return s;
  }
};

struct ExperimentRow {
  std::string id;       // stable machine name, e.g. svm_unigrams
  std::string display;  // human-readable row label
  EvaluationReport report;
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;  // the seven model rows in protocol order
  EvaluationReport baseline;        // majority-class predictor, page 0 forced
  std::string majority_class;
  std::size_t n_train_streams = 0, n_test_streams = 0;
  std::size_t n_train_pages = 0, n_test_pages = 0;
  int vocab_size = 0;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string fmt_kappa(const std::optional<double>& k) {
  return k ? fmt(*k) : std::string("undefined");
}

inline void progress_line(std::ostream* out, const std::string& msg) {
  if (out) (*out) << msg << "\n" << std::flush;
}

}  // namespace detail

/// Human-readable metric block for one evaluation.
inline std::string format_report(const EvaluationReport& report) {
  std::ostringstream out;
  auto block = [&](const char* title, const MetricSet& m) {
    out << title << "\n";
    out << "  pages: " << m.total() << "  (tp " << m.tp << ", fp " << m.fp << ", fn " << m.fn
        << ", tn " << m.tn << ")\n";
    out << "  accuracy: " << detail::fmt(m.accuracy) << "\n";
    out << "  kappa: " << detail::fmt_kappa(m.kappa) << "\n";
    if (m.fp + m.fn > 0)
      out << "  error split: " << detail::fmt(m.fp_error_share) << " fp / "
          << detail::fmt(m.fn_error_share) << " fn\n";
  };
  block("all pages (page 0 forced ND)", report.overall);
  if (report.excluding_first) block("excluding first pages", *report.excluding_first);
  std::size_t docs = 0;
  for (const auto& b : report.boundaries) docs += b.documents.size();
  out << "streams: " << report.boundaries.size() << ", predicted documents: " << docs << "\n";
  return out.str();
}

/// Fusion vectors for every page of every stream on one side of a split,
/// flattened in stream order. The nested feature lists are per stream, per
/// page.
template <typename T>
std::vector<std::vector<T>> build_side_fusion_vectors(
    const std::vector<std::vector<std::vector<T>>>& text_pen,
    const std::vector<std::vector<std::vector<double>>>& thetas,
    const std::vector<std::vector<std::vector<T>>>& image_pen, const FusionLayout& layout) {
  if (text_pen.size() != thetas.size() || image_pen.size() != thetas.size())
    throw std::invalid_argument("build_side_fusion_vectors: stream count mismatch");
  std::vector<std::vector<T>> vectors;
  for (std::size_t si = 0; si < text_pen.size(); ++si)
    for (std::size_t p = 0; p < text_pen[si].size(); ++p)
      vectors.push_back(build_fusion_vector(text_pen[si], thetas[si], image_pen[si], p, layout));
  return vectors;
}

inline void write_experiment_report(const ExperimentResult& result, const ExperimentSettings& s,
                                    const std::filesystem::path& out_dir) {
  std::ostringstream txt;
  txt << "page stream segmentation experiment\n";
  txt << "seed: " << s.seed << "\n";
  txt << "streams: " << result.n_train_streams + result.n_test_streams << " ("
      << result.n_train_streams << " train / " << result.n_test_streams << " test)\n";
  txt << "pages: " << result.n_train_pages + result.n_test_pages << " (" << result.n_train_pages
      << " train / " << result.n_test_pages << " test)\n";
  txt << "vocabulary: " << result.vocab_size << " terms (min_count " << s.min_count
      << ", language " << textproc::to_string(s.language) << ")\n";
  txt << "lda: k=" << s.lda.k << " alpha=" << detail::fmt(s.lda.resolved_alpha())
      << " beta=" << detail::fmt(s.lda.beta) << " sweeps=" << s.lda.n_sweeps << "\n";
  const auto& base = result.baseline.overall;
  txt << "majority baseline (" << result.majority_class
      << ", page 0 forced ND): accuracy " << detail::fmt(base.accuracy) << ", kappa "
      << detail::fmt_kappa(base.kappa) << "\n\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-26s %10s %10s %10s %10s %8s\n", "model", "accuracy",
                "kappa", "acc(no p0)", "kap(no p0)", "fp_share");
  txt << line;
  for (const auto& row : result.rows) {
    const auto& m = row.report.overall;
    std::string acc2 = "-", kap2 = "-";
    if (row.report.excluding_first) {
      acc2 = detail::fmt(row.report.excluding_first->accuracy);
      kap2 = detail::fmt_kappa(row.report.excluding_first->kappa);
    }
    std::snprintf(line, sizeof(line), "%-26s %10s %10s %10s %10s %8s\n", row.display.c_str(),
                  detail::fmt(m.accuracy).c_str(), detail::fmt_kappa(m.kappa).c_str(), acc2.c_str(),
                  kap2.c_str(), detail::fmt(m.fp_error_share).c_str());
    txt << line;
  }
  io::write_file_text(out_dir / "report.txt", txt.str());

  std::ostringstream csv;
  csv << "row,model,accuracy,kappa,tp,fp,fn,tn,accuracy_excl_first,kappa_excl_first\n";
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const auto& row = result.rows[i];
    const auto& m = row.report.overall;
    csv << i + 1 << ',' << row.id << ',' << detail::fmt(m.accuracy) << ','
        << (m.kappa ? detail::fmt(*m.kappa) : "") << ',' << m.tp << ',' << m.fp << ',' << m.fn
        << ',' << m.tn << ',';
    if (row.report.excluding_first) {
      const auto& e = *row.report.excluding_first;
      csv << detail::fmt(e.accuracy) << ',' << (e.kappa ? detail::fmt(*e.kappa) : "");
    } else {
      csv << ',';
    }
    csv << '\n';
  }
  io::write_file_text(out_dir / "report.csv", csv.str());
}

/// Runs the full staged protocol on one split: four cumulative SVM stages,
/// text CNN, image CNN, and the fusion MLP, all sharing one split and one
/// master seed. Writes report.txt, report.csv and a models/ directory.
inline ExperimentResult run_experiment(const ExperimentSettings& settings,
                                       const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  using T = float;
  ExperimentSettings s = settings;
  fs::create_directories(out_dir / "models");

  // Data.
  detail::progress_line(s.progress, "loading streams");
  std::vector<corpus::PageStream> streams;
  if (s.manifest.empty()) {
    s.synth.seed = derive_seed(s.seed, "synth");
    streams = corpus::generate_synthetic_streams(s.synth);
  } else {
    streams = corpus::load_streams(s.manifest);
  }
  for (const auto& st : streams)
    if (!st.labeled())
      throw std::runtime_error("experiment: stream " + st.stream_id + " is unlabeled");
  auto split = corpus::split_streams(std::move(streams), s.train_fraction, derive_seed(s.seed, "split"));
  PreparedData data = prepare_data(std::move(split), s.language, s.min_count);

  ExperimentResult result;
  result.n_train_streams = data.train.size();
  result.n_test_streams = data.test.size();
  result.n_train_pages = data.n_train_pages();
  result.n_test_pages = data.n_test_pages();
  result.vocab_size = data.vocab.size();
  data.vocab.save(out_dir / "models" / "vocab.tsv");

  auto train_labels01 = [&]() {
    std::vector<double> y;
    for (const auto& st : data.train)
      for (const auto& p : st.pages) y.push_back(p.label == corpus::Label::nd ? 1.0 : 0.0);
    return y;
  }();

  // Majority baseline: most frequent training class everywhere, page 0 forced.
  {
    long long nd = 0;
    for (double y : train_labels01) nd += y > 0.5 ? 1 : 0;
    bool majority_nd = nd * 2 > static_cast<long long>(train_labels01.size());
    result.majority_class = majority_nd ? "ND" : "SD";
    std::vector<std::vector<int>> preds;
    for (const auto& st : data.test)
      preds.emplace_back(st.pages.size(), majority_nd ? 1 : 0);
    result.baseline = evaluate_streams(data.test, std::move(preds));
  }

  // Topic model over training pages.
  detail::progress_line(s.progress, "fitting lda");
  s.lda.seed = derive_seed(s.seed, "lda");
  auto docs = lda_documents(data.train_stems, data.vocab);
  topics::TopicModel lda = topics::fit_lda(docs, std::max(1, data.vocab.size()), s.lda);
  lda.save(out_dir / "models" / "lda.bin");
  auto train_thetas = assignment_thetas(lda, data.train);
  auto test_thetas = fold_in_thetas(lda, data.test, data.test_stems, data.vocab);

  // Per-page SVM inputs.
  auto train_inputs = make_feature_inputs(data.train, data.train_stems, train_thetas, data.vocab);
  auto test_inputs = make_feature_inputs(data.test, data.test_stems, test_thetas, data.vocab);

  auto train_labels_pm1 = [&]() {
    std::vector<int> y;
    for (const auto& st : data.train)
      for (const auto& p : st.pages) y.push_back(p.label == corpus::Label::nd ? 1 : -1);
    return y;
  }();

  // Staged SVM rows.
  struct Stage {
    const char* id;
    const char* display;
    const char* features;
  };
  const Stage stages[4] = {{"svm_unigrams", "svm unigrams", "unigrams"},
                           {"svm_topics", "svm + topics", "unigrams,topics"},
                           {"svm_topic_diff", "svm + topic difference", "unigrams,topics,topicdiff"},
                           {"svm_predecessor", "svm + predecessor page", "unigrams,topics,topicdiff,prev"}};
  for (int stage_i = 0; stage_i < 4; ++stage_i) {
    const Stage& stage = stages[stage_i];
    detail::progress_line(s.progress, std::string("training ") + stage.id);
    svm::FeatureSpec spec = svm::FeatureSpec::parse(stage.features);
    std::vector<textproc::SparseVector> x;
    for (const auto& stream_pages : train_inputs)
      for (std::size_t p = 0; p < stream_pages.size(); ++p)
        x.push_back(svm::assemble_features(stream_pages, p, spec));
    svm::SvmTrainOptions opts = s.svm_options;
    opts.seed = derive_seed(s.seed, "svm", static_cast<std::uint64_t>(stage_i));
    svm::LinearSvmModel model = svm::train_svm(x, train_labels_pm1, opts);
    model.save(out_dir / "models" / (std::string(stage.id) + ".tsv"));
    std::vector<std::vector<int>> preds;
    for (const auto& stream_pages : test_inputs) {
      std::vector<int> stream_preds;
      for (std::size_t p = 0; p < stream_pages.size(); ++p)
        stream_preds.push_back(model.predict_nd(svm::assemble_features(stream_pages, p, spec)) ? 1 : 0);
      preds.push_back(std::move(stream_preds));
    }
    result.rows.push_back(
        ExperimentRow{stage.id, stage.display, evaluate_streams(data.test, std::move(preds))});
  }

  // Text CNN.
  detail::progress_line(s.progress, "training text cnn");
  auto train_seqs = encode_streams_for_cnn(data.train_stems, data.vocab);
  auto test_seqs = encode_streams_for_cnn(data.test_stems, data.vocab);
  s.text_cnn.vocab_size = data.vocab.size();
  auto text_model = neural::build_text_cnn<T>(s.text_cnn, derive_seed(s.seed, "cnn_text_init"));
  {
    neural::TrainOptions topt;
    topt.max_epochs = s.text_max_epochs;
    topt.patience = s.text_patience;
    topt.seed = derive_seed(s.seed, "cnn_text_train");
    neural::train_text_cnn(text_model, train_seqs, train_labels01, topt);
  }
  neural::save_text_cnn(text_model, out_dir / "models" / "cnn_text.bin");
  auto text_gather = [&](const std::vector<std::vector<int>>& seqs) {
    return [&seqs, &text_model](const std::vector<std::size_t>& idx) {
      return neural::gather_sequences<T>(seqs, idx, text_model.config.max_seq_len);
    };
  };
  {
    auto probs = neural::predict_binary(text_model.net, 0, text_model.net.layers.size(),
                                        test_seqs.size(), text_gather(test_seqs),
                                        text_model.config.batch);
    result.rows.push_back(ExperimentRow{
        "cnn_text", "cnn text", evaluate_streams(data.test, per_stream_predictions(data.test, probs))});
  }

  // Text penultimate features for fusion (all pages, train then test order).
  auto train_text_pen = batched_rows(text_model.net, 0, text_model.penultimate_end(),
                                     train_seqs.size(), text_gather(train_seqs),
                                     text_model.config.batch);
  auto test_text_pen = batched_rows(text_model.net, 0, text_model.penultimate_end(),
                                    test_seqs.size(), text_gather(test_seqs),
                                    text_model.config.batch);

  // Image CNN: frozen backbone features cached once for all pages.
  detail::progress_line(s.progress, "training image cnn");
  auto collect_pages = [](const std::vector<corpus::PageStream>& streams_in) {
    std::vector<const imaging::Binary224*> out;
    for (const auto& st : streams_in)
      for (const auto& p : st.pages) out.push_back(&p.image);
    return out;
  };
  auto train_pages = collect_pages(data.train);
  auto test_pages = collect_pages(data.test);
  auto image_model = neural::build_image_cnn<T>(s.image_cnn, derive_seed(s.seed, "cnn_image_init"));
  neural::TrainOptions iopt;
  iopt.max_epochs = s.image_max_epochs;
  iopt.patience = s.image_patience;
  iopt.seed = derive_seed(s.seed, "cnn_image_train");
  std::vector<std::vector<T>> train_img_pen, test_img_pen;
  std::vector<double> test_img_probs;
  if (s.image_cnn.backbone_frozen) {
    auto train_feats = neural::image_backbone_features(image_model, train_pages, s.image_cnn.batch);
    auto test_feats = neural::image_backbone_features(image_model, test_pages, s.image_cnn.batch);
    auto train_gather = [&](const std::vector<std::size_t>& idx) {
      return neural::gather_rows<T>(train_feats, idx);
    };
    auto test_gather = [&](const std::vector<std::size_t>& idx) {
      return neural::gather_rows<T>(test_feats, idx);
    };
    neural::Adam<T> opt(s.image_cnn.lr);
    iopt.batch = s.image_cnn.batch;
    neural::train_binary(image_model.net, image_model.backbone_end, image_model.net.layers.size(),
                         train_feats.size(), train_gather, train_labels01, opt, iopt);
    train_img_pen = batched_rows(image_model.net, image_model.backbone_end,
                                 image_model.penultimate_end(), train_feats.size(), train_gather,
                                 s.image_cnn.batch);
    test_img_pen = batched_rows(image_model.net, image_model.backbone_end,
                                image_model.penultimate_end(), test_feats.size(), test_gather,
                                s.image_cnn.batch);
    test_img_probs = neural::predict_binary(image_model.net, image_model.backbone_end,
                                            image_model.net.layers.size(), test_feats.size(),
                                            test_gather, s.image_cnn.batch);
  } else {
    neural::train_image_cnn(image_model, train_pages, train_labels01, iopt);
    auto train_gather = [&](const std::vector<std::size_t>& idx) {
      return neural::gather_images<T>(train_pages, idx);
    };
    auto test_gather = [&](const std::vector<std::size_t>& idx) {
      return neural::gather_images<T>(test_pages, idx);
    };
    train_img_pen = batched_rows(image_model.net, 0, image_model.penultimate_end(),
                                 train_pages.size(), train_gather, s.image_cnn.batch);
    test_img_pen = batched_rows(image_model.net, 0, image_model.penultimate_end(),
                                test_pages.size(), test_gather, s.image_cnn.batch);
    test_img_probs = neural::predict_binary(image_model.net, 0, image_model.net.layers.size(),
                                            test_pages.size(), test_gather, s.image_cnn.batch);
  }
  neural::save_image_cnn(image_model, out_dir / "models" / "cnn_image.bin");
  result.rows.push_back(
      ExperimentRow{"cnn_image", "cnn image",
                    evaluate_streams(data.test, per_stream_predictions(data.test, test_img_probs))});

  // Fusion MLP.
  detail::progress_line(s.progress, "training fusion mlp");
  FusionLayout layout{s.text_cnn.dense, s.lda.k, s.image_cnn.dense};
  auto nest = [](const std::vector<corpus::PageStream>& streams_in,
                 const std::vector<std::vector<T>>& flat) {
    std::vector<std::vector<std::vector<T>>> out;
    std::size_t at = 0;
    for (const auto& st : streams_in) {
      out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(at),
                       flat.begin() + static_cast<std::ptrdiff_t>(at + st.pages.size()));
      at += st.pages.size();
    }
    return out;
  };
  auto train_fusion_vecs = build_side_fusion_vectors(nest(data.train, train_text_pen), train_thetas,
                                                     nest(data.train, train_img_pen), layout);
  auto test_fusion_vecs = build_side_fusion_vectors(nest(data.test, test_text_pen), test_thetas,
                                                    nest(data.test, test_img_pen), layout);
  s.fusion.input_dim = layout.total_dim();
  auto fusion_model = neural::build_fusion_mlp<T>(s.fusion, derive_seed(s.seed, "fusion_init"));
  {
    neural::TrainOptions fopt;
    fopt.max_epochs = s.fusion_max_epochs;
    fopt.patience = s.fusion_patience;
    fopt.seed = derive_seed(s.seed, "fusion_train");
    neural::train_fusion_mlp(fusion_model, train_fusion_vecs, train_labels01, fopt);
  }
  neural::save_fusion_mlp(fusion_model, out_dir / "models" / "fusion.bin");
  {
    auto probs = neural::predict_binary(fusion_model.net, 0, fusion_model.net.layers.size(),
                                        test_fusion_vecs.size(),
                                        [&](const std::vector<std::size_t>& idx) {
                                          return neural::gather_rows<T>(test_fusion_vecs, idx);
                                        },
                                        s.fusion.batch);
    result.rows.push_back(ExperimentRow{
        "mlp_fusion", "mlp image + text",
        evaluate_streams(data.test, per_stream_predictions(data.test, probs))});
  }

  write_experiment_report(result, s, out_dir);
  detail::progress_line(s.progress, "experiment complete");
  return result;
}

}  // namespace pss::pipeline
