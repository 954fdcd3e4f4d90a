// Command line front end for the page stream segmentation library.
// One master seed threads every stage; stage seeds are derived from it, so a
// whole run is reproducible from the seed alone.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "pss/pipeline.hpp"
#include "pss/workspace.hpp"

namespace fs = std::filesystem;
using Scalar = float;

namespace {

std::vector<double> labels01(const std::vector<pss::corpus::PageStream>& streams) {
  std::vector<double> y;
  for (const auto& st : streams) {
    if (!st.labeled())
      throw std::runtime_error("stream " + st.stream_id + " has no labels; cannot train on it");
    for (const auto& p : st.pages) y.push_back(*p.label == pss::corpus::Label::nd ? 1.0 : 0.0);
  }
  return y;
}

std::vector<int> labels_pm1(const std::vector<pss::corpus::PageStream>& streams) {
  std::vector<int> y;
  for (double v : labels01(streams)) y.push_back(v > 0.5 ? 1 : -1);
  return y;
}

// Cached per-page thetas (train side then test side), keyed by the topic
// model file that produced them.
std::pair<std::vector<std::vector<std::vector<double>>>, std::vector<std::vector<std::vector<double>>>>
cached_thetas(const fs::path& dir, const pss::pipeline::PreparedData& data, const fs::path& lda_path) {
  auto flat = pss::workspace::load_model_cache<double>(dir, "theta", lda_path, "train-lda");
  return pss::workspace::unflatten(data, flat);
}

std::pair<std::vector<std::vector<std::vector<Scalar>>>, std::vector<std::vector<std::vector<Scalar>>>>
cached_penultimates(const fs::path& dir, const pss::pipeline::PreparedData& data,
                    const std::string& kind, const fs::path& model_path, const char* cmd) {
  auto flat = pss::workspace::load_model_cache<Scalar>(dir, kind, model_path, cmd);
  return pss::workspace::unflatten(data, flat);
}

const std::vector<pss::corpus::PageStream>& side(const pss::pipeline::PreparedData& data,
                                                 const std::string& split, bool test_side) {
  (void)split;
  return test_side ? data.test : data.train;
}

// Streams plus their stems for the requested split, in evaluation order.
struct SplitView {
  std::vector<const pss::corpus::PageStream*> streams;
  std::vector<const std::vector<std::vector<std::string>>*> stems;
  std::vector<bool> is_test;
};

SplitView split_view(const pss::pipeline::PreparedData& data, const std::string& split) {
  SplitView v;
  auto add = [&](const std::vector<pss::corpus::PageStream>& streams,
                 const std::vector<std::vector<std::vector<std::string>>>& stems, bool test) {
    for (std::size_t i = 0; i < streams.size(); ++i) {
      v.streams.push_back(&streams[i]);
      v.stems.push_back(&stems[i]);
      v.is_test.push_back(test);
    }
  };
  if (split == "train" || split == "all") add(data.train, data.train_stems, false);
  if (split == "test" || split == "all") add(data.test, data.test_stems, true);
  if (v.streams.empty())
    throw std::runtime_error("split '" + split + "' selects no streams (use train, test or all)");
  return v;
}

std::vector<pss::corpus::PageStream> copy_streams(const SplitView& v) {
  std::vector<pss::corpus::PageStream> out;
  for (const auto* s : v.streams) out.push_back(*s);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"page stream segmentation: train, segment and evaluate"};
  app.require_subcommand(1);

  // --- synth ---
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
  struct {
    std::string out;
    pss::corpus::SyntheticStreamParams p;
  } sy;
  synth->add_option("--out", sy.out, "output corpus directory")->required();
  synth->add_option("--streams", sy.p.n_streams, "number of streams");
  synth->add_option("--pages", sy.p.pages_per_stream, "pages per stream");
  synth->add_option("--doc-mean", sy.p.doc_length_mean, "mean document length in pages");
  synth->add_option("--header-vocab", sy.p.header_vocab_size, "header vocabulary size");
  synth->add_option("--body-vocab", sy.p.body_vocab_size, "body vocabulary size");
  synth->add_option("--topics", sy.p.n_latent_topics, "latent topic count");
  synth->add_option("--noise", sy.p.pixel_noise_rate, "pixel flip probability");
  synth->add_option("--seed", sy.p.seed, "generator seed");
  synth->callback([&] {
    auto streams = pss::corpus::generate_synthetic_streams(sy.p);
    pss::corpus::write_corpus(streams, sy.out);
    std::size_t pages = 0;
    for (const auto& s : streams) pages += s.pages.size();
    std::cout << "wrote " << streams.size() << " streams (" << pages << " pages) to "
              << (fs::path(sy.out) / "manifest.csv").string() << "\n";
  });

  // --- prepare ---
  auto* prepare = app.add_subcommand("prepare", "split a corpus and build the training workspace");
  struct {
    std::string manifest, out, language = "english";
    int min_count = 3;
    double train_fraction = 0.8;
    std::uint64_t seed = 1;
  } pr;
  prepare->add_option("--manifest", pr.manifest, "corpus manifest csv")->required();
  prepare->add_option("--out", pr.out, "workspace directory")->required();
  prepare->add_option("--language", pr.language, "stemmer language: english, german or none");
  prepare->add_option("--min-count", pr.min_count, "vocabulary frequency cutoff");
  prepare->add_option("--train-fraction", pr.train_fraction, "fraction of streams for training");
  prepare->add_option("--seed", pr.seed, "master seed (also drives the split)");
  prepare->callback([&] {
    auto streams = pss::corpus::load_streams(pr.manifest);
    auto split = pss::corpus::split_streams(std::move(streams), pr.train_fraction,
                                            pss::derive_seed(pr.seed, "split"));
    auto data = pss::pipeline::prepare_data(std::move(split),
                                            pss::textproc::parse_language(pr.language),
                                            pr.min_count);
    pss::workspace::Meta meta;
    meta.language = data.language;
    meta.min_count = pr.min_count;
    meta.train_fraction = pr.train_fraction;
    meta.seed = pr.seed;
    pss::workspace::save(pr.out, data, meta);
    std::cout << "workspace " << pr.out << ": " << data.train.size() << " train / "
              << data.test.size() << " test streams, " << data.n_train_pages() << " / "
              << data.n_test_pages() << " pages, vocabulary " << data.vocab.size() << " terms\n";
  });

  // --- train-lda ---
  auto* tlda = app.add_subcommand("train-lda", "fit the topic model and cache per-page thetas");
  struct {
    std::string work;
    pss::topics::LdaOptions opt;
    std::uint64_t seed = 0;
    bool seed_set = false;
  } tl;
  tlda->add_option("--work", tl.work, "workspace directory")->required();
  tlda->add_option("--k", tl.opt.k, "topic count");
  tlda->add_option("--alpha", tl.opt.alpha, "document-topic prior (default 50/K)");
  tlda->add_option("--beta", tl.opt.beta, "topic-word prior");
  tlda->add_option("--sweeps", tl.opt.n_sweeps, "Gibbs sweeps");
  tlda->add_option("--fold-in-sweeps", tl.opt.fold_in_sweeps, "sweeps for unseen pages");
  tlda->add_option("--seed", tl.seed, "seed base (default: workspace seed)")
      ->each([&](const std::string&) { tl.seed_set = true; });
  tlda->callback([&] {
    auto w = pss::workspace::load(tl.work);
    std::uint64_t base = tl.seed_set ? tl.seed : w.meta.seed;
    tl.opt.seed = pss::derive_seed(base, "lda");
    auto docs = pss::pipeline::lda_documents(w.data.train_stems, w.data.vocab);
    auto model = pss::topics::fit_lda(docs, std::max(1, w.data.vocab.size()), tl.opt);
    fs::path model_path = fs::path(tl.work) / "models" / "lda.bin";
    fs::create_directories(model_path.parent_path());
    model.save(model_path);
    auto train_thetas = pss::pipeline::assignment_thetas(model, w.data.train);
    auto test_thetas =
        pss::pipeline::fold_in_thetas(model, w.data.test, w.data.test_stems, w.data.vocab);
    std::vector<std::vector<double>> flat;
    for (const auto& s : train_thetas)
      for (const auto& p : s) flat.push_back(p);
    for (const auto& s : test_thetas)
      for (const auto& p : s) flat.push_back(p);
    auto cache = pss::workspace::cache_path(tl.work, "theta",
                                            pss::workspace::content_key(model_path));
    pss::workspace::save_vector_cache(cache, flat);
    std::cout << "model: " << model_path.string() << " (k=" << model.k << ")\n"
              << "theta cache: " << cache.string() << "\n";
  });

  // --- train-svm ---
  auto* tsvm = app.add_subcommand("train-svm", "train a linear SVM page classifier");
  struct {
    std::string work, features, out, lda;
    pss::svm::SvmTrainOptions opt;
    std::uint64_t seed = 0;
    bool seed_set = false;
  } ts;
  tsvm->add_option("--work", ts.work, "workspace directory")->required();
  tsvm->add_option("--features", ts.features,
                   "comma list of unigrams, topics, topicdiff, prev")->required();
  tsvm->add_option("--out", ts.out, "model path (default models/svm_<features>.tsv)");
  tsvm->add_option("--lda", ts.lda, "topic model path (default models/lda.bin)");
  tsvm->add_option("--c", ts.opt.c, "soft-margin penalty");
  tsvm->add_option("--tolerance", ts.opt.tolerance, "solver stopping tolerance");
  tsvm->add_option("--max-epochs", ts.opt.max_epochs, "epoch cap");
  tsvm->add_option("--seed", ts.seed, "seed base (default: workspace seed)")
      ->each([&](const std::string&) { ts.seed_set = true; });
  tsvm->callback([&] {
    auto w = pss::workspace::load(ts.work);
    auto spec = pss::svm::FeatureSpec::parse(ts.features);
    std::vector<std::vector<std::vector<double>>> train_thetas, test_thetas;
    if (spec.needs_topic_model()) {
      fs::path lda_path = ts.lda.empty() ? fs::path(ts.work) / "models" / "lda.bin" : fs::path(ts.lda);
      std::tie(train_thetas, test_thetas) = cached_thetas(ts.work, w.data, lda_path);
    }
    auto inputs = pss::pipeline::make_feature_inputs(w.data.train, w.data.train_stems,
                                                     train_thetas, w.data.vocab);
    std::vector<pss::textproc::SparseVector> x;
    for (const auto& stream_pages : inputs)
      for (std::size_t p = 0; p < stream_pages.size(); ++p)
        x.push_back(pss::svm::assemble_features(stream_pages, p, spec));
    std::uint64_t base = ts.seed_set ? ts.seed : w.meta.seed;
    ts.opt.seed = pss::derive_seed(base, "svm:" + spec.format());
    auto model = pss::svm::train_svm(x, labels_pm1(w.data.train), ts.opt);
    fs::path out = ts.out.empty()
                       ? fs::path(ts.work) / "models" /
                             ("svm_" + spec.format_filename() + ".tsv")
                       : fs::path(ts.out);
    fs::create_directories(out.parent_path());
    model.save(out);
    std::cout << "model: " << out.string() << " (" << model.weights.size() << " weights)\n";
  });

  // --- train-cnn-text ---
  auto* tct = app.add_subcommand("train-cnn-text", "train the text CNN and cache penultimates");
  struct {
    std::string work;
    pss::neural::TextCnnConfig cfg;
    int epochs = 100, patience = 5;
    std::uint64_t seed = 0;
    bool seed_set = false;
  } tc;
  tct->add_option("--work", tc.work, "workspace directory")->required();
  tct->add_option("--embed-dim", tc.cfg.embed_dim, "embedding width");
  tct->add_option("--filters", tc.cfg.filters, "convolution filter count");
  tct->add_option("--kernel", tc.cfg.kernel, "convolution width");
  tct->add_option("--dense", tc.cfg.dense, "penultimate layer width");
  tct->add_option("--dropout", tc.cfg.dropout, "dropout rate");
  tct->add_option("--max-seq-len", tc.cfg.max_seq_len, "sequence cap");
  tct->add_option("--lr", tc.cfg.lr, "RMSProp learning rate");
  tct->add_option("--batch", tc.cfg.batch, "batch size");
  tct->add_option("--epochs", tc.epochs, "epoch cap");
  tct->add_option("--patience", tc.patience, "early stopping patience");
  tct->add_option("--seed", tc.seed, "seed base (default: workspace seed)")
      ->each([&](const std::string&) { tc.seed_set = true; });
  tct->callback([&] {
    auto w = pss::workspace::load(tc.work);
    auto train_seqs = pss::pipeline::encode_streams_for_cnn(w.data.train_stems, w.data.vocab);
    auto test_seqs = pss::pipeline::encode_streams_for_cnn(w.data.test_stems, w.data.vocab);
    tc.cfg.vocab_size = w.data.vocab.size();
    std::uint64_t base = tc.seed_set ? tc.seed : w.meta.seed;
    auto model = pss::neural::build_text_cnn<Scalar>(tc.cfg, pss::derive_seed(base, "cnn_text_init"));
    pss::neural::TrainOptions opt;
    opt.max_epochs = tc.epochs;
    opt.patience = tc.patience;
    opt.seed = pss::derive_seed(base, "cnn_text_train");
    auto hist = pss::neural::train_text_cnn(model, train_seqs, labels01(w.data.train), opt);
    fs::path model_path = fs::path(tc.work) / "models" / "cnn_text.bin";
    fs::create_directories(model_path.parent_path());
    pss::neural::save_text_cnn(model, model_path);
    auto gather = [&](const std::vector<std::vector<int>>& seqs) {
      return [&seqs, &model](const std::vector<std::size_t>& idx) {
        return pss::neural::gather_sequences<Scalar>(seqs, idx, model.config.max_seq_len);
      };
    };
    auto pen = pss::pipeline::batched_rows(model.net, 0, model.penultimate_end(),
                                           train_seqs.size(), gather(train_seqs), tc.cfg.batch);
    auto pen_test = pss::pipeline::batched_rows(model.net, 0, model.penultimate_end(),
                                                test_seqs.size(), gather(test_seqs), tc.cfg.batch);
    pen.insert(pen.end(), pen_test.begin(), pen_test.end());
    auto cache = pss::workspace::cache_path(tc.work, "textpen",
                                            pss::workspace::content_key(model_path));
    pss::workspace::save_vector_cache(cache, pen);
    std::cout << "model: " << model_path.string() << " (best epoch " << hist.best_epoch
              << ", final train accuracy "
              << pss::pipeline::detail::fmt(hist.train_accuracy.back()) << ")\n"
              << "penultimate cache: " << cache.string() << "\n";
  });

  // --- train-cnn-image ---
  auto* tci = app.add_subcommand("train-cnn-image", "train the image CNN and cache penultimates");
  struct {
    std::string work;
    pss::neural::ImageCnnConfig cfg;
    int epochs = 100, patience = 5;
    std::uint64_t seed = 0;
    bool seed_set = false;
  } ti;
  tci->add_option("--work", ti.work, "workspace directory")->required();
  tci->add_option("--channels", ti.cfg.channels, "backbone channel widths")->delimiter(',');
  tci->add_option("--dense", ti.cfg.dense, "penultimate layer width");
  tci->add_option("--dropout", ti.cfg.dropout, "dropout rate");
  tci->add_option("--lr", ti.cfg.lr, "Adam learning rate");
  tci->add_option("--batch", ti.cfg.batch, "batch size");
  tci->add_flag("--frozen,!--no-frozen", ti.cfg.backbone_frozen,
                "train the head only, backbone fixed at init");
  tci->add_option("--epochs", ti.epochs, "epoch cap");
  tci->add_option("--patience", ti.patience, "early stopping patience");
  tci->add_option("--seed", ti.seed, "seed base (default: workspace seed)")
      ->each([&](const std::string&) { ti.seed_set = true; });
  tci->callback([&] {
    auto w = pss::workspace::load(ti.work);
    std::vector<const pss::imaging::Binary224*> train_pages, all_pages;
    for (const auto& st : w.data.train)
      for (const auto& p : st.pages) train_pages.push_back(&p.image);
    all_pages = train_pages;
    for (const auto& st : w.data.test)
      for (const auto& p : st.pages) all_pages.push_back(&p.image);
    std::uint64_t base = ti.seed_set ? ti.seed : w.meta.seed;
    auto model =
        pss::neural::build_image_cnn<Scalar>(ti.cfg, pss::derive_seed(base, "cnn_image_init"));
    pss::neural::TrainOptions opt;
    opt.max_epochs = ti.epochs;
    opt.patience = ti.patience;
    opt.seed = pss::derive_seed(base, "cnn_image_train");
    auto hist = pss::neural::train_image_cnn(model, train_pages, labels01(w.data.train), opt);
    fs::path model_path = fs::path(ti.work) / "models" / "cnn_image.bin";
    fs::create_directories(model_path.parent_path());
    pss::neural::save_image_cnn(model, model_path);
    auto feats = pss::neural::image_backbone_features(model, all_pages, ti.cfg.batch);
    auto pen = pss::pipeline::batched_rows(model.net, model.backbone_end, model.penultimate_end(),
                                           feats.size(),
                                           [&](const std::vector<std::size_t>& idx) {
                                             return pss::neural::gather_rows<Scalar>(feats, idx);
                                           },
                                           ti.cfg.batch);
    auto cache = pss::workspace::cache_path(ti.work, "imagepen",
                                            pss::workspace::content_key(model_path));
    pss::workspace::save_vector_cache(cache, pen);
    std::cout << "model: " << model_path.string() << " (best epoch " << hist.best_epoch
              << ", final train accuracy "
              << pss::pipeline::detail::fmt(hist.train_accuracy.back()) << ")\n"
              << "penultimate cache: " << cache.string() << "\n";
  });

  // --- train-fusion ---
  auto* tfu = app.add_subcommand("train-fusion",
                                 "train the fusion MLP over cached text, topic and image features");
  struct {
    std::string work, lda, text_model, image_model;
    pss::neural::FusionMlpConfig cfg;
    int epochs = 100, patience = 5;
    std::uint64_t seed = 0;
    bool seed_set = false;
  } tf;
  tfu->add_option("--work", tf.work, "workspace directory")->required();
  tfu->add_option("--lda", tf.lda, "topic model path (default models/lda.bin)");
  tfu->add_option("--text-model", tf.text_model, "text CNN path (default models/cnn_text.bin)");
  tfu->add_option("--image-model", tf.image_model, "image CNN path (default models/cnn_image.bin)");
  tfu->add_option("--hidden", tf.cfg.hidden, "hidden layer width");
  tfu->add_option("--l2", tf.cfg.l2, "hidden layer weight decay");
  tfu->add_option("--dropout", tf.cfg.dropout, "dropout rate");
  tfu->add_option("--lr", tf.cfg.lr, "Adam learning rate");
  tfu->add_option("--batch", tf.cfg.batch, "batch size");
  tfu->add_option("--epochs", tf.epochs, "epoch cap");
  tfu->add_option("--patience", tf.patience, "early stopping patience");
  tfu->add_option("--seed", tf.seed, "seed base (default: workspace seed)")
      ->each([&](const std::string&) { tf.seed_set = true; });
  tfu->callback([&] {
    auto w = pss::workspace::load(tf.work);
    fs::path lda_path = tf.lda.empty() ? fs::path(tf.work) / "models" / "lda.bin" : fs::path(tf.lda);
    fs::path text_path =
        tf.text_model.empty() ? fs::path(tf.work) / "models" / "cnn_text.bin" : fs::path(tf.text_model);
    fs::path image_path =
        tf.image_model.empty() ? fs::path(tf.work) / "models" / "cnn_image.bin" : fs::path(tf.image_model);
    auto [train_thetas, test_thetas] = cached_thetas(tf.work, w.data, lda_path);
    auto [train_tp, test_tp] =
        cached_penultimates(tf.work, w.data, "textpen", text_path, "train-cnn-text");
    auto [train_ip, test_ip] =
        cached_penultimates(tf.work, w.data, "imagepen", image_path, "train-cnn-image");
    pss::pipeline::FusionLayout layout{
        static_cast<int>(train_tp.at(0).at(0).size()),
        static_cast<int>(train_thetas.at(0).at(0).size()),
        static_cast<int>(train_ip.at(0).at(0).size())};
    auto train_vecs =
        pss::pipeline::build_side_fusion_vectors(train_tp, train_thetas, train_ip, layout);
    tf.cfg.input_dim = layout.total_dim();
    std::uint64_t base = tf.seed_set ? tf.seed : w.meta.seed;
    auto model = pss::neural::build_fusion_mlp<Scalar>(tf.cfg, pss::derive_seed(base, "fusion_init"));
    pss::neural::TrainOptions opt;
    opt.max_epochs = tf.epochs;
    opt.patience = tf.patience;
    opt.seed = pss::derive_seed(base, "fusion_train");
    auto hist = pss::neural::train_fusion_mlp(model, train_vecs, labels01(w.data.train), opt);
    fs::path model_path = fs::path(tf.work) / "models" / "fusion.bin";
    fs::create_directories(model_path.parent_path());
    pss::neural::save_fusion_mlp(model, model_path);
    std::cout << "model: " << model_path.string() << " (input dim " << tf.cfg.input_dim
              << ", best epoch " << hist.best_epoch << ", final train accuracy "
              << pss::pipeline::detail::fmt(hist.train_accuracy.back()) << ")\n";
  });

  // --- segment ---
  auto* seg = app.add_subcommand("segment", "predict document boundaries for a split");
  struct {
    std::string work, kind, model, features, split = "test", out;
    std::string lda, text_model, image_model;
  } sg;
  seg->add_option("--work", sg.work, "workspace directory")->required();
  seg->add_option("--kind", sg.kind, "model kind: svm, cnn-text, cnn-image or fusion")->required();
  seg->add_option("--model", sg.model, "model path (defaults to the conventional location)");
  seg->add_option("--features", sg.features, "feature list for svm models");
  seg->add_option("--split", sg.split, "train, test or all");
  seg->add_option("--out", sg.out, "boundary csv path")->required();
  seg->add_option("--lda", sg.lda, "topic model path (default models/lda.bin)");
  seg->add_option("--text-model", sg.text_model, "text CNN path (for fusion)");
  seg->add_option("--image-model", sg.image_model, "image CNN path (for fusion)");
  seg->callback([&] {
    auto w = pss::workspace::load(sg.work);
    auto view = split_view(w.data, sg.split);
    fs::path lda_path = sg.lda.empty() ? fs::path(sg.work) / "models" / "lda.bin" : fs::path(sg.lda);
    std::vector<std::vector<int>> preds;  // per view stream

    if (sg.kind == "svm") {
      if (sg.features.empty()) throw std::runtime_error("segment --kind svm needs --features");
      auto spec = pss::svm::FeatureSpec::parse(sg.features);
      fs::path model_path = sg.model.empty()
          ? fs::path(sg.work) / "models" / ("svm_" + spec.format_filename() + ".tsv")
          : fs::path(sg.model);
      auto model = pss::svm::LinearSvmModel::load(model_path);
      std::vector<std::vector<std::vector<double>>> train_thetas, test_thetas;
      if (spec.needs_topic_model())
        std::tie(train_thetas, test_thetas) = cached_thetas(sg.work, w.data, lda_path);
      auto train_inputs = pss::pipeline::make_feature_inputs(w.data.train, w.data.train_stems,
                                                             train_thetas, w.data.vocab);
      auto test_inputs = pss::pipeline::make_feature_inputs(w.data.test, w.data.test_stems,
                                                            test_thetas, w.data.vocab);
      std::size_t train_i = 0, test_i = 0;
      for (std::size_t i = 0; i < view.streams.size(); ++i) {
        const auto& inputs = view.is_test[i] ? test_inputs[test_i++] : train_inputs[train_i++];
        std::vector<int> p(inputs.size());
        for (std::size_t pi = 0; pi < inputs.size(); ++pi)
          p[pi] = model.predict_nd(pss::svm::assemble_features(inputs, pi, spec)) ? 1 : 0;
        preds.push_back(std::move(p));
      }
    } else if (sg.kind == "cnn-text") {
      fs::path path = sg.model.empty() ? fs::path(sg.work) / "models" / "cnn_text.bin" : fs::path(sg.model);
      auto model = pss::neural::load_text_cnn<Scalar>(path);
      for (std::size_t i = 0; i < view.streams.size(); ++i) {
        std::vector<std::vector<int>> seqs;
        for (const auto& page : *view.stems[i])
          seqs.push_back(pss::pipeline::encode_for_cnn(page, w.data.vocab));
        auto probs = pss::neural::predict_binary(
            model.net, 0, model.net.layers.size(), seqs.size(),
            [&](const std::vector<std::size_t>& idx) {
              return pss::neural::gather_sequences<Scalar>(seqs, idx, model.config.max_seq_len);
            },
            model.config.batch);
        std::vector<int> p(probs.size());
        for (std::size_t pi = 0; pi < probs.size(); ++pi) p[pi] = probs[pi] > 0.5 ? 1 : 0;
        preds.push_back(std::move(p));
      }
    } else if (sg.kind == "cnn-image") {
      fs::path path = sg.model.empty() ? fs::path(sg.work) / "models" / "cnn_image.bin" : fs::path(sg.model);
      auto model = pss::neural::load_image_cnn<Scalar>(path);
      for (std::size_t i = 0; i < view.streams.size(); ++i) {
        std::vector<const pss::imaging::Binary224*> pages;
        for (const auto& p : view.streams[i]->pages) pages.push_back(&p.image);
        auto probs = pss::neural::predict_binary(
            model.net, 0, model.net.layers.size(), pages.size(),
            [&](const std::vector<std::size_t>& idx) {
              return pss::neural::gather_images<Scalar>(pages, idx);
            },
            model.config.batch);
        std::vector<int> p(probs.size());
        for (std::size_t pi = 0; pi < probs.size(); ++pi) p[pi] = probs[pi] > 0.5 ? 1 : 0;
        preds.push_back(std::move(p));
      }
    } else if (sg.kind == "fusion") {
      fs::path path = sg.model.empty() ? fs::path(sg.work) / "models" / "fusion.bin" : fs::path(sg.model);
      fs::path text_path =
          sg.text_model.empty() ? fs::path(sg.work) / "models" / "cnn_text.bin" : fs::path(sg.text_model);
      fs::path image_path =
          sg.image_model.empty() ? fs::path(sg.work) / "models" / "cnn_image.bin" : fs::path(sg.image_model);
      auto model = pss::neural::load_fusion_mlp<Scalar>(path);
      auto [train_thetas, test_thetas] = cached_thetas(sg.work, w.data, lda_path);
      auto [train_tp, test_tp] =
          cached_penultimates(sg.work, w.data, "textpen", text_path, "train-cnn-text");
      auto [train_ip, test_ip] =
          cached_penultimates(sg.work, w.data, "imagepen", image_path, "train-cnn-image");
      pss::pipeline::FusionLayout layout{
          static_cast<int>(train_tp.at(0).at(0).size()),
          static_cast<int>(train_thetas.at(0).at(0).size()),
          static_cast<int>(train_ip.at(0).at(0).size())};
      if (layout.total_dim() != model.config.input_dim)
        throw std::runtime_error("fusion model expects input dim " +
                                 std::to_string(model.config.input_dim) + " but caches give " +
                                 std::to_string(layout.total_dim()));
      std::size_t train_i = 0, test_i = 0;
      for (std::size_t i = 0; i < view.streams.size(); ++i) {
        std::size_t si = view.is_test[i] ? test_i++ : train_i++;
        const auto& tp = view.is_test[i] ? test_tp[si] : train_tp[si];
        const auto& th = view.is_test[i] ? test_thetas[si] : train_thetas[si];
        const auto& ip = view.is_test[i] ? test_ip[si] : train_ip[si];
        std::vector<std::vector<Scalar>> vecs;
        for (std::size_t pi = 0; pi < tp.size(); ++pi)
          vecs.push_back(pss::pipeline::build_fusion_vector(tp, th, ip, pi, layout));
        auto probs = pss::neural::predict_binary(
            model.net, 0, model.net.layers.size(), vecs.size(),
            [&](const std::vector<std::size_t>& idx) {
              return pss::neural::gather_rows<Scalar>(vecs, idx);
            },
            model.config.batch);
        std::vector<int> p(probs.size());
        for (std::size_t pi = 0; pi < probs.size(); ++pi) p[pi] = probs[pi] > 0.5 ? 1 : 0;
        preds.push_back(std::move(p));
      }
    } else {
      throw std::runtime_error("unknown --kind '" + sg.kind +
                               "' (expected svm, cnn-text, cnn-image or fusion)");
    }

    std::vector<pss::pipeline::SegmentationResult> segments;
    std::size_t docs = 0;
    for (std::size_t i = 0; i < view.streams.size(); ++i) {
      segments.push_back(
          pss::pipeline::segment_stream(view.streams[i]->stream_id, std::move(preds[i])));
      docs += segments.back().documents.size();
    }
    pss::pipeline::write_segments_csv(segments, sg.out);
    std::cout << "wrote " << segments.size() << " streams (" << docs << " documents) to " << sg.out
              << "\n";
  });

  // --- evaluate ---
  auto* ev = app.add_subcommand("evaluate", "score predicted boundaries against gold labels");
  struct {
    std::string work, segments, split = "test", out;
  } eva;
  ev->add_option("--work", eva.work, "workspace directory")->required();
  ev->add_option("--segments", eva.segments, "boundary csv from segment")->required();
  ev->add_option("--split", eva.split, "train, test or all");
  ev->add_option("--out", eva.out, "also write the report to this file");
  ev->callback([&] {
    auto w = pss::workspace::load(eva.work);
    auto view = split_view(w.data, eva.split);
    auto segments = pss::pipeline::read_segments_csv(eva.segments);
    std::map<std::string, const pss::pipeline::SegmentationResult*> by_id;
    for (const auto& s : segments) by_id[s.stream_id] = &s;
    std::vector<std::vector<int>> preds;
    for (const auto* stream : view.streams) {
      auto it = by_id.find(stream->stream_id);
      if (it == by_id.end())
        throw std::runtime_error("segments file has no entry for stream " + stream->stream_id);
      preds.push_back(pss::pipeline::predictions_from_segments(
          *it->second, static_cast<int>(stream->pages.size())));
    }
    auto report = pss::pipeline::evaluate_streams(copy_streams(view), std::move(preds));
    auto text = pss::pipeline::format_report(report);
    std::cout << text;
    if (!eva.out.empty()) pss::io::write_file_text(eva.out, text);
  });

  // --- experiment ---
  auto* ex = app.add_subcommand("experiment", "run the full staged comparison protocol");
  struct {
    std::string config, out, manifest;
    std::uint64_t seed = 0;
    bool seed_set = false, quiet = false;
  } exp;
  ex->add_option("--config", exp.config, "experiment config file (flat key = value)");
  ex->add_option("--out", exp.out, "output directory for reports and models")->required();
  ex->add_option("--manifest", exp.manifest, "override data.manifest from the config");
  ex->add_option("--seed", exp.seed, "override the config seed")
      ->each([&](const std::string&) { exp.seed_set = true; });
  ex->add_flag("--quiet", exp.quiet, "suppress progress lines");
  ex->callback([&] {
    pss::pipeline::ExperimentSettings settings;
    if (!exp.config.empty()) {
      auto cfg = pss::config::Config::parse_file(exp.config);
      settings = pss::pipeline::ExperimentSettings::from_config(cfg);
    }
    if (exp.seed_set) settings.seed = exp.seed;
    if (!exp.manifest.empty()) settings.manifest = exp.manifest;
    if (!exp.quiet) settings.progress = &std::cerr;
    pss::pipeline::run_experiment(settings, exp.out);
    std::cout << pss::io::read_file_text(fs::path(exp.out) / "report.txt");
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
