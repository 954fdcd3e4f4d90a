#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles/reference.hpp"
#include "pss/pipeline.hpp"
#include "pss/workspace.hpp"

using namespace pss;
using namespace pss::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

corpus::DatasetSplit tiny_split(int n_streams, int pages, std::uint64_t seed) {
  corpus::SyntheticStreamParams params;
  params.n_streams = n_streams;
  params.pages_per_stream = pages;
  params.header_vocab_size = 30;
  params.body_vocab_size = 120;
  params.n_latent_topics = 3;
  params.seed = seed;
  auto streams = corpus::generate_synthetic_streams(params);
  return corpus::split_streams(std::move(streams), 0.7, derive_seed(seed, "split"));
}

}  // namespace

TEST_CASE("kappa and company from a balanced confusion matrix") {
  auto m = metrics_from_counts(45, 5, 5, 45);
  CHECK(m.accuracy == Catch::Approx(0.9));
  CHECK(m.p_expected == Catch::Approx(0.5));
  REQUIRE(m.kappa.has_value());
  CHECK(*m.kappa == Catch::Approx(0.8));
  CHECK(m.total() == 100);
}

TEST_CASE("kappa is undefined when both raters are constant") {
  auto m = metrics_from_counts(10, 0, 0, 0);
  CHECK(m.accuracy == 1.0);
  CHECK(m.p_expected == Catch::Approx(1.0));
  CHECK_FALSE(m.kappa.has_value());
}

TEST_CASE("metrics agree with the direct formula on a grid") {
  for (long long tp : {0, 1, 3})
    for (long long fp : {0, 2})
      for (long long fn : {0, 1})
        for (long long tn : {0, 4}) {
          if (tp + fp + fn + tn == 0) continue;
          auto m = metrics_from_counts(tp, fp, fn, tn);
          auto ref = oracle::kappa_direct(tp, fp, fn, tn);
          CHECK(m.accuracy == Catch::Approx(ref.accuracy));
          CHECK(m.p_expected == Catch::Approx(ref.p_expected));
          CHECK(m.kappa.has_value() == ref.kappa.has_value());
          if (m.kappa && ref.kappa) CHECK(*m.kappa == Catch::Approx(*ref.kappa));
        }
}

TEST_CASE("error shares split false positives from false negatives") {
  auto m = metrics_from_counts(3, 1, 4, 12);
  CHECK(m.fp_error_share == Catch::Approx(0.2));
  CHECK(m.fn_error_share == Catch::Approx(0.8));
  auto clean = metrics_from_counts(3, 0, 0, 12);
  CHECK(clean.fp_error_share == 0.0);
  CHECK(clean.fn_error_share == 0.0);
}

TEST_CASE("metrics validate their inputs") {
  CHECK_THROWS(metrics_from_counts(0, 0, 0, 0));
  CHECK_THROWS(metrics_from_counts(-1, 0, 0, 5));
  CHECK_THROWS(compute_metrics({1, 0}, {1}));
}

TEST_CASE("compute_metrics counts with new-document as positive") {
  auto m = compute_metrics({1, 0, 1, 0}, {1, 1, 0, 0});
  CHECK(m.tp == 1);
  CHECK(m.fn == 1);
  CHECK(m.fp == 1);
  CHECK(m.tn == 1);
}

TEST_CASE("segmentation opens a document at every predicted boundary") {
  auto seg = segment_stream("s", {1, 0, 1, 0, 0});
  REQUIRE(seg.documents.size() == 2);
  CHECK(seg.documents[0].first_page == 0);
  CHECK(seg.documents[0].last_page == 1);
  CHECK(seg.documents[1].first_page == 2);
  CHECK(seg.documents[1].last_page == 4);
  CHECK(seg.stream_id == "s");
}

TEST_CASE("the first page always starts a document") {
  auto seg = segment_stream("s", {0, 0, 0});
  REQUIRE(seg.documents.size() == 1);
  CHECK(seg.documents[0].first_page == 0);
  CHECK(seg.documents[0].last_page == 2);

  auto all_nd = segment_stream("s", {1, 1, 1});
  CHECK(all_nd.documents.size() == 3);

  CHECK_THROWS(segment_stream("s", std::vector<int>{}));
}

TEST_CASE("segments convert back to per-page predictions") {
  auto seg = segment_stream("s", {0, 0, 1, 0, 1});
  auto preds = predictions_from_segments(seg, 5);
  CHECK(preds == std::vector<int>({1, 0, 1, 0, 1}));

  SegmentationResult broken;
  broken.stream_id = "bad";
  broken.documents.push_back({0, 1});
  broken.documents.push_back({3, 4});  // gap at page 2
  CHECK_THROWS_WITH(predictions_from_segments(broken, 5),
                    Catch::Matchers::ContainsSubstring("bad"));
}

TEST_CASE("segment files round-trip through csv") {
  auto dir = temp_dir("pss_pipeline_csv");
  std::vector<SegmentationResult> segs = {segment_stream("a", {1, 0, 1}),
                                          segment_stream("b", {1, 0})};
  auto path = dir / "segments.csv";
  write_segments_csv(segs, path);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "stream_id,doc_id,first_page,last_page");

  auto loaded = read_segments_csv(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].stream_id == "a");
  REQUIRE(loaded[0].documents.size() == 2);
  CHECK(loaded[0].documents[1].first_page == 2);
  REQUIRE(loaded[1].documents.size() == 1);
  CHECK(loaded[1].documents[0].last_page == 1);
  fs::remove_all(dir);
}

TEST_CASE("fusion vectors have the documented widths") {
  FusionLayout full;  // 256-dim penultimates, K topics
  full.k = 50;
  CHECK(full.total_dim() == 1180);
  full.k = 100;
  CHECK(full.total_dim() == 1330);
  FusionLayout tiny{4, 2, 3};
  CHECK(tiny.block_dim() == 8);
  CHECK(tiny.total_dim() == 27);
}

TEST_CASE("fusion blocks replicate across neighboring pages") {
  FusionLayout layout{4, 2, 3};
  std::vector<std::vector<float>> text = {{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 11, 12}};
  std::vector<std::vector<double>> thetas = {{0.8, 0.2}, {0.5, 0.5}, {0.1, 0.9}};
  std::vector<std::vector<float>> image = {{-1, -2, -3}, {-4, -5, -6}, {-7, -8, -9}};

  auto v0 = build_fusion_vector(text, thetas, image, 0, layout);
  auto v1 = build_fusion_vector(text, thetas, image, 1, layout);
  auto v2 = build_fusion_vector(text, thetas, image, 2, layout);
  REQUIRE(v2.size() == 27);

  const std::size_t bd = 8;
  // block b of page p equals block 0 of page p-b
  for (std::size_t i = 0; i < bd; ++i) {
    CHECK(v2[bd + i] == v1[i]);
    CHECK(v2[2 * bd + i] == v0[i]);
    CHECK(v1[bd + i] == v0[i]);
  }
  // image block holds only the current page
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(v0[3 * bd + i] == image[0][i]);
    CHECK(v2[3 * bd + i] == image[2][i]);
  }
}

TEST_CASE("pages before the stream contribute zero blocks with unit distances") {
  FusionLayout layout{2, 2, 2};
  std::vector<std::vector<float>> text = {{1, 2}};
  std::vector<std::vector<double>> thetas = {{0.5, 0.5}};
  std::vector<std::vector<float>> image = {{3, 4}};
  auto v = build_fusion_vector(text, thetas, image, 0, layout);
  REQUIRE(v.size() == 20);
  // current block: features then the maximal-change distance slots
  CHECK(v[0] == 1.0f);
  CHECK(v[4] == 1.0f);  // hellinger slot, no predecessor
  CHECK(v[5] == 1.0f);  // cosine slot
  // the two missing-predecessor blocks are zero except their distance slots
  for (std::size_t b : {1u, 2u}) {
    for (std::size_t i = 0; i < 4; ++i) CHECK(v[b * 6 + i] == 0.0f);
    CHECK(v[b * 6 + 4] == 1.0f);
    CHECK(v[b * 6 + 5] == 1.0f);
  }
}

TEST_CASE("fusion vector validates sizes") {
  FusionLayout layout{2, 2, 2};
  std::vector<std::vector<float>> text = {{1, 2, 3}};  // wrong width
  std::vector<std::vector<double>> thetas = {{0.5, 0.5}};
  std::vector<std::vector<float>> image = {{3, 4}};
  CHECK_THROWS(build_fusion_vector(text, thetas, image, 0, layout));
  CHECK_THROWS(build_fusion_vector(std::vector<std::vector<float>>{{1, 2}}, thetas, image, 1, layout));
}

TEST_CASE("evaluation forces the first page to new-document") {
  corpus::PageStream stream;
  stream.stream_id = "s";
  for (int p = 0; p < 3; ++p) {
    corpus::PageRecord page;
    page.stream_id = "s";
    page.page_index = p;
    page.label = p <= 1 ? corpus::Label::nd : corpus::Label::sd;
    stream.pages.push_back(std::move(page));
  }
  // the model said SD on page 0; evaluation must overrule it
  auto report = evaluate_streams({stream}, {{0, 1, 0}});
  CHECK(report.overall.tp == 2);
  CHECK(report.overall.tn == 1);
  CHECK(report.overall.fp == 0);
  CHECK(report.overall.fn == 0);
  REQUIRE(report.excluding_first.has_value());
  CHECK(report.excluding_first->total() == 2);
  REQUIRE(report.boundaries.size() == 1);
  CHECK(report.boundaries[0].documents.size() == 2);
}

TEST_CASE("evaluation rejects malformed prediction sets") {
  corpus::PageStream stream;
  stream.stream_id = "s";
  corpus::PageRecord page;
  page.stream_id = "s";
  page.page_index = 0;
  page.label = corpus::Label::nd;
  stream.pages.push_back(page);

  CHECK_THROWS(evaluate_streams({stream}, {}));
  CHECK_THROWS(evaluate_streams({stream}, {{1, 0}}));

  corpus::PageStream unlabeled = stream;
  unlabeled.pages[0].label = std::nullopt;
  CHECK_THROWS_WITH(evaluate_streams({unlabeled}, {{1}}),
                    Catch::Matchers::ContainsSubstring("unlabeled"));
}

TEST_CASE("config files parse comments, types, and reject leftovers") {
  auto cfg = config::Config::parse(
      "# a comment\n"
      "lda.k = 7\n"
      "\n"
      "corpus.language = german   # trailing comment\n"
      "svm.c = 0.5\n"
      "image_cnn.frozen = false\n"
      "image_cnn.channels = 2, 4, 8\n"
      "seed = 99\n");
  CHECK(cfg.take_int("lda.k", 50) == 7);
  CHECK(cfg.take_string("corpus.language", "english") == "german");
  CHECK(cfg.take_double("svm.c", 1.0) == 0.5);
  CHECK(cfg.take_bool("image_cnn.frozen", true) == false);
  CHECK(cfg.take_int_list("image_cnn.channels", {}) == std::vector<int>({2, 4, 8}));
  CHECK(cfg.take_u64("seed", 1) == 99);
  CHECK(cfg.take_int("lda.sweeps", 123) == 123);  // fallback for absent keys
  cfg.ensure_consumed();
}

TEST_CASE("config rejects duplicates, bad values, and unknown keys") {
  CHECK_THROWS(config::Config::parse("a = 1\na = 2\n"));
  CHECK_THROWS(config::Config::parse("no equals sign\n"));
  auto bad_int = config::Config::parse("x = notanumber\n");
  CHECK_THROWS(bad_int.take_int("x", 0));
  auto leftover = config::Config::parse("unknown.key = 1\n");
  CHECK_THROWS_WITH(leftover.ensure_consumed(),
                    Catch::Matchers::ContainsSubstring("unknown.key"));
}

TEST_CASE("experiment settings read every recognized key") {
  auto cfg = config::Config::parse(
      "synth.streams = 4\nlda.k = 5\ntext_cnn.dense = 32\nimage_cnn.channels = 2, 2\n"
      "fusion.hidden = 16\nseed = 7\n");
  auto s = ExperimentSettings::from_config(cfg);
  CHECK(s.synth.n_streams == 4);
  CHECK(s.lda.k == 5);
  CHECK(s.text_cnn.dense == 32);
  CHECK(s.image_cnn.channels == std::vector<int>({2, 2}));
  CHECK(s.fusion.hidden == 16);
  CHECK(s.seed == 7);

  auto bad = config::Config::parse("lda.kay = 5\n");
  CHECK_THROWS(ExperimentSettings::from_config(bad));
}

TEST_CASE("prepared data vocabulary comes from training pages only") {
  auto data = prepare_data(tiny_split(6, 8, 11), textproc::Language::english, 2);
  CHECK(data.train.size() == 4);
  CHECK(data.test.size() == 2);
  CHECK(data.vocab.size() > 0);
  REQUIRE(data.train_stems.size() == data.train.size());
  REQUIRE(data.test_stems.size() == data.test.size());
  for (std::size_t si = 0; si < data.train.size(); ++si)
    CHECK(data.train_stems[si].size() == data.train[si].pages.size());
  CHECK(data.n_train_pages() == 4 * 8);
  CHECK(data.n_test_pages() == 2 * 8);
}

TEST_CASE("workspace directories round-trip prepared data") {
  auto dir = temp_dir("pss_workspace_rt");
  auto data = prepare_data(tiny_split(4, 6, 3), textproc::Language::german, 2);
  workspace::Meta meta;
  meta.language = textproc::Language::german;
  meta.min_count = 2;
  meta.train_fraction = 0.7;
  meta.seed = 3;
  workspace::save(dir, data, meta);

  auto loaded = workspace::load(dir);
  CHECK(loaded.meta.language == textproc::Language::german);
  CHECK(loaded.meta.seed == 3);
  REQUIRE(loaded.data.train.size() == data.train.size());
  REQUIRE(loaded.data.test.size() == data.test.size());
  for (std::size_t si = 0; si < data.train.size(); ++si) {
    const auto& a = data.train[si];
    const auto& b = loaded.data.train[si];
    CHECK(a.stream_id == b.stream_id);
    REQUIRE(a.pages.size() == b.pages.size());
    for (std::size_t p = 0; p < a.pages.size(); ++p) {
      CHECK(a.pages[p].label == b.pages[p].label);
      CHECK(a.pages[p].image.pixels == b.pages[p].image.pixels);
    }
  }
  CHECK(loaded.data.train_stems == data.train_stems);
  CHECK(loaded.data.test_stems == data.test_stems);
  CHECK(loaded.data.vocab.size() == data.vocab.size());
  fs::remove_all(dir);
}

TEST_CASE("feature caches are keyed by model file content") {
  auto dir = temp_dir("pss_cache_key");
  auto model_a = dir / "model_a.bin";
  auto model_b = dir / "model_b.bin";
  io::write_file_text(model_a, "first model");
  io::write_file_text(model_b, "second model");
  CHECK(workspace::content_key(model_a) != workspace::content_key(model_b));
  CHECK(workspace::content_key(model_a) == workspace::content_key(model_a));

  std::vector<std::vector<float>> rows = {{1.0f, 2.0f}, {3.0f, 4.0f}};
  auto path = workspace::cache_path(dir, "theta", workspace::content_key(model_a));
  fs::create_directories(path.parent_path());
  workspace::save_vector_cache(path, rows);
  auto back = workspace::load_vector_cache<float>(path);
  CHECK(back == rows);

  auto hit = workspace::load_model_cache<float>(dir, "theta", model_a, "pss train-lda");
  CHECK(hit == rows);
  CHECK_THROWS_WITH(workspace::load_model_cache<float>(dir, "theta", model_b, "pss train-lda"),
                    Catch::Matchers::ContainsSubstring("pss train-lda"));
  fs::remove_all(dir);
}

TEST_CASE("cnn encoding shifts vocabulary ids past pad and oov") {
  auto vocab = textproc::build_vocabulary({{"alpha", "beta", "alpha"}}, 1);
  auto ids = encode_for_cnn({"alpha", "zzz", "beta"}, vocab);
  CHECK(ids == std::vector<int>({2, 1, 3}));  // 0 = pad, 1 = oov
}

TEST_CASE("a miniature experiment produces the full report set") {
  auto dir = temp_dir("pss_experiment_micro");
  ExperimentSettings s;
  s.synth.n_streams = 6;
  s.synth.pages_per_stream = 10;
  s.synth.header_vocab_size = 40;
  s.synth.body_vocab_size = 160;
  s.synth.n_latent_topics = 3;
  s.train_fraction = 0.7;
  s.min_count = 2;
  s.lda.k = 3;
  s.lda.n_sweeps = 40;
  s.lda.fold_in_sweeps = 10;
  s.text_cnn.embed_dim = 8;
  s.text_cnn.filters = 8;
  s.text_cnn.kernel = 3;
  s.text_cnn.dense = 8;
  s.text_cnn.max_seq_len = 24;
  s.text_cnn.lr = 0.005;
  s.text_max_epochs = 8;
  s.image_cnn.channels = {2, 2};
  s.image_cnn.dense = 8;
  s.image_cnn.lr = 0.005;
  s.image_max_epochs = 6;
  s.fusion.hidden = 8;
  s.fusion_max_epochs = 8;
  s.seed = 5;

  auto result = run_experiment(s, dir);

  REQUIRE(result.rows.size() == 7);
  CHECK(result.rows[0].id == "svm_unigrams");
  CHECK(result.rows[1].id == "svm_topics");
  CHECK(result.rows[2].id == "svm_topic_diff");
  CHECK(result.rows[3].id == "svm_predecessor");
  CHECK(result.rows[4].id == "cnn_text");
  CHECK(result.rows[5].id == "cnn_image");
  CHECK(result.rows[6].id == "mlp_fusion");
  CHECK(result.n_train_streams == 4);
  CHECK(result.n_test_streams == 2);
  CHECK((result.majority_class == "ND" || result.majority_class == "SD"));

  for (const char* f :
       {"report.txt", "report.csv", "models/vocab.tsv", "models/lda.bin",
        "models/svm_unigrams.tsv", "models/svm_topics.tsv", "models/svm_topic_diff.tsv",
        "models/svm_predecessor.tsv", "models/cnn_text.bin", "models/cnn_image.bin",
        "models/fusion.bin"}) {
    INFO(f);
    CHECK(fs::exists(dir / f));
  }

  std::ifstream csv(dir / "report.csv");
  std::string line;
  int lines = 0;
  std::getline(csv, line);
  CHECK(line == "row,model,accuracy,kappa,tp,fp,fn,tn,accuracy_excl_first,kappa_excl_first");
  while (std::getline(csv, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 7);

  // every saved model loads back
  auto lda = topics::TopicModel::load(dir / "models/lda.bin");
  CHECK(lda.k == 3);
  auto svm = svm::LinearSvmModel::load(dir / "models/svm_unigrams.tsv");
  CHECK_FALSE(svm.weights.empty());
  auto text = neural::load_text_cnn<float>(dir / "models/cnn_text.bin");
  CHECK(text.config.dense == 8);
  auto image = neural::load_image_cnn<float>(dir / "models/cnn_image.bin");
  CHECK(image.config.channels == std::vector<int>({2, 2}));
  auto fusion = neural::load_fusion_mlp<float>(dir / "models/fusion.bin");
  CHECK(fusion.config.input_dim == FusionLayout{8, 3, 8}.total_dim());
  fs::remove_all(dir);
}
