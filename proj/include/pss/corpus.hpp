#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pss/image_io.hpp"
#include "pss/imaging.hpp"
#include "pss/io.hpp"
#include "pss/rng.hpp"

namespace pss::corpus {

/// ND marks the first page of a document (the positive class), SD a
/// continuation page.
enum class Label : std::uint8_t { sd = 0, nd = 1 };

inline Label parse_label(const std::string& s) {
  if (s == "ND") return Label::nd;
  if (s == "SD") return Label::sd;
  throw std::invalid_argument("unknown label: " + s);
}

inline std::string to_string(Label l) { return l == Label::nd ? "ND" : "SD"; }

struct PageRecord {
  std::string stream_id;
  int page_index = 0;
  imaging::Binary224 image;
  std::string text;
  std::optional<Label> label;
};

struct PageStream {
  std::string stream_id;
  std::vector<PageRecord> pages;

  bool labeled() const { return !pages.empty() && pages.front().label.has_value(); }
};

struct DatasetSplit {
  std::vector<PageStream> train;
  std::vector<PageStream> test;
};

struct SyntheticStreamParams {
  int n_streams = 10;
  int pages_per_stream = 50;
  double doc_length_mean = 3.0;
  int header_vocab_size = 200;
  int body_vocab_size = 2000;
  int n_latent_topics = 5;
  double pixel_noise_rate = 0.01;
  std::uint64_t seed = 1;
};

// --- manifest ingestion ------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

inline imaging::Binary224 load_page_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file: " + path.string());
  char magic[8] = {};
  in.read(magic, 8);
  in.close();
  if (in.gcount() == 8 && std::equal(magic, magic + 8, imaging::kBinaryMagic))
    return imaging::load_binary224(path);
  return imaging::prepare_page(imaging::read_image(path));
}

}  // namespace detail

inline constexpr const char* kManifestHeader = "stream_id,page_index,image,text,label";

/// Reads a page-stream manifest CSV. Image and text paths are resolved
/// relative to the manifest's directory; rows may arrive in any order and are
/// sorted by (stream_id, page_index).
inline std::vector<PageStream> load_streams(const std::filesystem::path& manifest_path) {
  std::istringstream in(io::read_file_text(manifest_path));
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("manifest is empty: " + manifest_path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw std::runtime_error("manifest header mismatch in " + manifest_path.string() +
                             " (expected \"" + kManifestHeader + "\")");

  std::filesystem::path base = manifest_path.parent_path();
  std::map<std::string, std::vector<PageRecord>> by_stream;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_csv_row(line);
    auto fail = [&](const std::string& what) {
      throw std::runtime_error("manifest " + manifest_path.string() + " line " +
                               std::to_string(line_no) + ": " + what);
    };
    if (fields.size() != 5) fail("expected 5 fields, got " + std::to_string(fields.size()));
    PageRecord rec;
    rec.stream_id = fields[0];
    if (rec.stream_id.empty()) fail("empty stream_id");
    try {
      std::size_t pos = 0;
      rec.page_index = std::stoi(fields[1], &pos);
      if (pos != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail("bad page_index \"" + fields[1] + "\" in stream " + rec.stream_id);
    }
    if (rec.page_index < 0) fail("negative page_index in stream " + rec.stream_id);
    try {
      rec.image = detail::load_page_image(base / fields[2]);
    } catch (const std::exception& e) {
      fail("stream " + rec.stream_id + ": " + e.what());
    }
    try {
      rec.text = io::read_file_text(base / fields[3]);
    } catch (const std::exception& e) {
      fail("stream " + rec.stream_id + ": " + e.what());
    }
    if (!fields[4].empty()) {
      try {
        rec.label = parse_label(fields[4]);
      } catch (const std::exception& e) {
        fail("stream " + rec.stream_id + ": " + e.what());
      }
    }
    by_stream[rec.stream_id].push_back(std::move(rec));
  }
  if (by_stream.empty())
    throw std::runtime_error("manifest has no data rows: " + manifest_path.string());

  std::vector<PageStream> streams;
  streams.reserve(by_stream.size());
  for (auto& [id, pages] : by_stream) {
    std::sort(pages.begin(), pages.end(),
              [](const PageRecord& a, const PageRecord& b) { return a.page_index < b.page_index; });
    for (std::size_t i = 0; i < pages.size(); ++i) {
      if (pages[i].page_index != static_cast<int>(i))
        throw std::runtime_error("stream " + id + ": page_index values not contiguous from 0 (saw " +
                                 std::to_string(pages[i].page_index) + " at position " +
                                 std::to_string(i) + ")");
    }
    std::size_t n_labeled = 0;
    for (const auto& p : pages)
      if (p.label) ++n_labeled;
    if (n_labeled != 0 && n_labeled != pages.size())
      throw std::runtime_error("stream " + id + ": partially labeled (labels must cover all pages or none)");
    if (n_labeled != 0 && pages.front().label != Label::nd)
      throw std::runtime_error("stream " + id + ": page 0 must be labeled ND");
    streams.push_back(PageStream{id, std::move(pages)});
  }
  return streams;
}

// --- stream-level splitting --------------------------------------------------

/// Splits at stream granularity: floor(train_fraction * n) streams go to
/// train, the rest to test. Deterministic for a fixed seed; both halves are
/// returned sorted by stream_id.
inline DatasetSplit split_streams(std::vector<PageStream> streams, double train_fraction,
                                  std::uint64_t seed) {
  if (streams.size() < 2)
    throw std::invalid_argument("split_streams: need at least 2 streams");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split_streams: train_fraction must be in (0,1)");
  std::sort(streams.begin(), streams.end(),
            [](const PageStream& a, const PageStream& b) { return a.stream_id < b.stream_id; });
  for (std::size_t i = 1; i < streams.size(); ++i)
    if (streams[i].stream_id == streams[i - 1].stream_id)
      throw std::invalid_argument("split_streams: duplicate stream_id " + streams[i].stream_id);

  std::vector<std::size_t> order(streams.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "stream_split"));
  rng.shuffle(order);

  std::size_t n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(streams.size())));
  if (n_train == 0) n_train = 1;
  if (n_train == streams.size()) n_train = streams.size() - 1;

  std::vector<char> in_train(streams.size(), 0);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = 1;

  DatasetSplit split;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (in_train[i])
      split.train.push_back(std::move(streams[i]));
    else
      split.test.push_back(std::move(streams[i]));
  }
  return split;
}

// --- synthetic stream generator ----------------------------------------------

namespace detail {

inline std::string synth_word(const char* prefix, int id) {
  static const char* const kSyllables[16] = {"ba", "ce", "di", "fo", "gu", "ha", "je", "ki",
                                             "lo", "mu", "na", "pe", "ri", "so", "tu", "va"};
  std::string w(prefix);
  for (int shift = 12; shift >= 0; shift -= 4) w += kSyllables[(id >> shift) & 15];
  return w;
}

// Zipf-like sampler over ranks 0..n-1 with exponent 1.1; heavier head terms
// make token frequencies uneven, as in natural text.
class ZipfSampler {
 public:
  explicit ZipfSampler(int n) : cum_(static_cast<std::size_t>(n)) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += 1.0 / std::pow(static_cast<double>(i + 1), 1.1);
      cum_[static_cast<std::size_t>(i)] = acc;
    }
    total_ = acc;
  }

  int draw(Rng& rng) const {
    double u = rng.uniform() * total_;
    auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
    if (it == cum_.end()) --it;
    return static_cast<int>(it - cum_.begin());
  }

 private:
  std::vector<double> cum_;
  double total_ = 0.0;
};

inline void draw_ink_block(imaging::Binary224& img, int x0, int x1, int y0, int y1, double density,
                           Rng& rng) {
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (rng.uniform() < density) img.at(x, y) = 1;
}

}  // namespace detail

/// Generates labeled streams with both modalities carrying boundary signal:
/// first pages lean on a header vocabulary and carry a dense top band, body
/// pages draw from their document's topic slice of the body vocabulary.
/// Deterministic per seed; each stream consumes an independent derived rng.
inline std::vector<PageStream> generate_synthetic_streams(const SyntheticStreamParams& params) {
  if (params.n_streams < 1 || params.pages_per_stream < 1)
    throw std::invalid_argument("generate_synthetic_streams: counts must be positive");
  if (params.doc_length_mean < 1.0)
    throw std::invalid_argument("generate_synthetic_streams: doc_length_mean must be >= 1");
  if (params.header_vocab_size < 1 || params.body_vocab_size < 1 || params.n_latent_topics < 1)
    throw std::invalid_argument("generate_synthetic_streams: vocabulary sizes must be positive");
  if (params.body_vocab_size < params.n_latent_topics)
    throw std::invalid_argument("generate_synthetic_streams: body vocabulary smaller than topic count");
  if (params.pixel_noise_rate < 0.0 || params.pixel_noise_rate > 1.0)
    throw std::invalid_argument("generate_synthetic_streams: pixel_noise_rate outside [0,1]");

  const int slice = params.body_vocab_size / params.n_latent_topics;
  detail::ZipfSampler header_dist(params.header_vocab_size);
  detail::ZipfSampler body_dist(slice);

  std::vector<PageStream> streams;
  streams.reserve(static_cast<std::size_t>(params.n_streams));
  for (int s = 0; s < params.n_streams; ++s) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%04d", s);
    PageStream stream;
    stream.stream_id = buf;
    Rng rng(derive_seed(params.seed, "synth_stream", static_cast<std::uint64_t>(s)));

    // Document boundaries: geometric lengths, last document truncated.
    std::vector<int> doc_of_page(static_cast<std::size_t>(params.pages_per_stream));
    std::vector<int> topic_of_doc;
    int page = 0, doc = 0;
    while (page < params.pages_per_stream) {
      int len = static_cast<int>(rng.geometric_length(params.doc_length_mean));
      topic_of_doc.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(params.n_latent_topics))));
      for (int i = 0; i < len && page < params.pages_per_stream; ++i)
        doc_of_page[static_cast<std::size_t>(page++)] = doc;
      ++doc;
    }

    for (int p = 0; p < params.pages_per_stream; ++p) {
      PageRecord rec;
      rec.stream_id = stream.stream_id;
      rec.page_index = p;
      bool is_nd = (p == 0) || (doc_of_page[static_cast<std::size_t>(p)] !=
                                doc_of_page[static_cast<std::size_t>(p - 1)]);
      rec.label = is_nd ? Label::nd : Label::sd;
      int topic = topic_of_doc[static_cast<std::size_t>(doc_of_page[static_cast<std::size_t>(p)])];

      // Text: 12..28 tokens. First pages take >= 30% from the header
      // vocabulary; continuation pages occasionally pick up a stray header
      // token so the unigram signal stays imperfect.
      int n_tokens = rng.uniform_int(12, 28);
      int n_header = 0;
      if (is_nd) {
        double frac = rng.uniform(0.30, 0.65);
        n_header = static_cast<int>(std::lround(frac * n_tokens));
        int floor_header = static_cast<int>(std::ceil(0.30 * n_tokens));
        n_header = std::clamp(n_header, floor_header, n_tokens);
      } else if (rng.bernoulli(0.12)) {
        n_header = rng.uniform_int(1, 2);
      }
      std::vector<std::string> tokens;
      tokens.reserve(static_cast<std::size_t>(n_tokens));
      for (int i = 0; i < n_header; ++i)
        tokens.push_back(detail::synth_word("qa", header_dist.draw(rng)));
      for (int i = n_header; i < n_tokens; ++i)
        tokens.push_back(detail::synth_word("xo", topic * slice + body_dist.draw(rng)));
      rng.shuffle(tokens);
      std::string text;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) text.push_back(i % 8 == 7 ? '\n' : ' ');
        text += tokens[i];
      }
      text.push_back('\n');
      rec.text = std::move(text);

      // Image: first pages carry a dense top band; every page gets body text
      // lines, and some continuation pages start their lines near the top as
      // visual confusers.
      imaging::Binary224& img = rec.image;
      int body_y0 = 44;
      if (is_nd) {
        detail::draw_ink_block(img, 20, 200, 8, 26, 0.82, rng);
      } else if (rng.bernoulli(0.22)) {
        body_y0 = 14;
      }
      int n_lines = rng.uniform_int(7, 10);
      for (int li = 0; li < n_lines; ++li) {
        int y0 = body_y0 + li * 18;
        if (y0 + 6 > 214) break;
        int len = rng.uniform_int(120, 185);
        detail::draw_ink_block(img, 16, 16 + len, y0, y0 + 5, 0.55, rng);
      }
      if (params.pixel_noise_rate > 0.0) {
        for (int y = 0; y < imaging::kPageSide; ++y)
          for (int x = 0; x < imaging::kPageSide; ++x)
            if (rng.uniform() < params.pixel_noise_rate) img.at(x, y) ^= 1;
      }
      stream.pages.push_back(std::move(rec));
    }
    streams.push_back(std::move(stream));
  }
  return streams;
}

/// Materializes streams as a manifest corpus (PGM images + text files) laid
/// out for load_streams.
inline void write_corpus(const std::vector<PageStream>& streams,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "text");
  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (const auto& stream : streams) {
    for (const auto& page : stream.pages) {
      std::string base = stream.stream_id + "_" + std::to_string(page.page_index);
      std::string img_rel = "images/" + base + ".pgm";
      std::string txt_rel = "text/" + base + ".txt";
      imaging::write_pgm(imaging::to_gray_rendering(page.image), dir / img_rel);
      io::write_file_text(dir / txt_rel, page.text);
      manifest << detail::csv_escape(stream.stream_id) << ',' << page.page_index << ','
               << detail::csv_escape(img_rel) << ',' << detail::csv_escape(txt_rel) << ','
               << (page.label ? to_string(*page.label) : "") << '\n';
    }
  }
  io::write_file_text(dir / "manifest.csv", manifest.str());
}

}  // namespace pss::corpus
