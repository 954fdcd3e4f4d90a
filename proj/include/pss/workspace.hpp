#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pss/config.hpp"
#include "pss/corpus.hpp"
#include "pss/io.hpp"
#include "pss/pipeline.hpp"

namespace pss::workspace {

// A prepared workspace is a directory holding one split dataset in ready-to-
// train form, so the staged commands can run without re-reading raw images:
//   meta.txt    key = value settings recorded at prepare time
//   pages.tsv   stream_id, page_index, role, label, space-joined stems
//   images.bin  one packed 224x224 page per pages.tsv row, in row order
//   vocab.tsv   vocabulary built from the training pages
// Trained models conventionally go to <dir>/models, derived per-page feature
// caches to <dir>/cache keyed by the hash of the model that produced them.

struct Meta {
  textproc::Language language = textproc::Language::english;
  int min_count = 3;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;
};

inline void save(const std::filesystem::path& dir, const pipeline::PreparedData& data,
                 const Meta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::ostringstream ms;
  ms << "language = " << textproc::to_string(meta.language) << "\n";
  ms << "min_count = " << meta.min_count << "\n";
  ms << "train_fraction = " << meta.train_fraction << "\n";
  ms << "seed = " << meta.seed << "\n";
  io::write_file_text(dir / "meta.txt", ms.str());

  std::ostringstream rows;
  io::BinaryWriter images(dir / "images.bin");
  auto emit_side = [&](const std::vector<corpus::PageStream>& streams,
                       const std::vector<std::vector<std::vector<std::string>>>& stems,
                       const char* role) {
    for (std::size_t s = 0; s < streams.size(); ++s) {
      for (std::size_t p = 0; p < streams[s].pages.size(); ++p) {
        const auto& page = streams[s].pages[p];
        rows << page.stream_id << '\t' << page.page_index << '\t' << role << '\t'
             << (page.label ? corpus::to_string(*page.label) : std::string("?")) << '\t';
        const auto& toks = stems[s][p];
        for (std::size_t t = 0; t < toks.size(); ++t) {
          if (t) rows << ' ';
          rows << toks[t];
        }
        rows << '\n';
        auto packed = imaging::pack(page.image);
        images.bytes(packed.data(), packed.size());
      }
    }
  };
  emit_side(data.train, data.train_stems, "train");
  emit_side(data.test, data.test_stems, "test");
  images.close();
  io::write_file_text(dir / "pages.tsv", rows.str());
  data.vocab.save(dir / "vocab.tsv");
}

namespace detail {

inline std::vector<std::string> split_tab(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace detail

struct Loaded {
  Meta meta;
  pipeline::PreparedData data;
};

inline Loaded load(const std::filesystem::path& dir) {
  Loaded w;
  config::Config meta_cfg = config::Config::parse_file(dir / "meta.txt");
  w.meta.language = textproc::parse_language(meta_cfg.take_string("language", "english"));
  w.meta.min_count = meta_cfg.take_int("min_count", 3);
  w.meta.train_fraction = meta_cfg.take_double("train_fraction", 0.8);
  w.meta.seed = meta_cfg.take_u64("seed", 1);
  meta_cfg.ensure_consumed();
  w.data.language = w.meta.language;
  w.data.min_count = w.meta.min_count;
  w.data.vocab = textproc::Vocabulary::load(dir / "vocab.tsv");

  auto image_bytes = io::read_file_bytes(dir / "images.bin");
  constexpr std::size_t block = 8 + imaging::kPackedBytes;
  if (image_bytes.size() % block != 0)
    throw std::runtime_error("workspace: images.bin size is not a whole number of pages");
  std::size_t n_images = image_bytes.size() / block;

  std::istringstream in(io::read_file_text(dir / "pages.tsv"));
  std::string line;
  std::size_t row = 0;
  // Streams arrive grouped (pages.tsv is written in stream order per side).
  auto append_page = [&](std::vector<corpus::PageStream>& streams,
                         std::vector<std::vector<std::vector<std::string>>>& stems,
                         corpus::PageRecord page, std::vector<std::string> toks) {
    if (streams.empty() || streams.back().stream_id != page.stream_id) {
      streams.push_back(corpus::PageStream{page.stream_id, {}});
      stems.emplace_back();
    }
    streams.back().pages.push_back(std::move(page));
    stems.back().push_back(std::move(toks));
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = detail::split_tab(line);
    if (fields.size() != 5)
      throw std::runtime_error("workspace: bad pages.tsv row " + std::to_string(row + 1));
    if (row >= n_images) throw std::runtime_error("workspace: more pages.tsv rows than images");
    corpus::PageRecord page;
    page.stream_id = fields[0];
    page.page_index = std::stoi(fields[1]);
    if (fields[3] != "?") page.label = corpus::parse_label(fields[3]);
    page.image = imaging::unpack(image_bytes.data() + row * block, block);
    std::vector<std::string> toks;
    std::istringstream ts(fields[4]);
    std::string tok;
    while (ts >> tok) toks.push_back(std::move(tok));
    if (fields[2] == "train")
      append_page(w.data.train, w.data.train_stems, std::move(page), std::move(toks));
    else if (fields[2] == "test")
      append_page(w.data.test, w.data.test_stems, std::move(page), std::move(toks));
    else
      throw std::runtime_error("workspace: unknown role '" + fields[2] + "' in pages.tsv");
    ++row;
  }
  if (row != n_images) throw std::runtime_error("workspace: fewer pages.tsv rows than images");
  return w;
}

// --- per-page feature caches --------------------------------------------------
// Flat binary table of one vector per page (training pages first, then test,
// both in pages.tsv order). Cache files are named after the producing model
// file's content hash, so a retrained model never pairs with stale features.

inline constexpr char kCacheMagic[9] = "PSSCACH1";

inline std::string content_key(const std::filesystem::path& model_file) {
  auto bytes = io::read_file_bytes(model_file);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(io::fnv1a(bytes.data(), bytes.size())));
  return buf;
}

inline std::filesystem::path cache_path(const std::filesystem::path& dir, const std::string& kind,
                                        const std::string& key) {
  return dir / "cache" / (kind + "_" + key + ".bin");
}

template <typename T>
void save_vector_cache(const std::filesystem::path& path,
                       const std::vector<std::vector<T>>& rows) {
  std::filesystem::create_directories(path.parent_path());
  io::BinaryWriter w(path);
  w.magic(kCacheMagic);
  w.u8(static_cast<std::uint8_t>(sizeof(T)));
  w.u64(rows.size());
  w.u64(rows.empty() ? 0 : rows.front().size());
  for (const auto& r : rows) {
    if (r.size() != rows.front().size())
      throw std::invalid_argument("save_vector_cache: ragged rows");
    for (T v : r) {
      if constexpr (sizeof(T) == 4)
        w.f32(static_cast<float>(v));
      else
        w.f64(static_cast<double>(v));
    }
  }
  w.close();
}

template <typename T>
std::vector<std::vector<T>> load_vector_cache(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kCacheMagic);
  if (r.u8() != sizeof(T)) throw std::runtime_error("cache " + path.string() + ": wrong scalar width");
  std::uint64_t n = r.u64(), dim = r.u64();
  std::vector<std::vector<T>> rows(n, std::vector<T>(dim));
  for (auto& row : rows)
    for (auto& v : row) {
      if constexpr (sizeof(T) == 4)
        v = static_cast<T>(r.f32());
      else
        v = static_cast<T>(r.f64());
    }
  return rows;
}

template <typename T>
std::vector<std::vector<T>> load_model_cache(const std::filesystem::path& dir,
                                             const std::string& kind,
                                             const std::filesystem::path& model_file,
                                             const std::string& producing_command) {
  auto path = cache_path(dir, kind, content_key(model_file));
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing " + kind + " cache for " + model_file.string() + "; run " +
                             producing_command + " first");
  return load_vector_cache<T>(path);
}

/// Splits a flat all-pages row list back into per-stream, per-page lists,
/// train side first.
template <typename T>
std::pair<std::vector<std::vector<std::vector<T>>>, std::vector<std::vector<std::vector<T>>>>
unflatten(const pipeline::PreparedData& data, const std::vector<std::vector<T>>& flat) {
  if (flat.size() != data.n_train_pages() + data.n_test_pages())
    throw std::runtime_error("cached feature table does not match workspace page count");
  std::size_t at = 0;
  auto side = [&](const std::vector<corpus::PageStream>& streams) {
    std::vector<std::vector<std::vector<T>>> out;
    for (const auto& s : streams) {
      std::vector<std::vector<T>> pages;
      for (std::size_t p = 0; p < s.pages.size(); ++p) pages.push_back(flat[at++]);
      out.push_back(std::move(pages));
    }
    return out;
  };
  auto train = side(data.train);
  auto test = side(data.test);
  return {std::move(train), std::move(test)};
}

}  // namespace pss::workspace
