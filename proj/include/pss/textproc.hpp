#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pss/io.hpp"

namespace pss::textproc {

enum class Language { english, german, none };

inline Language parse_language(const std::string& s) {
  if (s == "english") return Language::english;
  if (s == "german") return Language::german;
  if (s == "none") return Language::none;
  throw std::invalid_argument("unknown language: " + s);
}

inline std::string to_string(Language lang) {
  switch (lang) {
    case Language::english: return "english";
    case Language::german: return "german";
    case Language::none: return "none";
  }
  return "none";
}

// --- tokenization ------------------------------------------------------------

namespace detail {

// Decodes one UTF-8 code point; malformed bytes are consumed one at a time and
// reported as U+FFFD so OCR noise cannot derail tokenization.
inline std::uint32_t utf8_next(const std::string& s, std::size_t& i) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) {
    ++i;
    return c;
  }
  int extra = 0;
  std::uint32_t cp = 0;
  if ((c & 0xe0) == 0xc0) {
    extra = 1;
    cp = c & 0x1f;
  } else if ((c & 0xf0) == 0xe0) {
    extra = 2;
    cp = c & 0x0f;
  } else if ((c & 0xf8) == 0xf0) {
    extra = 3;
    cp = c & 0x07;
  } else {
    ++i;
    return 0xfffd;
  }
  if (i + extra >= s.size()) {
    ++i;
    return 0xfffd;
  }
  for (int k = 1; k <= extra; ++k) {
    unsigned char cc = static_cast<unsigned char>(s[i + k]);
    if ((cc & 0xc0) != 0x80) {
      ++i;
      return 0xfffd;
    }
    cp = (cp << 6) | (cc & 0x3f);
  }
  i += 1 + extra;
  return cp;
}

inline void utf8_append(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

inline bool is_word_cp(std::uint32_t cp) {
  if (cp < 0x80)
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
  if (cp >= 0xc0 && cp <= 0xff) return cp != 0xd7 && cp != 0xf7;  // Latin-1 letters
  if (cp >= 0x100 && cp <= 0x17f) return true;                    // Latin Extended-A
  return false;
}

inline std::uint32_t lower_cp(std::uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  if (cp >= 0xc0 && cp <= 0xde && cp != 0xd7) return cp + 0x20;
  if (cp >= 0x100 && cp <= 0x137 && cp % 2 == 0) return cp + 1;
  if (cp >= 0x139 && cp <= 0x148 && cp % 2 == 1) return cp + 1;
  if (cp >= 0x14a && cp <= 0x177 && cp % 2 == 0) return cp + 1;
  if (cp == 0x178) return 0xff;
  if (cp >= 0x179 && cp <= 0x17e && cp % 2 == 1) return cp + 1;
  return cp;
}

}  // namespace detail

/// Splits text into lowercase maximal runs of letters/digits, order preserved.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    std::uint32_t cp = detail::utf8_next(text, i);
    if (detail::is_word_cp(cp)) {
      detail::utf8_append(current, detail::lower_cp(cp));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Replaces every decimal digit with '#'.
inline std::string mask_digits(const std::string& token) {
  std::string out = token;
  for (char& c : out)
    if (c >= '0' && c <= '9') c = '#';
  return out;
}

// --- Porter stemmer (English) ------------------------------------------------

namespace detail {

// Classic Porter algorithm operating on a lowercase byte buffer. The word is
// b[0..k_]; j_ marks the candidate stem end during suffix tests.
class PorterStemmer {
 public:
  std::string stem(const std::string& word) {
    if (word.size() <= 2) return word;
    b_ = word;
    k_ = static_cast<int>(word.size()) - 1;
    j_ = 0;
    step1ab();
    step1c();
    step2();
    step3();
    step4();
    step5();
    return b_.substr(0, static_cast<std::size_t>(k_) + 1);
  }

 private:
  bool cons(int i) const {
    switch (b_[static_cast<std::size_t>(i)]) {
      case 'a': case 'e': case 'i': case 'o': case 'u': return false;
      case 'y': return i == 0 ? true : !cons(i - 1);
      default: return true;
    }
  }

  // Count of VC sequences in b[0..j], per the [C](VC)^m[V] form.
  int m() const {
    int n = 0, i = 0;
    for (;;) {
      if (i > j_) return n;
      if (!cons(i)) break;
      ++i;
    }
    ++i;
    for (;;) {
      for (;;) {
        if (i > j_) return n;
        if (cons(i)) break;
        ++i;
      }
      ++i;
      ++n;
      for (;;) {
        if (i > j_) return n;
        if (!cons(i)) break;
        ++i;
      }
      ++i;
    }
  }

  bool vowel_in_stem() const {
    for (int i = 0; i <= j_; ++i)
      if (!cons(i)) return true;
    return false;
  }

  bool double_cons(int i) const {
    if (i < 1) return false;
    if (b_[static_cast<std::size_t>(i)] != b_[static_cast<std::size_t>(i - 1)]) return false;
    return cons(i);
  }

  // cvc at position i, where the final consonant is not w, x or y.
  bool cvc(int i) const {
    if (i < 2 || !cons(i) || cons(i - 1) || !cons(i - 2)) return false;
    char ch = b_[static_cast<std::size_t>(i)];
    return ch != 'w' && ch != 'x' && ch != 'y';
  }

  bool ends(const char* s) {
    int l = static_cast<int>(std::char_traits<char>::length(s));
    if (l > k_ + 1) return false;
    if (b_.compare(static_cast<std::size_t>(k_ - l + 1), static_cast<std::size_t>(l), s) != 0)
      return false;
    j_ = k_ - l;
    return true;
  }

  void set_to(const char* s) {
    int l = static_cast<int>(std::char_traits<char>::length(s));
    b_.replace(static_cast<std::size_t>(j_ + 1), b_.size(), s);
    k_ = j_ + l;
  }

  void replace_if_m(const char* s) {
    if (m() > 0) set_to(s);
  }

  void step1ab() {
    if (b_[static_cast<std::size_t>(k_)] == 's') {
      if (ends("sses"))
        k_ -= 2;
      else if (ends("ies"))
        set_to("i");
      else if (b_[static_cast<std::size_t>(k_ - 1)] != 's')
        --k_;
    }
    if (ends("eed")) {
      if (m() > 0) --k_;
    } else if ((ends("ed") || ends("ing")) && vowel_in_stem()) {
      k_ = j_;
      if (ends("at"))
        set_to("ate");
      else if (ends("bl"))
        set_to("ble");
      else if (ends("iz"))
        set_to("ize");
      else if (double_cons(k_)) {
        --k_;
        char ch = b_[static_cast<std::size_t>(k_)];
        if (ch == 'l' || ch == 's' || ch == 'z') ++k_;
      } else if (m() == 1 && cvc(k_)) {
        set_to("e");
      }
    }
  }

  void step1c() {
    if (ends("y") && vowel_in_stem()) b_[static_cast<std::size_t>(k_)] = 'i';
  }

  void step2() {
    if (k_ < 1) return;
    switch (b_[static_cast<std::size_t>(k_ - 1)]) {
      case 'a':
        if (ends("ational")) { replace_if_m("ate"); break; }
        if (ends("tional")) { replace_if_m("tion"); break; }
        break;
      case 'c':
        if (ends("enci")) { replace_if_m("ence"); break; }
        if (ends("anci")) { replace_if_m("ance"); break; }
        break;
      case 'e':
        if (ends("izer")) { replace_if_m("ize"); break; }
        break;
      case 'l':
        if (ends("bli")) { replace_if_m("ble"); break; }
        if (ends("alli")) { replace_if_m("al"); break; }
        if (ends("entli")) { replace_if_m("ent"); break; }
        if (ends("eli")) { replace_if_m("e"); break; }
        if (ends("ousli")) { replace_if_m("ous"); break; }
        break;
      case 'o':
        if (ends("ization")) { replace_if_m("ize"); break; }
        if (ends("ation")) { replace_if_m("ate"); break; }
        if (ends("ator")) { replace_if_m("ate"); break; }
        break;
      case 's':
        if (ends("alism")) { replace_if_m("al"); break; }
        if (ends("iveness")) { replace_if_m("ive"); break; }
        if (ends("fulness")) { replace_if_m("ful"); break; }
        if (ends("ousness")) { replace_if_m("ous"); break; }
        break;
      case 't':
        if (ends("aliti")) { replace_if_m("al"); break; }
        if (ends("iviti")) { replace_if_m("ive"); break; }
        if (ends("biliti")) { replace_if_m("ble"); break; }
        break;
      case 'g':
        if (ends("logi")) { replace_if_m("log"); break; }
        break;
      default: break;
    }
  }

  void step3() {
    switch (b_[static_cast<std::size_t>(k_)]) {
      case 'e':
        if (ends("icate")) { replace_if_m("ic"); break; }
        if (ends("ative")) { replace_if_m(""); break; }
        if (ends("alize")) { replace_if_m("al"); break; }
        break;
      case 'i':
        if (ends("iciti")) { replace_if_m("ic"); break; }
        break;
      case 'l':
        if (ends("ical")) { replace_if_m("ic"); break; }
        if (ends("ful")) { replace_if_m(""); break; }
        break;
      case 's':
        if (ends("ness")) { replace_if_m(""); break; }
        break;
      default: break;
    }
  }

  void step4() {
    if (k_ < 1) return;
    switch (b_[static_cast<std::size_t>(k_ - 1)]) {
      case 'a':
        if (ends("al")) break;
        return;
      case 'c':
        if (ends("ance")) break;
        if (ends("ence")) break;
        return;
      case 'e':
        if (ends("er")) break;
        return;
      case 'i':
        if (ends("ic")) break;
        return;
      case 'l':
        if (ends("able")) break;
        if (ends("ible")) break;
        return;
      case 'n':
        if (ends("ant")) break;
        if (ends("ement")) break;
        if (ends("ment")) break;
        if (ends("ent")) break;
        return;
      case 'o':
        if (ends("ion") && j_ >= 0 &&
            (b_[static_cast<std::size_t>(j_)] == 's' || b_[static_cast<std::size_t>(j_)] == 't'))
          break;
        if (ends("ou")) break;
        return;
      case 's':
        if (ends("ism")) break;
        return;
      case 't':
        if (ends("ate")) break;
        if (ends("iti")) break;
        return;
      case 'u':
        if (ends("ous")) break;
        return;
      case 'v':
        if (ends("ive")) break;
        return;
      case 'z':
        if (ends("ize")) break;
        return;
      default:
        return;
    }
    if (m() > 1) k_ = j_;
  }

  void step5() {
    j_ = k_;
    if (b_[static_cast<std::size_t>(k_)] == 'e') {
      int a = m();
      if (a > 1 || (a == 1 && !cvc(k_ - 1))) --k_;
    }
    if (b_[static_cast<std::size_t>(k_)] == 'l' && double_cons(k_) && m() > 1) --k_;
  }

  std::string b_;
  int k_ = 0;
  int j_ = 0;
};

// German light stemmer. Umlauts and eszett are normalized first (a-umlaut -> a,
// o-umlaut -> o, u-umlaut -> u, eszett -> ss) so suffix matching is
// umlaut-insensitive; then one inflectional suffix is stripped, longest first:
//   length >= 6: -en, -er
//   length >= 5: -e, -n, -s
// Lengths are measured after normalization. Behavior is frozen by test vectors.
inline std::string stem_german(const std::string& token) {
  std::string t;
  t.reserve(token.size());
  std::size_t i = 0;
  while (i < token.size()) {
    std::uint32_t cp = utf8_next(token, i);
    switch (cp) {
      case 0xe4: t.push_back('a'); break;
      case 0xf6: t.push_back('o'); break;
      case 0xfc: t.push_back('u'); break;
      case 0xdf: t += "ss"; break;
      default: utf8_append(t, cp); break;
    }
  }
  auto ends_with = [&t](const char* s) {
    std::size_t l = std::char_traits<char>::length(s);
    return t.size() >= l && t.compare(t.size() - l, l, s) == 0;
  };
  if (t.size() >= 6 && (ends_with("en") || ends_with("er"))) {
    t.resize(t.size() - 2);
  } else if (t.size() >= 5 && (ends_with("e") || ends_with("n") || ends_with("s"))) {
    t.resize(t.size() - 1);
  }
  return t;
}

}  // namespace detail

inline std::string stem(const std::string& token, Language lang) {
  switch (lang) {
    case Language::english: {
      detail::PorterStemmer stemmer;
      return stemmer.stem(token);
    }
    case Language::german:
      return detail::stem_german(token);
    case Language::none:
      return token;
  }
  return token;
}

/// Full per-page text pipeline: tokenize, stem, then mask digits.
inline std::vector<std::string> preprocess(const std::string& text, Language lang) {
  std::vector<std::string> out = tokenize(text);
  for (std::string& tok : out) tok = mask_digits(stem(tok, lang));
  return out;
}

// --- sparse vectors and vocabulary -------------------------------------------

/// Sparse feature vector with string feature ids, kept sorted and unique.
struct SparseVector {
  std::vector<std::pair<std::string, double>> entries;

  void set(std::string id, double value) { entries.emplace_back(std::move(id), value); }

  /// Sorts by id and verifies uniqueness; call once after filling.
  void finalize() {
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < entries.size(); ++i)
      if (entries[i].first == entries[i - 1].first)
        throw std::logic_error("SparseVector: duplicate feature id " + entries[i].first);
  }

  double get(const std::string& id) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), id,
                               [](const auto& e, const std::string& key) { return e.first < key; });
    return (it != entries.end() && it->first == id) ? it->second : 0.0;
  }

  bool has(const std::string& id) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), id,
                               [](const auto& e, const std::string& key) { return e.first < key; });
    return it != entries.end() && it->first == id;
  }

  std::size_t size() const { return entries.size(); }
};

/// Frequency-pruned unigram vocabulary; ids are dense and assigned in
/// lexicographic term order.
struct Vocabulary {
  std::vector<std::string> terms;             // id -> term
  std::vector<std::int64_t> frequencies;      // id -> corpus frequency
  std::unordered_map<std::string, int> ids;   // term -> id
  int min_count = 1;

  int size() const { return static_cast<int>(terms.size()); }

  std::optional<int> id_of(const std::string& term) const {
    auto it = ids.find(term);
    if (it == ids.end()) return std::nullopt;
    return it->second;
  }

  void save(const std::filesystem::path& path) const {
    std::ostringstream out;
    for (int i = 0; i < size(); ++i)
      out << terms[static_cast<std::size_t>(i)] << '\t' << i << '\t'
          << frequencies[static_cast<std::size_t>(i)] << '\n';
    io::write_file_text(path, out.str());
  }

  static Vocabulary load(const std::filesystem::path& path, int min_count = 1) {
    Vocabulary v;
    v.min_count = min_count;
    std::istringstream in(io::read_file_text(path));
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::size_t t1 = line.find('\t');
      std::size_t t2 = line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos)
        throw std::runtime_error("malformed vocabulary line " + std::to_string(row) + " in " +
                                 path.string());
      std::string term = line.substr(0, t1);
      int id = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
      std::int64_t freq = std::stoll(line.substr(t2 + 1));
      if (id != row)
        throw std::runtime_error("non-dense vocabulary ids in " + path.string());
      v.terms.push_back(term);
      v.frequencies.push_back(freq);
      v.ids.emplace(std::move(term), id);
      ++row;
    }
    return v;
  }
};

/// Builds the pruned vocabulary over preprocessed pages. Terms with corpus
/// frequency below min_count are dropped.
inline Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& pages,
                                   int min_count) {
  if (pages.empty()) throw std::invalid_argument("build_vocabulary: empty corpus");
  if (min_count < 1) throw std::invalid_argument("build_vocabulary: min_count must be >= 1");
  std::map<std::string, std::int64_t> counts;
  for (const auto& page : pages)
    for (const auto& tok : page) ++counts[tok];
  Vocabulary v;
  v.min_count = min_count;
  for (const auto& [term, freq] : counts) {
    if (freq < min_count) continue;
    int id = static_cast<int>(v.terms.size());
    v.terms.push_back(term);
    v.frequencies.push_back(freq);
    v.ids.emplace(term, id);
  }
  return v;
}

inline Vocabulary build_vocabulary_text(const std::vector<std::string>& raw_pages, int min_count,
                                        Language lang) {
  std::vector<std::vector<std::string>> pages;
  pages.reserve(raw_pages.size());
  for (const auto& text : raw_pages) pages.push_back(preprocess(text, lang));
  return build_vocabulary(pages, min_count);
}

/// Raw frequency counts of in-vocabulary stems on one page; out-of-vocabulary
/// stems are dropped.
inline SparseVector count_vector(const std::vector<std::string>& page_tokens,
                                 const Vocabulary& vocab) {
  std::map<std::string, double> counts;
  for (const auto& tok : page_tokens)
    if (vocab.ids.count(tok)) counts[tok] += 1.0;
  SparseVector v;
  for (auto& [term, c] : counts) v.set(term, c);
  v.finalize();
  return v;
}

inline SparseVector count_vector_text(const std::string& text, const Vocabulary& vocab,
                                      Language lang) {
  return count_vector(preprocess(text, lang), vocab);
}

/// Token ids for the topic model: in-vocabulary stems only, in page order.
inline std::vector<int> token_ids(const std::vector<std::string>& page_tokens,
                                  const Vocabulary& vocab) {
  std::vector<int> out;
  out.reserve(page_tokens.size());
  for (const auto& tok : page_tokens) {
    auto it = vocab.ids.find(tok);
    if (it != vocab.ids.end()) out.push_back(it->second);
  }
  return out;
}

}  // namespace pss::textproc
