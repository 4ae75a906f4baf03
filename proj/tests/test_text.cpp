#include <catch_amalgamated.hpp>

#include <filesystem>

#include "sslst/text/filter.hpp"
#include "sslst/text/normalize.hpp"
#include "sslst/text/vocab.hpp"
#include "support/random_text.hpp"

using namespace sslst;
using namespace sslst::text;

TEST_CASE("normalize: examples", "[text]") {
  CHECK(normalize("Hello,  WORLD!", false) == "hello, world!");
  CHECK(normalize("Hello, world!", true) == "hello world");
  CHECK(normalize("", false).empty());
  CHECK(normalize("", true).empty());
  CHECK(normalize("  \t a \n ", false) == "a");
  CHECK(normalize("\xE2\x80\x9CQuote\xE2\x80\x9D \xE2\x80\x94 it\xE2\x80\x99s\xE2\x80\xA6", false) ==
        "\"quote\" - it's...");
  CHECK(normalize("it\xE2\x80\x99s a-b", true) == "its ab");
  CHECK(normalize("\xC3\x89T\xC3\x89", false) == "\xC3\xA9t\xC3\xA9");
}

TEST_CASE("normalize: invalid utf-8 is rejected", "[text]") {
  CHECK_THROWS_AS(normalize("\xFF", false), TextError);
  CHECK_THROWS_AS(normalize("\xC3", false), TextError);
  CHECK_THROWS_AS(normalize("\xC0\xAF", false), TextError);
  CHECK_THROWS_AS(normalize("\xED\xA0\x80", false), TextError);
}

TEST_CASE("normalize: idempotent on random text", "[text][property]") {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const std::string raw = testing::random_text(rng, static_cast<std::size_t>(rng.uniform_int(0, 30)));
    for (bool tr : {false, true}) {
      const std::string once = normalize(raw, tr);
      REQUIRE(normalize(once, tr) == once);
      REQUIRE(once.find("  ") == std::string::npos);
      if (!once.empty()) {
        REQUIRE(once.front() != ' ');
        REQUIRE(once.back() != ' ');
      }
      if (tr)
        for (char32_t c : utf8_decode(once)) REQUIRE_FALSE(is_punct(c));
    }
  }
}

TEST_CASE("tokenize: examples", "[text]") {
  using V = std::vector<std::string>;
  CHECK(tokenize("hello, world!") == V{"hello", ",", "world", "!"});
  CHECK(tokenize("abc") == V{"abc"});
  CHECK(tokenize("a-b") == V{"a", "-", "b"});
  CHECK(tokenize("").empty());
}

TEST_CASE("char vocab: reserved layout and ordering", "[text]") {
  auto v = build_char_vocab({"ab", "ba"});
  REQUIRE(v.size() == 7);
  CHECK(v.symbols() == std::vector<std::string>{"<pad>", "<s>", "</s>", "<unk>", "<mask>", "a", "b"});

  auto w = build_char_vocab({"b a", "bb"});
  // b:3, a:1, space:1 (space < a by code point).
  CHECK(w.symbols() == std::vector<std::string>{"<pad>", "<s>", "</s>", "<unk>", "<mask>", "b", " ", "a"});
  CHECK(w.kind() == VocabKind::Character);
  CHECK_THROWS_AS(build_char_vocab({}), TextError);
}

TEST_CASE("char vocab: deterministic, round trip, unk", "[text][property]") {
  Rng rng(5);
  std::vector<std::string> corpus;
  for (int i = 0; i < 40; ++i) corpus.push_back(normalize(testing::random_text(rng, 12), false));
  auto a = build_char_vocab(corpus);
  auto b = build_char_vocab(corpus);
  REQUIRE(a.symbols() == b.symbols());
  REQUIRE(a.fingerprint() == b.fingerprint());
  for (const auto& s : corpus) {
    auto ids = a.encode(s);
    for (long id : ids) REQUIRE(id >= kNumReserved);
    REQUIRE(a.decode(ids) == s);
    REQUIRE(a.encode(a.decode(ids)) == ids);
  }
  auto ids = a.encode("\xE4\xB8\xAD");
  REQUIRE(ids == std::vector<long>{kUnk});
  REQUIRE_NOTHROW(a.decode(ids));
}

TEST_CASE("vocab: file round trip", "[text]") {
  auto path = std::filesystem::temp_directory_path() / "sslst_test_vocab.txt";
  auto v = build_char_vocab({"hello world", "\xC3\xA9t\xC3\xA9"});
  v.save(path.string());
  auto u = Vocabulary::load(path.string());
  CHECK(u.symbols() == v.symbols());
  CHECK(u.kind() == VocabKind::Character);
  CHECK(u.fingerprint() == v.fingerprint());

  auto s = build_subword_vocab({"aaab aab", "ab"}, 12);
  s.save(path.string());
  auto t = Vocabulary::load(path.string());
  CHECK(t.kind() == VocabKind::Subword);
  CHECK(t.symbols() == s.symbols());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Vocabulary::load(path.string()), IoError);
}

TEST_CASE("subword vocab: first merge of aaab corpus", "[text]") {
  std::vector<std::string> corpus(100, "aaab");
  auto v = build_subword_vocab(corpus, 4 + kNumReserved);
  // Base symbols: a (300), then the word mark and b (100 each, ordered by code point).
  REQUIRE(v.size() == 9);
  CHECK(v.symbol(5) == "a");
  CHECK(v.symbol(6) == "b");
  CHECK(v.symbol(7) == kWordMark);
  CHECK(v.symbol(8) == "aa");
}

TEST_CASE("subword vocab: base size equals word-marked character vocabulary", "[text]") {
  std::vector<std::string> corpus{"the cat sat", "on the mat", "a cat"};
  std::vector<std::string> marked;
  for (const auto& line : corpus) {
    std::string m;
    for (const auto& w : tokenize_whitespace(line)) m += kWordMark + w;
    marked.push_back(m);
  }
  auto chars = build_char_vocab(marked);
  auto sub = build_subword_vocab(corpus, chars.size());
  CHECK(sub.symbols() == chars.symbols());
}

TEST_CASE("subword vocab: lossless on training sentences", "[text][property]") {
  Rng rng(9);
  std::vector<std::string> corpus;
  for (int i = 0; i < 60; ++i) {
    std::string s;
    const long n = rng.uniform_int(1, 6);
    for (long k = 0; k < n; ++k) {
      if (k) s += ' ';
      const long len = rng.uniform_int(1, 5);
      for (long c = 0; c < len; ++c) s += static_cast<char>('a' + rng.uniform_int(0, 4));
    }
    corpus.push_back(s);
  }
  auto v = build_subword_vocab(corpus, 40);
  REQUIRE(v.size() == 40);
  for (const auto& s : corpus) {
    auto ids = v.encode(s);
    for (long id : ids) REQUIRE(id != kUnk);
    REQUIRE(v.decode(ids) == s);
  }
  auto again = build_subword_vocab(corpus, 40);
  REQUIRE(again.symbols() == v.symbols());
}

TEST_CASE("subword vocab: insufficient corpus names achievable size", "[text]") {
  try {
    build_subword_vocab({"ab"}, 100);
    FAIL("expected TextError");
  } catch (const TextError& e) {
    CHECK(std::string(e.what()).find("achievable size is 10") != std::string::npos);
  }
}

TEST_CASE("filter: boundaries", "[text]") {
  CHECK_FALSE(keep_sample({3001, 10}));
  CHECK(keep_sample({5, 1}));
  CHECK_FALSE(keep_sample({4, 10}));
  CHECK(keep_sample({3000, 400}));
  CHECK_FALSE(keep_sample({100, 401}));
  CHECK_FALSE(keep_sample({100, 0}));
}

TEST_CASE("filter: subset and fixed point", "[text][property]") {
  Rng rng(2);
  std::vector<SampleSize> corpus;
  for (int i = 0; i < 1000; ++i)
    corpus.push_back({static_cast<std::size_t>(rng.uniform_int(0, 3200)),
                      static_cast<std::size_t>(rng.uniform_int(0, 450))});
  auto once = filter_samples(corpus);
  auto idx = filter_indices(corpus);
  REQUIRE(once.size() == idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) REQUIRE(corpus[idx[i]] == once[i]);
  REQUIRE(filter_samples(once) == once);
}
