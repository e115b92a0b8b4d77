#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "crossconst/bpe.hpp"
#include "support.hpp"

using namespace crossconst;

namespace {

// Independent pair counter: scans every word occurrence as a string.
std::pair<std::string, std::string> most_frequent_pair(const std::vector<std::vector<std::string>>& words) {
    std::map<std::pair<std::string, std::string>, int> counts;
    for (const auto& w : words)
        for (std::size_t i = 0; i + 1 < w.size(); ++i) counts[{w[i], w[i + 1]}]++;
    std::pair<std::string, std::string> best;
    int n = 0;
    for (const auto& [p, c] : counts)
        if (c > n) {
            n = c;
            best = p;
        }
    return best;
}

}  // namespace

TEST(Bpe, FirstMergeOfTinyCorpus) {
    const auto t = train_bpe({"aa aa ab"}, 1);
    ASSERT_EQ(t.merges.size(), 1u);
    EXPECT_EQ(t.merges[0], (Merge{"a", "a"}));
}

TEST(Bpe, TiesGoToLexicographicallySmallestPair) {
    const auto t = train_bpe({"ba dc"}, 2);
    ASSERT_EQ(t.merges.size(), 2u);
    EXPECT_EQ(t.merges[0], (Merge{"b", "a"}));
    EXPECT_EQ(t.merges[1], (Merge{"d", "c"}));
}

TEST(Bpe, MergesAgreeWithBruteForceCounting) {
    const auto w = testing_support::small_world(80, 0);
    const auto texts = w.corpus.texts(w.corpus.train_ids);
    std::vector<std::vector<std::string>> words;
    for (const auto& t : texts)
        for (const auto& x : split_ws(t)) words.push_back(bpe_detail::utf8_chars(x));
    const auto table = train_bpe(texts, 25);
    for (const auto& m : table.merges) {
        const auto best = most_frequent_pair(words);
        EXPECT_EQ(m.left, best.first);
        EXPECT_EQ(m.right, best.second);
        for (auto& x : words) bpe_detail::apply_merge(x, m);
    }
}

TEST(Bpe, ZeroMergesIsCharacterLevel) {
    const auto t = train_bpe({"hello world"}, 0);
    EXPECT_TRUE(t.merges.empty());
    const auto v = Vocab::build({{"L0"}}, {"hello world"}, t);
    Tokenizer tok(t, v);
    EXPECT_EQ(tok.encode("hello").size(), 5u);
    EXPECT_EQ(tok.decode(tok.encode("hello world")), "hello world");
}

TEST(Bpe, StopsEarlyWhenNoPairsRemain) {
    const auto t = train_bpe({"ab ab"}, 10);
    EXPECT_EQ(t.merges.size(), 1u);
    EXPECT_THROW(train_bpe({"ab"}, -1), ConfigError);
}

TEST(Bpe, DeterministicTables) {
    const auto w = testing_support::small_world(120, 0);
    const auto texts = w.corpus.texts(w.corpus.train_ids);
    EXPECT_EQ(train_bpe(texts, 80), train_bpe(texts, 80));
}

TEST(Bpe, RoundTripOnTrainingSentences) {
    const auto w = testing_support::small_world(400, 120);
    int checked = 0;
    for (int id : w.corpus.train_ids)
        for (std::size_t l = 0; l < w.corpus.languages.size(); ++l) {
            const auto s = w.corpus.text(id, l);
            const auto enc = w.tok.encode(s);
            for (int i : enc) EXPECT_NE(i, Vocab::unk);
            EXPECT_EQ(w.tok.decode(enc), s);
            ++checked;
        }
    EXPECT_EQ(checked, 1200);
}

TEST(Bpe, UnseenCharacterMapsToUnk) {
    const auto w = testing_support::small_world(50, 20);
    const auto enc = w.tok.encode("q\xc3\xa9z");
    EXPECT_NE(std::find(enc.begin(), enc.end(), Vocab::unk), enc.end());
    EXPECT_TRUE(w.tok.encode("").empty());
}

TEST(Bpe, VocabularyLayout) {
    const auto w = testing_support::small_world(50, 20);
    const auto& v = w.tok.vocab();
    EXPECT_EQ(v.display(Vocab::pad), "<pad>");
    EXPECT_EQ(v.display(Vocab::bos), "<bos>");
    EXPECT_EQ(v.display(Vocab::eos), "<eos>");
    EXPECT_EQ(v.display(Vocab::unk), "<unk>");
    ASSERT_EQ(v.tag_indices().size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(v.tag({"L" + std::to_string(i)}), 4 + i);
    // tags are never produced by tokenizing text, even text that spells one
    const auto enc = w.tok.encode("<L1>");
    for (int i : enc) EXPECT_FALSE(v.is_special(i) && i != Vocab::unk);
    std::set<std::string> keys;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& s = v.symbol(static_cast<int>(i));
        EXPECT_TRUE(keys.insert(std::string(s.special ? "s" : (s.continuation ? "c" : "w")) + s.piece).second);
    }
}

TEST(Bpe, FilesRoundTrip) {
    const auto w = testing_support::small_world(80, 40);
    std::stringstream ms, vs;
    write_merge_table(w.tok.merges(), ms);
    write_vocab(w.tok.vocab(), vs);
    EXPECT_EQ(read_merge_table(ms), w.tok.merges());
    EXPECT_EQ(read_vocab(vs), w.tok.vocab());
    std::istringstream bad("a b → abc\n");
    EXPECT_THROW(read_merge_table(bad), DataError);
    std::istringstream badv("w\ta\n");
    EXPECT_THROW(read_vocab(badv), DataError);
}
