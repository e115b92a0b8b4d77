#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "crossconst/corpus.hpp"

using namespace crossconst;

namespace {

SynthSpec small_spec(std::uint64_t seed = 7, int n = 1000) {
    SynthSpec s;
    s.seed = seed;
    s.num_train = n - 100;
    s.num_valid = 50;
    s.num_test = 50;
    return s;
}

}  // namespace

TEST(Corpus, RenderingsAreCipherOfReorderedPivot) {
    const auto spec = small_spec();
    const auto c = generate_synthetic_corpus(spec);
    const auto rules = resolve_rules(spec);
    ASSERT_EQ(c.entries.size(), 1000u);
    for (const auto& e : c.entries) {
        const auto pivot_types = unrender(spec.grammar, rules, 0, e.renderings[0]);
        for (std::size_t l = 0; l < c.languages.size(); ++l) {
            EXPECT_EQ(render(spec.grammar, rules, l, pivot_types), e.renderings[l]);
            EXPECT_EQ(unrender(spec.grammar, rules, l, e.renderings[l]), pivot_types);
        }
    }
}

TEST(Corpus, SameSeedGivesByteIdenticalCorpus) {
    std::ostringstream a, b;
    write_multiway_tsv(generate_synthetic_corpus(small_spec()), a);
    write_multiway_tsv(generate_synthetic_corpus(small_spec()), b);
    EXPECT_EQ(a.str(), b.str());
    std::ostringstream other;
    write_multiway_tsv(generate_synthetic_corpus(small_spec(8)), other);
    EXPECT_NE(a.str(), other.str());
}

TEST(Corpus, TwoLanguagesIsAConfigError) {
    auto s = small_spec();
    s.num_languages = 2;
    EXPECT_THROW(generate_synthetic_corpus(s), ConfigError);
}

TEST(Corpus, EmptyGrammarIsAConfigError) {
    auto s = small_spec();
    s.grammar = Grammar{};
    EXPECT_THROW(generate_synthetic_corpus(s), ConfigError);
}

TEST(Corpus, NonBijectiveCipherIsAConfigError) {
    auto s = small_spec();
    const auto rules = resolve_rules(s);
    s.cipher_maps = rules.cipher;
    s.cipher_maps[1][1] = s.cipher_maps[1][0];
    EXPECT_THROW(generate_synthetic_corpus(s), ConfigError);
    s.cipher_maps = rules.cipher;
    s.cipher_maps[2].pop_back();
    EXPECT_THROW(generate_synthetic_corpus(s), ConfigError);
}

TEST(Corpus, LengthsSplitsAndDistinctSentences) {
    const auto c = generate_synthetic_corpus(small_spec(3));
    std::set<int> all;
    for (auto* ids : {&c.train_ids, &c.valid_ids, &c.test_ids})
        for (int id : *ids) EXPECT_TRUE(all.insert(id).second);
    EXPECT_EQ(all.size(), c.entries.size());
    std::set<std::vector<std::string>> pivots;
    for (const auto& e : c.entries) {
        ASSERT_EQ(e.renderings.size(), 3u);
        for (const auto& r : e.renderings) {
            EXPECT_GE(r.size(), 3u);
            EXPECT_LE(r.size(), 20u);
        }
        pivots.insert(e.renderings[0]);
    }
    EXPECT_EQ(pivots.size(), c.entries.size());
}

TEST(Corpus, SurfaceFormsIdentifyTheirLanguage) {
    const auto rules = resolve_rules(small_spec());
    std::set<std::string> seen;
    for (const auto& lex : rules.cipher)
        for (const auto& w : lex) EXPECT_TRUE(seen.insert(w).second) << w;
}

TEST(Corpus, ReorderRulesAreInvertible) {
    const auto g = default_grammar();
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
        const auto types = synth::sample_sentence(g, rng);
        for (auto rule : {ReorderRule::None, ReorderRule::VerbFinal, ReorderRule::AdjectiveAfterNoun, ReorderRule::Both})
            EXPECT_EQ(synth::invert_reorder(g, synth::apply_reorder(g, types, rule), rule), types);
    }
}

TEST(Corpus, VerbFinalMovesTheVerbToTheEnd) {
    const auto g = default_grammar();
    std::mt19937_64 rng(12);
    for (int i = 0; i < 100; ++i) {
        const auto out = synth::apply_reorder(g, synth::sample_sentence(g, rng), ReorderRule::VerbFinal);
        EXPECT_EQ(g.words[static_cast<std::size_t>(out.back())].pos, PartOfSpeech::Verb);
    }
}

TEST(Corpus, MultiwayTsvRoundTrip) {
    auto c = generate_synthetic_corpus(small_spec(5, 200));
    std::stringstream ss;
    write_multiway_tsv(c, ss);
    auto back = read_multiway_tsv(ss);
    assign_splits(back, 100, 50);
    EXPECT_EQ(back.languages, c.languages);
    ASSERT_EQ(back.entries.size(), c.entries.size());
    for (std::size_t i = 0; i < c.entries.size(); ++i) EXPECT_EQ(back.entries[i].renderings, c.entries[i].renderings);
    EXPECT_EQ(back.train_ids, c.train_ids);
    EXPECT_EQ(back.valid_ids, c.valid_ids);
    EXPECT_EQ(back.test_ids, c.test_ids);
}

TEST(Corpus, MalformedMultiwayTsvIsADataError) {
    std::istringstream wrong_cols("0\tL0\n");
    EXPECT_THROW(read_multiway_tsv(wrong_cols), DataError);
    std::istringstream gap("0\tL0\ta b c\n2\tL0\ta b c\n");
    EXPECT_THROW(read_multiway_tsv(gap), DataError);
    std::istringstream missing("0\tL0\ta b c\n0\tL1\tx y z\n1\tL0\ta b c\n");
    EXPECT_THROW(read_multiway_tsv(missing), DataError);
    auto c = generate_synthetic_corpus(small_spec(5, 200));
    EXPECT_THROW(assign_splits(c, 150, 100), DataError);
}

TEST(Corpus, LanguageLookup) {
    const auto c = generate_synthetic_corpus(small_spec(5, 200));
    EXPECT_EQ(c.language_index({"L2"}), 2u);
    EXPECT_THROW(c.language_index({"L9"}), DataError);
    EXPECT_EQ(LanguageId{"L1"}.tag(), "<L1>");
}
