#pragma once

// Synthetic multiway-parallel corpus.
//
// Every sentence is first sampled as a sequence of base word types in pivot
// (L0) order. Language i renders it by applying its reorder rule to the type
// sequence and then its cipher (word type -> surface form). Both steps are
// invertible, so all renderings of one sentence id are exact translations.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "crossconst/errors.hpp"

namespace crossconst {

struct LanguageId {
    std::string code;  // "L0", "L1", ...
    std::string tag() const { return "<" + code + ">"; }
    friend bool operator==(const LanguageId&, const LanguageId&) = default;
    friend auto operator<=>(const LanguageId&, const LanguageId&) = default;
};

enum class PartOfSpeech : std::uint8_t { Det, Adj, Noun, Verb, Prep, Adv };

struct WordType {
    std::string surface;  // pivot-language form
    PartOfSpeech pos;
};

/// Sentence skeleton. Each template is a subject noun phrase, a verb, and
/// optional object / prepositional phrases / adverb, with bounded repeats.
struct SentenceTemplate {
    int max_subject_adjectives = 1;
    bool object = true;
    int max_object_adjectives = 1;
    int max_prep_phrases = 0;
    bool adverb = false;
};

struct Grammar {
    std::vector<WordType> words;
    std::vector<SentenceTemplate> templates;

    bool empty() const { return words.empty() || templates.empty(); }
    std::vector<int> of(PartOfSpeech pos) const {
        std::vector<int> out;
        for (std::size_t i = 0; i < words.size(); ++i)
            if (words[i].pos == pos) out.push_back(static_cast<int>(i));
        return out;
    }
};

enum class ReorderRule : std::uint8_t { None, VerbFinal, AdjectiveAfterNoun, Both };

/// The default ~40-type grammar used by the CLI and acceptance runs.
inline Grammar default_grammar() {
    using P = PartOfSpeech;
    Grammar g;
    auto add = [&](std::initializer_list<const char*> ws, P pos) {
        for (const char* w : ws) g.words.push_back({w, pos});
    };
    add({"the", "a", "this", "every"}, P::Det);
    add({"big", "small", "red", "old", "happy", "quick", "green", "dark"}, P::Adj);
    add({"dog", "cat", "bird", "man", "woman", "child", "house", "tree", "car", "river", "book", "ball"}, P::Noun);
    add({"sees", "likes", "finds", "takes", "helps", "wants", "builds", "paints"}, P::Verb);
    add({"near", "under", "behind", "with"}, P::Prep);
    add({"today", "often", "slowly", "again"}, P::Adv);
    g.templates = {
        {1, false, 0, 0, false},  // the dog sees
        {1, false, 0, 1, true},   // the dog sees near the tree today
        {2, true, 2, 0, false},   // the big dog sees a small cat
        {1, true, 1, 1, true},
        {1, true, 1, 2, true},
    };
    return g;
}

struct SynthSpec {
    std::uint64_t seed = 7;
    int num_languages = 3;
    int num_train = 5000;
    int num_valid = 200;
    int num_test = 300;
    Grammar grammar = default_grammar();
    // cipher_maps[i][t] = surface form of word type t in language i. Left empty
    // to have the generator derive pseudo-word lexicons from the seed.
    std::vector<std::vector<std::string>> cipher_maps;
    // reorder_rules[i]; empty means pivot keeps None and others cycle through
    // VerbFinal, AdjectiveAfterNoun, Both.
    std::vector<ReorderRule> reorder_rules;
};

struct MultiwayEntry {
    int id = 0;
    std::vector<std::vector<std::string>> renderings;  // per language, word tokens
};

struct MultiwayCorpus {
    std::vector<LanguageId> languages;
    std::vector<MultiwayEntry> entries;  // entries[k].id == k
    std::vector<int> train_ids, valid_ids, test_ids;

    std::size_t language_index(const LanguageId& lang) const {
        for (std::size_t i = 0; i < languages.size(); ++i)
            if (languages[i] == lang) return i;
        throw DataError("language " + lang.code + " not in corpus");
    }
    bool has_language(const LanguageId& lang) const {
        return std::find(languages.begin(), languages.end(), lang) != languages.end();
    }
    const std::vector<std::string>& words(int id, std::size_t lang) const {
        return entries.at(static_cast<std::size_t>(id)).renderings.at(lang);
    }
    std::string text(int id, std::size_t lang) const {
        std::string out;
        for (const auto& w : words(id, lang)) {
            if (!out.empty()) out += ' ';
            out += w;
        }
        return out;
    }
    /// Every rendering of the ids in `ids`, all languages, one string per sentence.
    std::vector<std::string> texts(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        for (int id : ids)
            for (std::size_t l = 0; l < languages.size(); ++l) out.push_back(text(id, l));
        return out;
    }
};

namespace synth {

inline std::vector<int> apply_reorder(const Grammar& g, std::vector<int> types, ReorderRule rule) {
    auto pos = [&](int t) { return g.words[static_cast<std::size_t>(t)].pos; };
    if (rule == ReorderRule::AdjectiveAfterNoun || rule == ReorderRule::Both) {
        // ADJ+ NOUN -> NOUN ADJ+
        for (std::size_t i = 0; i < types.size(); ++i) {
            if (pos(types[i]) != PartOfSpeech::Adj) continue;
            std::size_t j = i;
            while (j < types.size() && pos(types[j]) == PartOfSpeech::Adj) ++j;
            if (j < types.size() && pos(types[j]) == PartOfSpeech::Noun) {
                std::rotate(types.begin() + static_cast<long>(i), types.begin() + static_cast<long>(j),
                            types.begin() + static_cast<long>(j) + 1);
                i = j;
            }
        }
    }
    if (rule == ReorderRule::VerbFinal || rule == ReorderRule::Both) {
        auto it = std::find_if(types.begin(), types.end(), [&](int t) { return pos(t) == PartOfSpeech::Verb; });
        if (it != types.end()) std::rotate(it, it + 1, types.end());
    }
    return types;
}

inline std::vector<int> invert_reorder(const Grammar& g, std::vector<int> types, ReorderRule rule) {
    auto pos = [&](int t) { return g.words[static_cast<std::size_t>(t)].pos; };
    if (rule == ReorderRule::VerbFinal || rule == ReorderRule::Both) {
        // the verb closes the subject phrase: first noun plus any trailing adjectives
        if (!types.empty() && pos(types.back()) == PartOfSpeech::Verb) {
            auto it = std::find_if(types.begin(), types.end(), [&](int t) { return pos(t) == PartOfSpeech::Noun; });
            if (it != types.end()) {
                ++it;
                while (it != types.end() - 1 && pos(*it) == PartOfSpeech::Adj) ++it;
                std::rotate(it, types.end() - 1, types.end());
            }
        }
    }
    if (rule == ReorderRule::AdjectiveAfterNoun || rule == ReorderRule::Both) {
        // NOUN ADJ+ -> ADJ+ NOUN
        for (std::size_t i = 0; i < types.size(); ++i) {
            if (pos(types[i]) != PartOfSpeech::Noun) continue;
            std::size_t j = i + 1;
            while (j < types.size() && pos(types[j]) == PartOfSpeech::Adj) ++j;
            if (j > i + 1) {
                std::rotate(types.begin() + static_cast<long>(i), types.begin() + static_cast<long>(i) + 1,
                            types.begin() + static_cast<long>(j));
                i = j - 1;
            }
        }
    }
    return types;
}

/// Pseudo-word lexicon for a non-pivot language: distinct two- or three-syllable
/// words built from a language-specific syllable inventory.
inline std::vector<std::string> make_lexicon(std::size_t size, std::mt19937_64& rng, std::set<std::string>& taken) {
    static const std::string consonants = "bdfghjklmnprstvz";
    static const std::string vowels = "aeiou";
    std::vector<std::string> syllables;
    std::uniform_int_distribution<std::size_t> pc(0, consonants.size() - 1), pv(0, vowels.size() - 1);
    while (syllables.size() < 12) {
        std::string s{consonants[pc(rng)], vowels[pv(rng)]};
        if (std::find(syllables.begin(), syllables.end(), s) == syllables.end()) syllables.push_back(s);
    }
    std::uniform_int_distribution<std::size_t> ps(0, syllables.size() - 1);
    std::bernoulli_distribution three(0.25);
    std::vector<std::string> lex;
    while (lex.size() < size) {
        std::string w = syllables[ps(rng)] + syllables[ps(rng)];
        if (three(rng)) w += syllables[ps(rng)];
        if (taken.insert(w).second) lex.push_back(w);
    }
    return lex;
}

inline void check_cipher(const std::vector<std::string>& cipher, std::size_t types, std::size_t lang) {
    if (cipher.size() != types)
        throw ConfigError("cipher map for language " + std::to_string(lang) + " does not cover the vocabulary");
    std::set<std::string> seen;
    for (const auto& w : cipher) {
        if (w.empty() || w.find_first_of(" \t\n") != std::string::npos)
            throw ConfigError("cipher map entry is empty or contains whitespace");
        if (!seen.insert(w).second)
            throw ConfigError("cipher map for language " + std::to_string(lang) + " is not a bijection");
    }
}

inline std::vector<int> sample_sentence(const Grammar& g, std::mt19937_64& rng) {
    using P = PartOfSpeech;
    const auto dets = g.of(P::Det), adjs = g.of(P::Adj), nouns = g.of(P::Noun), verbs = g.of(P::Verb),
               preps = g.of(P::Prep), advs = g.of(P::Adv);
    auto pick = [&](const std::vector<int>& v) {
        if (v.empty()) throw ConfigError("grammar lacks a required part of speech");
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    auto upto = [&](int n) { return n <= 0 ? 0 : std::uniform_int_distribution<int>(0, n)(rng); };
    std::vector<int> out;
    auto noun_phrase = [&](int max_adj) {
        out.push_back(pick(dets));
        const int na = adjs.empty() ? 0 : upto(max_adj);
        for (int i = 0; i < na; ++i) out.push_back(pick(adjs));
        out.push_back(pick(nouns));
    };
    const auto& tpl = g.templates[std::uniform_int_distribution<std::size_t>(0, g.templates.size() - 1)(rng)];
    noun_phrase(tpl.max_subject_adjectives);
    out.push_back(pick(verbs));
    if (tpl.object) noun_phrase(tpl.max_object_adjectives);
    const int npp = upto(tpl.max_prep_phrases);
    for (int i = 0; i < npp; ++i) {
        out.push_back(pick(preps));
        noun_phrase(0);
    }
    if (tpl.adverb && !advs.empty() && std::bernoulli_distribution(0.5)(rng)) out.push_back(pick(advs));
    return out;
}

}  // namespace synth

/// Resolved per-language rendering rules for a SynthSpec.
struct LanguageRules {
    std::vector<std::vector<std::string>> cipher;
    std::vector<ReorderRule> reorder;
};

inline LanguageRules resolve_rules(const SynthSpec& spec) {
    if (spec.grammar.empty()) throw ConfigError("synthetic grammar is empty");
    if (spec.num_languages < 3)
        throw ConfigError("num_languages must be >= 3: zero-shot evaluation needs two non-pivot languages");
    const std::size_t M = static_cast<std::size_t>(spec.num_languages);
    const std::size_t T = spec.grammar.words.size();
    LanguageRules rules;
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    if (!spec.cipher_maps.empty()) {
        if (spec.cipher_maps.size() != M) throw ConfigError("cipher_maps must list one map per language");
        rules.cipher = spec.cipher_maps;
    } else {
        std::set<std::string> taken;
        std::vector<std::string> pivot;
        for (const auto& w : spec.grammar.words) {
            pivot.push_back(w.surface);
            taken.insert(w.surface);
        }
        rules.cipher.push_back(pivot);
        for (std::size_t l = 1; l < M; ++l) rules.cipher.push_back(synth::make_lexicon(T, rng, taken));
    }
    for (std::size_t l = 0; l < M; ++l) synth::check_cipher(rules.cipher[l], T, l);
    // surface forms must identify their language
    std::set<std::string> all;
    for (std::size_t l = 0; l < M; ++l)
        for (const auto& w : rules.cipher[l])
            if (!all.insert(w).second) throw ConfigError("surface form '" + w + "' is shared by two languages");
    if (!spec.reorder_rules.empty()) {
        if (spec.reorder_rules.size() != M) throw ConfigError("reorder_rules must list one rule per language");
        rules.reorder = spec.reorder_rules;
    } else {
        static constexpr ReorderRule cycle[] = {ReorderRule::VerbFinal, ReorderRule::AdjectiveAfterNoun,
                                                ReorderRule::Both};
        rules.reorder.push_back(ReorderRule::None);
        for (std::size_t l = 1; l < M; ++l) rules.reorder.push_back(cycle[(l - 1) % 3]);
    }
    return rules;
}

inline std::vector<std::string> render(const Grammar& g, const LanguageRules& rules, std::size_t lang,
                                       const std::vector<int>& pivot_types) {
    std::vector<std::string> out;
    for (int t : synth::apply_reorder(g, pivot_types, rules.reorder[lang]))
        out.push_back(rules.cipher[lang][static_cast<std::size_t>(t)]);
    return out;
}

/// Recover the pivot-order word types from a rendering in language `lang`.
inline std::vector<int> unrender(const Grammar& g, const LanguageRules& rules, std::size_t lang,
                                 const std::vector<std::string>& words) {
    std::unordered_map<std::string, int> inverse;
    for (std::size_t t = 0; t < rules.cipher[lang].size(); ++t) inverse[rules.cipher[lang][t]] = static_cast<int>(t);
    std::vector<int> types;
    for (const auto& w : words) {
        auto it = inverse.find(w);
        if (it == inverse.end()) throw DataError("word '" + w + "' not in lexicon");
        types.push_back(it->second);
    }
    return synth::invert_reorder(g, std::move(types), rules.reorder[lang]);
}

inline MultiwayCorpus generate_synthetic_corpus(const SynthSpec& spec) {
    const LanguageRules rules = resolve_rules(spec);
    const std::size_t M = rules.cipher.size();
    MultiwayCorpus c;
    for (std::size_t l = 0; l < M; ++l) c.languages.push_back({"L" + std::to_string(l)});
    const int total = spec.num_train + spec.num_valid + spec.num_test;
    if (spec.num_train < 0 || spec.num_valid < 0 || spec.num_test < 0 || total <= 0)
        throw ConfigError("split sizes must be non-negative with a positive total");
    std::mt19937_64 rng(spec.seed);
    std::set<std::vector<int>> seen;
    int attempts = 0;
    while (static_cast<int>(c.entries.size()) < total) {
        if (++attempts > 50 * total + 1000) throw ConfigError("grammar cannot produce enough distinct sentences");
        auto types = synth::sample_sentence(spec.grammar, rng);
        if (types.size() < 3 || types.size() > 20) continue;
        if (!seen.insert(types).second) continue;
        MultiwayEntry e;
        e.id = static_cast<int>(c.entries.size());
        for (std::size_t l = 0; l < M; ++l) e.renderings.push_back(render(spec.grammar, rules, l, types));
        c.entries.push_back(std::move(e));
    }
    for (int i = 0; i < total; ++i) {
        if (i < spec.num_train)
            c.train_ids.push_back(i);
        else if (i < spec.num_train + spec.num_valid)
            c.valid_ids.push_back(i);
        else
            c.test_ids.push_back(i);
    }
    return c;
}

// ---------------------------------------------------------------------------
// Multiway TSV: sentence_id \t lang \t text. Split membership is not part of
// the file format and is supplied separately when reading.

inline void write_multiway_tsv(const MultiwayCorpus& c, std::ostream& os) {
    for (const auto& e : c.entries)
        for (std::size_t l = 0; l < c.languages.size(); ++l)
            os << e.id << '\t' << c.languages[l].code << '\t' << c.text(e.id, l) << '\n';
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
        auto p = line.find('\t', start);
        cols.push_back(line.substr(start, p == std::string::npos ? std::string::npos : p - start));
        if (p == std::string::npos) break;
        start = p + 1;
    }
    return cols;
}

/// Reads a multiway TSV. Languages appear in first-seen order; ids must be 0..N-1.
inline MultiwayCorpus read_multiway_tsv(std::istream& is) {
    MultiwayCorpus c;
    std::map<int, std::map<std::string, std::vector<std::string>>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cols = split_tabs(line);
        if (cols.size() != 3) throw DataError("multiway TSV line " + std::to_string(lineno) + ": expected 3 columns");
        int id = 0;
        try {
            id = std::stoi(cols[0]);
        } catch (const std::exception&) {
            throw DataError("multiway TSV line " + std::to_string(lineno) + ": bad sentence id");
        }
        LanguageId lang{cols[1]};
        if (!c.has_language(lang)) c.languages.push_back(lang);
        rows[id][cols[1]] = split_ws(cols[2]);
    }
    int expect = 0;
    for (auto& [id, langs] : rows) {
        if (id != expect++) throw DataError("multiway TSV sentence ids must be contiguous from 0");
        MultiwayEntry e;
        e.id = id;
        for (const auto& l : c.languages) {
            auto it = langs.find(l.code);
            if (it == langs.end())
                throw DataError("sentence " + std::to_string(id) + " lacks a rendering in " + l.code);
            e.renderings.push_back(it->second);
        }
        c.entries.push_back(std::move(e));
    }
    return c;
}

/// Assigns contiguous train/valid/test splits by count, in id order.
inline void assign_splits(MultiwayCorpus& c, int num_train, int num_valid) {
    const int n = static_cast<int>(c.entries.size());
    if (num_train < 0 || num_valid < 0 || num_train + num_valid > n) throw DataError("split sizes exceed corpus size");
    c.train_ids.clear();
    c.valid_ids.clear();
    c.test_ids.clear();
    for (int i = 0; i < n; ++i) {
        if (i < num_train)
            c.train_ids.push_back(i);
        else if (i < num_train + num_valid)
            c.valid_ids.push_back(i);
        else
            c.test_ids.push_back(i);
    }
}

}  // namespace crossconst
