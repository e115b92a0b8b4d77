#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "crossconst/bpe.hpp"
#include "crossconst/corpus.hpp"
#include "crossconst/errors.hpp"

namespace crossconst {

/// One training example. The source starts with the target-language tag and
/// the target ends with <eos>.
struct TaggedPair {
    std::vector<int> src_tokens;
    std::vector<int> tgt_tokens;
    LanguageId src_lang;
    LanguageId tgt_lang;
    int sentence_id = -1;

    std::size_t length() const { return std::max(src_tokens.size(), tgt_tokens.size()); }
    friend bool operator==(const TaggedPair&, const TaggedPair&) = default;
};

inline TaggedPair make_tagged_pair(const Tokenizer& tok, const LanguageId& src_lang, const LanguageId& tgt_lang,
                                   const std::vector<std::string>& src_words,
                                   const std::vector<std::string>& tgt_words, int sentence_id = -1) {
    TaggedPair p;
    p.src_lang = src_lang;
    p.tgt_lang = tgt_lang;
    p.sentence_id = sentence_id;
    p.src_tokens.push_back(tok.vocab().tag(tgt_lang));
    for (int t : tok.encode_words(src_words)) p.src_tokens.push_back(t);
    p.tgt_tokens = tok.encode_words(tgt_words);
    p.tgt_tokens.push_back(Vocab::eos);
    return p;
}

/// Both directions pivot<->Li for every non-pivot language and every id in `ids`.
inline std::vector<TaggedPair> english_centric_pairs(const MultiwayCorpus& c, const LanguageId& pivot,
                                                     const Tokenizer& tok, const std::vector<int>& ids) {
    if (!c.has_language(pivot)) throw DataError("pivot " + pivot.code + " not in corpus");
    const std::size_t p = c.language_index(pivot);
    std::vector<TaggedPair> out;
    for (int id : ids) {
        for (std::size_t l = 0; l < c.languages.size(); ++l) {
            if (l == p) continue;
            out.push_back(make_tagged_pair(tok, pivot, c.languages[l], c.words(id, p), c.words(id, l), id));
            out.push_back(make_tagged_pair(tok, c.languages[l], pivot, c.words(id, l), c.words(id, p), id));
        }
    }
    return out;
}

inline std::vector<TaggedPair> english_centric_pairs(const MultiwayCorpus& c, const LanguageId& pivot,
                                                     const Tokenizer& tok) {
    return english_centric_pairs(c, pivot, tok, c.train_ids);
}

/// All pairs of one direction over `ids`.
inline std::vector<TaggedPair> direction_pairs(const MultiwayCorpus& c, const LanguageId& src, const LanguageId& tgt,
                                               const Tokenizer& tok, const std::vector<int>& ids) {
    const std::size_t s = c.language_index(src), t = c.language_index(tgt);
    std::vector<TaggedPair> out;
    for (int id : ids) out.push_back(make_tagged_pair(tok, src, tgt, c.words(id, s), c.words(id, t), id));
    return out;
}

// ---------------------------------------------------------------------------
// Parallel TSV: src_lang \t tgt_lang \t src_text \t tgt_text, no header.

struct TextPair {
    LanguageId src_lang, tgt_lang;
    std::string src_text, tgt_text;
};

inline void write_parallel_tsv(const std::vector<TextPair>& pairs, std::ostream& os) {
    for (const auto& p : pairs) os << p.src_lang.code << '\t' << p.tgt_lang.code << '\t' << p.src_text << '\t' << p.tgt_text << '\n';
}

inline std::vector<TextPair> read_parallel_tsv(std::istream& is) {
    std::vector<TextPair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cols = split_tabs(line);
        if (cols.size() != 4) throw DataError("parallel TSV line " + std::to_string(lineno) + ": expected 4 columns");
        out.push_back({{cols[0]}, {cols[1]}, cols[2], cols[3]});
    }
    return out;
}

// ---------------------------------------------------------------------------

/// Indices into the pair list; cost = size × longest pair.
struct Batch {
    std::vector<std::size_t> members;
};

/// Length-bucketed batches covering every pair exactly once. The within-length
/// order and the batch order are shuffled deterministically from `seed`.
inline std::vector<Batch> make_batches(const std::vector<TaggedPair>& pairs, std::size_t max_tokens,
                                       std::uint64_t seed) {
    for (std::size_t i = 0; i < pairs.size(); ++i)
        if (pairs[i].length() > max_tokens)
            throw DataError("pair " + std::to_string(i) + " has length " + std::to_string(pairs[i].length()) +
                            " > max_tokens " + std::to_string(max_tokens));
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pairs[a].length() < pairs[b].length(); });
    std::vector<Batch> batches;
    Batch cur;
    std::size_t longest = 0;
    for (std::size_t idx : order) {
        const std::size_t len = pairs[idx].length();
        const std::size_t grown = std::max(longest, len);
        if (!cur.members.empty() && (cur.members.size() + 1) * grown > max_tokens) {
            batches.push_back(std::move(cur));
            cur = {};
            longest = 0;
        }
        cur.members.push_back(idx);
        longest = std::max(longest, len);
    }
    if (!cur.members.empty()) batches.push_back(std::move(cur));
    std::shuffle(batches.begin(), batches.end(), rng);
    return batches;
}

/// Padded tensors for one batch. Decoder input is <bos> followed by the target
/// shifted right by one; padding masks are 1 at <pad> positions.
struct PaddedBatch {
    std::size_t size = 0;
    std::size_t src_len = 0;
    std::size_t tgt_len = 0;
    std::vector<int> src;                // size × src_len
    std::vector<std::uint8_t> src_pad;   // size × src_len
    std::vector<int> tgt_in;             // size × tgt_len
    std::vector<int> tgt_out;            // size × tgt_len
    std::vector<std::uint8_t> tgt_pad;   // size × tgt_len
    std::vector<std::uint8_t> tgt_mask;  // 1 where tgt_out is a real token

    std::size_t target_tokens() const {
        return static_cast<std::size_t>(std::count(tgt_mask.begin(), tgt_mask.end(), std::uint8_t{1}));
    }
};

inline PaddedBatch collate(const std::vector<const TaggedPair*>& members) {
    PaddedBatch b;
    b.size = members.size();
    for (const auto* p : members) {
        b.src_len = std::max(b.src_len, p->src_tokens.size());
        b.tgt_len = std::max(b.tgt_len, p->tgt_tokens.size());
    }
    b.src.assign(b.size * b.src_len, Vocab::pad);
    b.src_pad.assign(b.size * b.src_len, 1);
    b.tgt_in.assign(b.size * b.tgt_len, Vocab::pad);
    b.tgt_out.assign(b.size * b.tgt_len, Vocab::pad);
    b.tgt_pad.assign(b.size * b.tgt_len, 1);
    b.tgt_mask.assign(b.size * b.tgt_len, 0);
    for (std::size_t i = 0; i < b.size; ++i) {
        const auto& p = *members[i];
        for (std::size_t j = 0; j < p.src_tokens.size(); ++j) {
            b.src[i * b.src_len + j] = p.src_tokens[j];
            b.src_pad[i * b.src_len + j] = 0;
        }
        for (std::size_t j = 0; j < p.tgt_tokens.size(); ++j) {
            b.tgt_in[i * b.tgt_len + j] = j == 0 ? Vocab::bos : p.tgt_tokens[j - 1];
            b.tgt_out[i * b.tgt_len + j] = p.tgt_tokens[j];
            b.tgt_pad[i * b.tgt_len + j] = 0;
            b.tgt_mask[i * b.tgt_len + j] = 1;
        }
    }
    return b;
}

inline PaddedBatch collate(const std::vector<TaggedPair>& pairs, const Batch& batch) {
    std::vector<const TaggedPair*> ms;
    for (std::size_t i : batch.members) ms.push_back(&pairs.at(i));
    return collate(ms);
}

}  // namespace crossconst
