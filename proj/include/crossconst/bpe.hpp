#pragma once

// Byte-pair encoding over whitespace-separated words.
//
// Merges are learned on raw character strings inside words and never cross a
// word boundary. The vocabulary keeps every symbol in two variants, word-initial
// and continuation ("##" prefix when printed), so decoding restores spaces.

#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crossconst/corpus.hpp"
#include "crossconst/errors.hpp"

namespace crossconst {

struct Merge {
    std::string left, right;
    std::string merged() const { return left + right; }
    friend bool operator==(const Merge&, const Merge&) = default;
};

struct MergeTable {
    std::vector<Merge> merges;  // application order == learning order
    friend bool operator==(const MergeTable&, const MergeTable&) = default;
};

namespace bpe_detail {

/// Splits a UTF-8 string into code points.
inline std::vector<std::string> utf8_chars(const std::string& w) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < w.size();) {
        const auto c = static_cast<unsigned char>(w[i]);
        std::size_t len = 1;
        if (c >= 0xF0)
            len = 4;
        else if (c >= 0xE0)
            len = 3;
        else if (c >= 0xC0)
            len = 2;
        len = std::min(len, w.size() - i);
        out.push_back(w.substr(i, len));
        i += len;
    }
    return out;
}

inline void apply_merge(std::vector<std::string>& symbols, const Merge& m) {
    std::vector<std::string> out;
    out.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == m.left && symbols[i + 1] == m.right) {
            out.push_back(m.merged());
            ++i;
        } else {
            out.push_back(symbols[i]);
        }
    }
    symbols = std::move(out);
}

}  // namespace bpe_detail

/// Greedy most-frequent-pair merges; ties go to the lexicographically smallest pair.
inline MergeTable train_bpe(const std::vector<std::string>& texts, int num_merges) {
    if (num_merges < 0) throw ConfigError("num_merges must be >= 0");
    std::map<std::string, long> freq;
    for (const auto& t : texts)
        for (const auto& w : split_ws(t)) ++freq[w];
    std::vector<std::pair<std::vector<std::string>, long>> words;
    for (const auto& [w, f] : freq) words.emplace_back(bpe_detail::utf8_chars(w), f);

    MergeTable table;
    for (int step = 0; step < num_merges; ++step) {
        std::map<std::pair<std::string, std::string>, long> counts;
        for (const auto& [syms, f] : words)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += f;
        if (counts.empty()) break;
        // std::map iterates pairs in lexicographic order, so the first maximum wins ties
        auto best = counts.begin();
        for (auto it = counts.begin(); it != counts.end(); ++it)
            if (it->second > best->second) best = it;
        Merge m{best->first.first, best->first.second};
        for (auto& [syms, f] : words) bpe_detail::apply_merge(syms, m);
        table.merges.push_back(std::move(m));
    }
    return table;
}

inline void write_merge_table(const MergeTable& t, std::ostream& os) {
    for (const auto& m : t.merges) os << m.left << ' ' << m.right << " → " << m.merged() << '\n';
}

inline MergeTable read_merge_table(std::istream& is) {
    static const std::string arrow = " → ";
    MergeTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto a = line.find(arrow);
        const auto sp = line.find(' ');
        if (a == std::string::npos || sp == std::string::npos || sp >= a)
            throw DataError("merge table line " + std::to_string(lineno) + " is malformed");
        Merge m{line.substr(0, sp), line.substr(sp + 1, a - sp - 1)};
        if (m.left.empty() || m.right.empty() || m.merged() != line.substr(a + arrow.size()))
            throw DataError("merge table line " + std::to_string(lineno) + " is inconsistent");
        t.merges.push_back(std::move(m));
    }
    return t;
}

/// Index <-> symbol bijection. Specials and language tags take the lowest indices.
class Vocab {
public:
    static constexpr int pad = 0;
    static constexpr int bos = 1;
    static constexpr int eos = 2;
    static constexpr int unk = 3;

    struct Symbol {
        std::string piece;
        bool continuation = false;
        bool special = false;
        friend bool operator==(const Symbol&, const Symbol&) = default;
    };

    Vocab() = default;

    /// Specials, one tag per language, then every alphabet character of `texts`
    /// in both variants, then the merged pieces that the segmentation of
    /// `texts` actually produces (in merge order).
    static Vocab build(const std::vector<LanguageId>& languages, const std::vector<std::string>& texts,
                       const MergeTable& merges);

    static Vocab from_symbols(const std::vector<Symbol>& symbols) {
        Vocab v;
        for (const auto& s : symbols) {
            const bool is_tag = s.special && s.piece.size() > 2 && s.piece.front() == '<' && s.piece.back() == '>' &&
                                s.piece != "<pad>" && s.piece != "<bos>" && s.piece != "<eos>" && s.piece != "<unk>";
            const int idx = v.add(s);
            if (idx != static_cast<int>(v.size()) - 1) throw DataError("duplicate vocabulary symbol " + s.piece);
            if (is_tag) v.tags_.push_back(idx);
        }
        if (v.size() < 4 || v.symbols_[pad].piece != "<pad>" || v.symbols_[bos].piece != "<bos>" ||
            v.symbols_[eos].piece != "<eos>" || v.symbols_[unk].piece != "<unk>")
            throw DataError("vocabulary must start with <pad> <bos> <eos> <unk>");
        return v;
    }

    std::size_t size() const { return symbols_.size(); }
    const std::vector<Symbol>& symbols() const { return symbols_; }
    const Symbol& symbol(int index) const { return symbols_.at(static_cast<std::size_t>(index)); }
    std::string display(int index) const {
        const auto& s = symbol(index);
        return s.continuation ? "##" + s.piece : s.piece;
    }
    bool contains(const std::string& piece, bool continuation) const {
        return index_.count(key(piece, continuation, false)) > 0;
    }
    int find(const std::string& piece, bool continuation) const {
        auto it = index_.find(key(piece, continuation, false));
        return it == index_.end() ? unk : it->second;
    }
    int find_special(const std::string& name) const {
        auto it = index_.find(key(name, false, true));
        if (it == index_.end()) throw DataError("unknown special symbol " + name);
        return it->second;
    }
    int tag(const LanguageId& lang) const { return find_special(lang.tag()); }
    const std::vector<int>& tag_indices() const { return tags_; }
    bool is_special(int index) const { return symbol(index).special; }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.symbols_ == b.symbols_; }

private:
    static std::string key(const std::string& piece, bool cont, bool special) {
        return std::string(1, special ? 's' : (cont ? 'c' : 'w')) + piece;
    }
    int add(Symbol s) {
        const auto k = key(s.piece, s.continuation, s.special);
        auto it = index_.find(k);
        if (it != index_.end()) return it->second;
        const int idx = static_cast<int>(symbols_.size());
        index_.emplace(k, idx);
        symbols_.push_back(std::move(s));
        return idx;
    }

    std::vector<Symbol> symbols_;
    std::unordered_map<std::string, int> index_;
    std::vector<int> tags_;
};

/// Vocabulary file: one symbol per line, "<kind>\t<piece>" with kind s/w/c
/// (special, word-initial, continuation).
inline void write_vocab(const Vocab& v, std::ostream& os) {
    for (const auto& s : v.symbols()) os << (s.special ? 's' : (s.continuation ? 'c' : 'w')) << '\t' << s.piece << '\n';
}

inline Vocab read_vocab(std::istream& is) {
    std::vector<Vocab::Symbol> syms;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line.size() < 3 || line[1] != '\t' || (line[0] != 's' && line[0] != 'w' && line[0] != 'c'))
            throw DataError("malformed vocabulary line: " + line);
        syms.push_back({line.substr(2), line[0] == 'c', line[0] == 's'});
    }
    return Vocab::from_symbols(syms);
}

/// Segments one word by repeatedly applying the lowest-ranked applicable merge.
class Segmenter {
public:
    explicit Segmenter(const MergeTable& merges) : merges_(&merges) {
        for (std::size_t i = 0; i < merges.merges.size(); ++i) {
            const auto& m = merges.merges[i];
            rank_.emplace(m.left + '\x1f' + m.right, static_cast<int>(i));
            split_.emplace(m.merged(), static_cast<int>(i));
        }
    }

    std::vector<std::string> operator()(const std::string& word) const {
        auto syms = bpe_detail::utf8_chars(word);
        while (syms.size() > 1) {
            int best = -1;
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                auto r = rank_.find(syms[i] + '\x1f' + syms[i + 1]);
                if (r != rank_.end() && (best < 0 || r->second < best)) best = r->second;
            }
            if (best < 0) break;
            bpe_detail::apply_merge(syms, merges_->merges[static_cast<std::size_t>(best)]);
        }
        return syms;
    }

    /// The merge that first produced `piece`, if any.
    const Merge* producer(const std::string& piece) const {
        auto it = split_.find(piece);
        return it == split_.end() ? nullptr : &merges_->merges[static_cast<std::size_t>(it->second)];
    }

private:
    const MergeTable* merges_;
    std::unordered_map<std::string, int> rank_;
    std::unordered_map<std::string, int> split_;
};

inline Vocab Vocab::build(const std::vector<LanguageId>& languages, const std::vector<std::string>& texts,
                          const MergeTable& merges) {
    std::map<std::string, int> alphabet;
    std::map<std::string, long> words;
    for (const auto& t : texts)
        for (const auto& w : split_ws(t)) {
            ++words[w];
            for (const auto& ch : bpe_detail::utf8_chars(w)) alphabet[ch] = 1;
        }
    Vocab v;
    for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) v.add({s, false, true});
    for (const auto& l : languages) v.tags_.push_back(v.add({l.tag(), false, true}));
    for (const auto& [ch, _] : alphabet) {
        v.add({ch, false, false});
        v.add({ch, true, false});
    }
    Segmenter seg(merges);
    std::map<std::string, std::pair<bool, bool>> used;  // piece -> (initial, continuation)
    for (const auto& [w, _] : words) {
        const auto syms = seg(w);
        for (std::size_t i = 0; i < syms.size(); ++i) (i == 0 ? used[syms[i]].first : used[syms[i]].second) = true;
    }
    for (const auto& m : merges.merges) {
        auto it = used.find(m.merged());
        if (it == used.end()) continue;
        if (it->second.first) v.add({m.merged(), false, false});
        if (it->second.second) v.add({m.merged(), true, false});
    }
    return v;
}

/// Merge table plus vocabulary; encodes sentences to indices and back.
class Tokenizer {
public:
    Tokenizer() : segmenter_(merges_) {}
    Tokenizer(MergeTable merges, Vocab vocab)
        : merges_(std::move(merges)), vocab_(std::move(vocab)), segmenter_(merges_) {}
    Tokenizer(const Tokenizer& o) : Tokenizer(o.merges_, o.vocab_) {}
    Tokenizer& operator=(const Tokenizer& o) {
        if (this != &o) {
            merges_ = o.merges_;
            vocab_ = o.vocab_;
            segmenter_ = Segmenter(merges_);
        }
        return *this;
    }

    const Vocab& vocab() const { return vocab_; }
    const MergeTable& merges() const { return merges_; }

    std::vector<std::string> segment_word(const std::string& word) const { return segmenter_(word); }

    std::vector<int> encode(const std::string& sentence) const { return encode_words(split_ws(sentence)); }

    std::vector<int> encode_words(const std::vector<std::string>& words) const {
        std::vector<int> out;
        for (const auto& w : words) {
            const auto syms = segmenter_(w);
            for (std::size_t i = 0; i < syms.size(); ++i) emit(syms[i], i > 0, out);
        }
        return out;
    }

    /// Inverse of encode. Special symbols other than <unk> are dropped.
    std::string decode(const std::vector<int>& indices) const {
        std::string out;
        for (int idx : indices) {
            if (idx < 0 || static_cast<std::size_t>(idx) >= vocab_.size()) continue;
            const auto& s = vocab_.symbol(idx);
            if (s.special && idx != Vocab::unk) continue;
            if (!s.continuation && !out.empty()) out += ' ';
            out += s.piece;
        }
        return out;
    }

private:
    // Pieces pruned from the vocabulary are emitted as their merge constituents.
    void emit(const std::string& piece, bool continuation, std::vector<int>& out) const {
        if (vocab_.contains(piece, continuation)) {
            out.push_back(vocab_.find(piece, continuation));
            return;
        }
        if (const Merge* m = segmenter_.producer(piece)) {
            emit(m->left, continuation, out);
            emit(m->right, true, out);
            return;
        }
        out.push_back(Vocab::unk);
    }

    MergeTable merges_;
    Vocab vocab_;
    Segmenter segmenter_;
};

}  // namespace crossconst
