#pragma once

// Corpus BLEU-4, cosine similarity search over pooled encoder states, the
// representation dump, and the per-direction evaluation report.

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossconst/batching.hpp"
#include "crossconst/config.hpp"
#include "crossconst/corpus.hpp"
#include "crossconst/decoding.hpp"
#include "crossconst/errors.hpp"
#include "crossconst/model.hpp"

namespace crossconst {

struct BleuReport {
    double bleu = 0;  // 0..100
    std::array<double, 4> precisions{};
    std::array<std::size_t, 4> matches{};
    std::array<std::size_t, 4> totals{};
    double brevity_penalty = 0;
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;
};

namespace bleu_detail {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts ngrams(const std::vector<std::string>& toks, std::size_t n) {
    NgramCounts c;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++c[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
    return c;
}

}  // namespace bleu_detail

/// Corpus-level BLEU-4 with clipped n-gram precision and brevity penalty,
/// unsmoothed: any zero precision gives 0.
inline BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                              const std::vector<std::vector<std::string>>& refs) {
    if (hyps.size() != refs.size()) throw DataError("corpus_bleu: hypothesis and reference counts differ");
    if (hyps.empty()) throw DataError("corpus_bleu: empty corpus");
    BleuReport r;
    for (std::size_t s = 0; s < hyps.size(); ++s) {
        r.hyp_len += hyps[s].size();
        r.ref_len += refs[s].size();
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto hc = bleu_detail::ngrams(hyps[s], n);
            const auto rc = bleu_detail::ngrams(refs[s], n);
            for (const auto& [g, c] : hc) {
                auto it = rc.find(g);
                r.matches[n - 1] += std::min(c, it == rc.end() ? std::size_t{0} : it->second);
                r.totals[n - 1] += c;
            }
        }
    }
    double log_sum = 0;
    bool zero = r.hyp_len == 0;
    for (std::size_t n = 0; n < 4; ++n) {
        r.precisions[n] = r.totals[n] ? double(r.matches[n]) / double(r.totals[n]) : 0.0;
        if (r.precisions[n] <= 0) zero = true;
        else log_sum += std::log(r.precisions[n]);
    }
    r.brevity_penalty = r.hyp_len == 0 ? 0.0 : std::min(1.0, std::exp(1.0 - double(r.ref_len) / double(r.hyp_len)));
    r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
    return r;
}

inline BleuReport corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
    std::vector<std::vector<std::string>> h, r;
    for (const auto& s : hyps) h.push_back(split_ws(s));
    for (const auto& s : refs) r.push_back(split_ws(s));
    return corpus_bleu(h, r);
}

// ---------------------------------------------------------------------------
// Representation dump: JSON Lines {"id": int, "lang": string, "vec": [floats]}.

struct RepresentationRecord {
    int id = 0;
    std::string lang;
    std::vector<double> vec;
};

using RepresentationDump = std::vector<RepresentationRecord>;

inline void check_dump(const RepresentationDump& dump) {
    std::set<std::pair<int, std::string>> seen;
    for (const auto& r : dump) {
        if (r.vec.size() != dump.front().vec.size()) throw DataError("representation dump: vector dimensions differ");
        if (!seen.emplace(r.id, r.lang).second)
            throw DataError("representation dump: duplicate record id " + std::to_string(r.id) + " lang " + r.lang);
    }
}

inline void write_dump(const RepresentationDump& dump, std::ostream& os) {
    for (const auto& r : dump) {
        nlohmann::json j{{"id", r.id}, {"lang", r.lang}, {"vec", r.vec}};
        os << j.dump() << '\n';
    }
}

inline RepresentationDump read_dump(std::istream& is) {
    RepresentationDump out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("id").get<int>(), j.at("lang").get<std::string>(), j.at("vec").get<std::vector<double>>()});
        } catch (const nlohmann::json::exception& e) {
            throw DataError("representation dump line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    check_dump(out);
    return out;
}

/// Pooled encoder states for every (id, language) of `ids`. Every source is
/// tagged toward `probe`, so vectors differ only by source language.
template <typename T>
RepresentationDump export_representations(const MultiwayCorpus& corpus, const std::vector<int>& ids,
                                          const Tokenizer& tok, const ModelParams<T>& params,
                                          const LanguageId& probe, int threads = 1) {
    const int probe_tag = tok.vocab().tag(probe);
    const std::size_t M = corpus.languages.size();
    auto recs = parallel_map<RepresentationRecord>(ids.size() * M, threads, [&](std::size_t k) {
        const int id = ids[k / M];
        const std::size_t l = k % M;
        const auto src = retag(probe_tag, tok.encode_words(corpus.words(id, l)));
        const auto pooled = pooled_representation(encode_sentence(params, src));
        return RepresentationRecord{id, corpus.languages[l].code, std::vector<double>(pooled.begin(), pooled.end())};
    });
    return recs;
}

namespace sim_detail {

inline std::map<int, const std::vector<double>*> by_id(const RepresentationDump& dump, const std::string& lang) {
    std::map<int, const std::vector<double>*> out;
    for (const auto& r : dump)
        if (r.lang == lang) out[r.id] = &r.vec;
    return out;
}

inline double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline std::pair<std::map<int, const std::vector<double>*>, std::map<int, const std::vector<double>*>>
aligned(const RepresentationDump& dump, const std::string& a, const std::string& b) {
    auto va = by_id(dump, a), vb = by_id(dump, b);
    if (va.empty()) throw DataError("no representations for language " + a);
    if (va.size() != vb.size() || !std::equal(va.begin(), va.end(), vb.begin(),
                                              [](const auto& x, const auto& y) { return x.first == y.first; }))
        throw DataError("languages " + a + " and " + b + " have different id sets");
    for (const auto* m : {&va, &vb})
        for (const auto& [id, v] : *m)
            if (norm(*v) == 0.0) throw DataError("zero-norm representation for id " + std::to_string(id));
    return {std::move(va), std::move(vb)};
}

}  // namespace sim_detail

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    const double na = sim_detail::norm(a), nb = sim_detail::norm(b);
    if (na == 0.0 || nb == 0.0) throw DataError("cosine of a zero-norm vector");
    return sim_detail::dot(a, b) / (na * nb);
}

/// Percentage of source sentences whose cosine-nearest target-language vector
/// is their own parallel sentence. Ties go to the lower id.
inline double similarity_search(const RepresentationDump& dump, const std::string& src_lang,
                                const std::string& tgt_lang) {
    const auto [src, tgt] = sim_detail::aligned(dump, src_lang, tgt_lang);
    std::vector<int> ids;
    std::vector<std::vector<double>> unit;
    for (const auto& [id, v] : tgt) {
        ids.push_back(id);
        const double n = sim_detail::norm(*v);
        std::vector<double> u(*v);
        for (double& x : u) x /= n;
        unit.push_back(std::move(u));
    }
    std::size_t hits = 0;
    for (const auto& [id, v] : src) {
        std::size_t best = 0;
        double best_s = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < ids.size(); ++j) {
            const double s = sim_detail::dot(*v, unit[j]);
            if (s > best_s) {
                best_s = s;
                best = j;
            }
        }
        if (ids[best] == id) ++hits;
    }
    return 100.0 * double(hits) / double(src.size());
}

/// Mean cosine between the vectors of parallel sentences in two languages.
inline double mean_parallel_cosine(const RepresentationDump& dump, const std::string& a, const std::string& b) {
    const auto [va, vb] = sim_detail::aligned(dump, a, b);
    double s = 0;
    for (const auto& [id, v] : va) s += cosine(*v, *vb.at(id));
    return s / double(va.size());
}

// ---------------------------------------------------------------------------

enum class DirectionKind { Supervised, ZeroShot, Pivot };

inline std::string kind_name(DirectionKind k) {
    switch (k) {
        case DirectionKind::Supervised: return "supervised";
        case DirectionKind::ZeroShot: return "zero-shot";
        case DirectionKind::Pivot: return "pivot";
    }
    return "?";
}

struct DirectionResult {
    std::string src, tgt;
    DirectionKind kind = DirectionKind::Supervised;
    BleuReport bleu;
    std::vector<std::string> hypotheses;  // detokenized, aligned with the evaluated ids
};

struct SimSearchEntry {
    std::string src, tgt;
    double accuracy = 0;
    double mean_cosine = 0;
};

struct EvalReport {
    std::vector<int> ids;
    std::vector<DirectionResult> directions;
    double supervised_average = 0;
    double zero_shot_average = 0;
    std::optional<double> pivot_average;
    std::vector<SimSearchEntry> simsearch;
    double simsearch_average = 0;

    const DirectionResult& direction(const std::string& s, const std::string& t, DirectionKind k) const {
        for (const auto& d : directions)
            if (d.src == s && d.tgt == t && d.kind == k) return d;
        throw std::out_of_range("no direction " + s + "->" + t);
    }
    const SimSearchEntry& search(const std::string& s, const std::string& t) const {
        for (const auto& e : simsearch)
            if (e.src == s && e.tgt == t) return e;
        throw std::out_of_range("no similarity entry " + s + "->" + t);
    }
};

struct EvalOptions {
    LanguageId pivot{"L0"};
    bool with_pivot = false;
    int threads = 1;
    BeamConfig beam;
};

inline double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0;
    for (double x : xs) s += x;
    return s / double(xs.size());
}

/// Decodes every supervised (pivot <-> other) and zero-shot (other <-> other)
/// direction over `ids`, optionally the pivot baseline for zero-shot pairs, and
/// runs similarity search on the same sentences.
template <typename T>
EvalReport evaluate_run(const ModelParams<T>& params, const MultiwayCorpus& corpus, const Tokenizer& tok,
                        const std::vector<int>& ids, const EvalOptions& opt) {
    if (ids.empty()) throw DataError("evaluate_run: no sentences to evaluate");
    if (!corpus.has_language(opt.pivot)) throw DataError("pivot " + opt.pivot.code + " not in corpus");
    EvalReport rep;
    rep.ids = ids;
    const auto& langs = corpus.languages;
    std::vector<double> sup, zs, piv;
    auto references = [&](std::size_t t) {
        std::vector<std::string> refs;
        for (int id : ids) refs.push_back(corpus.text(id, t));
        return refs;
    };
    for (std::size_t s = 0; s < langs.size(); ++s) {
        for (std::size_t t = 0; t < langs.size(); ++t) {
            if (s == t) continue;
            const bool supervised = langs[s] == opt.pivot || langs[t] == opt.pivot;
            std::vector<std::vector<int>> srcs;
            for (int id : ids) srcs.push_back(retag(tok.vocab().tag(langs[t]), tok.encode_words(corpus.words(id, s))));
            const auto hyps = translate_all(srcs, params, opt.beam, opt.threads);
            DirectionResult d{langs[s].code, langs[t].code,
                              supervised ? DirectionKind::Supervised : DirectionKind::ZeroShot, {}, {}};
            for (const auto& h : hyps) d.hypotheses.push_back(tok.decode(h.tokens));
            d.bleu = corpus_bleu(d.hypotheses, references(t));
            (supervised ? sup : zs).push_back(d.bleu.bleu);
            rep.directions.push_back(std::move(d));
            if (supervised || !opt.with_pivot) continue;
            auto outs = parallel_map<std::string>(ids.size(), opt.threads, [&](std::size_t i) {
                const auto body = tok.encode_words(corpus.words(ids[i], s));
                return tok.decode(pivot_translate(body, langs[s], opt.pivot, langs[t], params, tok.vocab(), opt.beam)
                                      .output.tokens);
            });
            DirectionResult p{langs[s].code, langs[t].code, DirectionKind::Pivot, {}, std::move(outs)};
            p.bleu = corpus_bleu(p.hypotheses, references(t));
            piv.push_back(p.bleu.bleu);
            rep.directions.push_back(std::move(p));
        }
    }
    rep.supervised_average = mean_of(sup);
    rep.zero_shot_average = mean_of(zs);
    if (opt.with_pivot) rep.pivot_average = mean_of(piv);

    const auto dump = export_representations(corpus, ids, tok, params, opt.pivot, opt.threads);
    std::vector<double> accs;
    for (std::size_t s = 0; s < langs.size(); ++s)
        for (std::size_t t = 0; t < langs.size(); ++t) {
            if (s == t) continue;
            SimSearchEntry e{langs[s].code, langs[t].code, similarity_search(dump, langs[s].code, langs[t].code),
                             mean_parallel_cosine(dump, langs[s].code, langs[t].code)};
            accs.push_back(e.accuracy);
            rep.simsearch.push_back(e);
        }
    rep.simsearch_average = mean_of(accs);
    return rep;
}

inline nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json dirs = nlohmann::json::array();
    for (const auto& d : r.directions)
        dirs.push_back({{"src", d.src},
                        {"tgt", d.tgt},
                        {"kind", kind_name(d.kind)},
                        {"bleu", d.bleu.bleu},
                        {"precisions", d.bleu.precisions},
                        {"brevity_penalty", d.bleu.brevity_penalty},
                        {"hyp_len", d.bleu.hyp_len},
                        {"ref_len", d.bleu.ref_len}});
    nlohmann::json sims = nlohmann::json::array();
    for (const auto& e : r.simsearch)
        sims.push_back({{"src", e.src}, {"tgt", e.tgt}, {"accuracy", e.accuracy}, {"mean_cosine", e.mean_cosine}});
    nlohmann::json j{{"num_sentences", r.ids.size()},
                     {"directions", dirs},
                     {"supervised_average", r.supervised_average},
                     {"zero_shot_average", r.zero_shot_average},
                     {"simsearch", sims},
                     {"simsearch_average", r.simsearch_average}};
    if (r.pivot_average) j["pivot_average"] = *r.pivot_average;
    return j;
}

inline void print_report(const EvalReport& r, std::ostream& os) {
    os << std::left << std::setw(10) << "direction" << std::setw(12) << "kind" << std::right << std::setw(8) << "BLEU"
       << std::setw(8) << "BP" << '\n';
    os << std::fixed << std::setprecision(2);
    for (const auto& d : r.directions)
        os << std::left << std::setw(10) << (d.src + "->" + d.tgt) << std::setw(12) << kind_name(d.kind) << std::right
           << std::setw(8) << d.bleu.bleu << std::setw(8) << d.bleu.brevity_penalty << '\n';
    os << "supervised average " << r.supervised_average << '\n';
    os << "zero-shot average  " << r.zero_shot_average << '\n';
    if (r.pivot_average) os << "pivot average      " << *r.pivot_average << '\n';
    os << std::left << std::setw(10) << "search" << std::right << std::setw(10) << "acc%" << std::setw(10) << "cos"
       << '\n';
    for (const auto& e : r.simsearch)
        os << std::left << std::setw(10) << (e.src + "->" + e.tgt) << std::right << std::setw(10) << e.accuracy
           << std::setw(10) << std::setprecision(4) << e.mean_cosine << std::setprecision(2) << '\n';
    os << "search average " << r.simsearch_average << '\n';
    os.unsetf(std::ios::floatfield);
}

}  // namespace crossconst
