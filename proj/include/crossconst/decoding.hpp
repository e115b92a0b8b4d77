#pragma once

// Greedy and beam-search generation, teacher-forced re-scoring, and the
// two-pass pivot baseline.
//
// Each decoding step re-runs the decoder over the whole prefix. Outputs are
// short (at most a few dozen tokens), so the quadratic cost is cheap, and the
// step log-probabilities come from exactly the code path used in training.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <thread>
#include <vector>

#include "crossconst/bpe.hpp"
#include "crossconst/errors.hpp"
#include "crossconst/model.hpp"

namespace crossconst {

struct BeamConfig {
    int beam_size = 5;
    double length_penalty = 0.6;
    double max_len_factor = 2.0;
    int max_len_constant = 8;

    void validate() const {
        if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
        if (!(length_penalty >= 0.0) || !std::isfinite(length_penalty)) throw ConfigError("length_penalty must be >= 0");
        if (!(max_len_factor >= 0.0) || !std::isfinite(max_len_factor) || max_len_constant < 0)
            throw ConfigError("max length bounds must be finite and >= 0");
    }

    /// Output length cap for a source of `src_len` tokens.
    std::size_t max_len(std::size_t src_len) const {
        return static_cast<std::size_t>(std::floor(max_len_factor * double(src_len))) +
               static_cast<std::size_t>(max_len_constant);
    }
};

struct Hypothesis {
    std::vector<int> tokens;  // ends with <eos> unless truncated at the length cap
    double raw_score = 0;
    double normalized_score = 0;

    bool finished() const { return !tokens.empty() && tokens.back() == Vocab::eos; }
};

inline double normalize_score(double raw, std::size_t len, double beta) {
    return raw / std::pow(double(std::max<std::size_t>(len, 1)), beta);
}

/// Descending normalized score; equal scores go to the lexicographically smaller sequence.
inline bool better_hypothesis(const Hypothesis& a, const Hypothesis& b) {
    if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
    return a.tokens < b.tokens;
}

/// Next-token log-probabilities for a batch of prefixes of one encoded source.
template <typename T>
class StepScorer {
public:
    StepScorer(const ModelParams<T>& params, std::span<const int> src)
        : params_(&params), model_(params.config()), src_len_(src.size()) {
        if (src.empty()) throw DataError("cannot decode an empty source");
        auto enc = encode_sentence(params, src, std::vector<std::uint8_t>(src.size(), 0));
        memory_ = std::move(enc.hidden);
    }

    std::size_t source_length() const { return src_len_; }
    std::size_t vocab_size() const { return static_cast<std::size_t>(params_->config().vocab_size); }

    /// Row i holds log P(· | prefixes[i]); every prefix must have the same length.
    Matrix<T> next(const std::vector<std::vector<int>>& prefixes) const {
        const std::size_t k = prefixes.size();
        const std::size_t len = prefixes.front().size() + 1;
        std::vector<int> tgt_in;
        tgt_in.reserve(k * len);
        for (const auto& p : prefixes) {
            if (p.size() + 1 != len) throw std::invalid_argument("StepScorer: ragged prefixes");
            tgt_in.push_back(Vocab::bos);
            tgt_in.insert(tgt_in.end(), p.begin(), p.end());
        }
        Matrix<T> mem(k * src_len_, memory_.cols());
        for (std::size_t i = 0; i < k; ++i)
            std::copy(memory_.storage().begin(), memory_.storage().end(), mem.row_ptr(i * src_len_));
        const std::vector<std::uint8_t> src_pad(k * src_len_, 0), tgt_pad(k * len, 0);
        ad::Tape<T> tape;
        auto bound = bind(tape, *params_, false);
        ad::Var m = tape.constant(std::move(mem));
        std::mt19937_64 unused(0);
        ad::Var lp = model_.decode(tape, bound, m, src_pad, src_len_, tgt_in, tgt_pad, k, len, Mode::Eval, unused);
        const auto& all = tape.value(lp);
        Matrix<T> out(k, all.cols());
        for (std::size_t i = 0; i < k; ++i) std::copy_n(all.row_ptr(i * len + len - 1), all.cols(), out.row_ptr(i));
        return out;
    }

private:
    const ModelParams<T>* params_;
    Transformer<T> model_;
    std::size_t src_len_;
    Matrix<T> memory_;
};

template <typename T>
std::size_t decode_cap(const ModelParams<T>& params, std::size_t src_len, const BeamConfig& cfg) {
    const auto cap = std::min(cfg.max_len(src_len), static_cast<std::size_t>(params.config().max_positions));
    if (cap == 0) throw ConfigError("maximum output length is zero");
    return cap;
}

/// Argmax token per step until <eos> or the length cap. Ties go to the lower index.
template <typename T>
Hypothesis greedy_decode(std::span<const int> src, const ModelParams<T>& params, const BeamConfig& cfg) {
    cfg.validate();
    StepScorer<T> scorer(params, src);
    const std::size_t cap = decode_cap(params, src.size(), cfg);
    Hypothesis h;
    while (h.tokens.size() < cap) {
        const auto lp = scorer.next({h.tokens});
        const auto row = lp.row(0);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        h.raw_score += double(row[static_cast<std::size_t>(best)]);
        h.tokens.push_back(best);
        if (best == Vocab::eos) break;
    }
    h.normalized_score = normalize_score(h.raw_score, h.tokens.size(), cfg.length_penalty);
    return h;
}

/// Beam search. Each step keeps the beam_size best expansions by cumulative
/// log-probability; expansions ending in <eos> (or hitting the cap) retire into
/// the finished pool and use up a slot. Search stops once beam_size hypotheses
/// have finished. Returns at most beam_size hypotheses, best first.
template <typename T>
std::vector<Hypothesis> beam_search(std::span<const int> src, const ModelParams<T>& params, const BeamConfig& cfg) {
    cfg.validate();
    StepScorer<T> scorer(params, src);
    const std::size_t cap = decode_cap(params, src.size(), cfg);
    const auto beam = static_cast<std::size_t>(cfg.beam_size);
    struct Live {
        std::vector<int> tokens;
        double raw = 0;
    };
    struct Cand {
        double score;
        std::size_t hyp;
        int token;
    };
    std::vector<Live> alive{Live{}};
    std::vector<Hypothesis> finished;
    for (std::size_t step = 1; step <= cap && !alive.empty() && finished.size() < beam; ++step) {
        std::vector<std::vector<int>> prefixes;
        for (const auto& a : alive) prefixes.push_back(a.tokens);
        const auto lp = scorer.next(prefixes);
        std::vector<Cand> cands;
        cands.reserve(alive.size() * lp.cols());
        for (std::size_t i = 0; i < alive.size(); ++i)
            for (std::size_t v = 0; v < lp.cols(); ++v)
                cands.push_back({alive[i].raw + double(lp(i, v)), i, static_cast<int>(v)});
        const std::size_t keep = std::min(beam, cands.size());
        auto order = [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.hyp != b.hyp) return a.hyp < b.hyp;
            return a.token < b.token;
        };
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), order);
        std::vector<Live> next;
        for (std::size_t c = 0; c < keep; ++c) {
            Live l{alive[cands[c].hyp].tokens, cands[c].score};
            l.tokens.push_back(cands[c].token);
            if (cands[c].token == Vocab::eos || step == cap) {
                Hypothesis h{std::move(l.tokens), l.raw, 0};
                h.normalized_score = normalize_score(h.raw_score, h.tokens.size(), cfg.length_penalty);
                finished.push_back(std::move(h));
            } else {
                next.push_back(std::move(l));
            }
        }
        alive = std::move(next);
    }
    std::sort(finished.begin(), finished.end(), better_hypothesis);
    if (finished.size() > beam) finished.resize(beam);
    return finished;
}

/// Σ log P(tokens | src) under teacher forcing, in eval mode.
template <typename T>
double rescore(std::span<const int> src, std::span<const int> tokens, const ModelParams<T>& params) {
    if (tokens.empty()) throw std::invalid_argument("rescore: empty hypothesis");
    Transformer<T> model(params.config());
    ad::Tape<T> tape;
    auto bound = bind(tape, params, false);
    std::vector<int> tgt_in{Vocab::bos};
    tgt_in.insert(tgt_in.end(), tokens.begin(), tokens.end() - 1);
    const std::vector<std::uint8_t> src_pad(src.size(), 0), tgt_pad(tokens.size(), 0);
    std::mt19937_64 unused(0);
    ad::Var mem = model.encode(tape, bound, src, src_pad, 1, src.size(), Mode::Eval, unused);
    ad::Var lp = model.decode(tape, bound, mem, src_pad, src.size(), tgt_in, tgt_pad, 1, tokens.size(), Mode::Eval,
                              unused);
    const auto& v = tape.value(lp);
    double s = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) s += double(v(i, static_cast<std::size_t>(tokens[i])));
    return s;
}

/// Best beam hypothesis for a tagged source.
template <typename T>
Hypothesis translate(std::span<const int> tagged_src, const ModelParams<T>& params, const BeamConfig& cfg) {
    auto hyps = beam_search(tagged_src, params, cfg);
    if (hyps.empty()) throw InvariantError("beam search returned no hypothesis");
    return std::move(hyps.front());
}

inline std::vector<int> retag(int tag, std::span<const int> body) {
    std::vector<int> out{tag};
    for (int t : body)
        if (t != Vocab::eos) out.push_back(t);
    return out;
}

struct PivotResult {
    Hypothesis intermediate;  // empty when no second pass was needed
    Hypothesis output;
};

/// Source -> pivot -> target. `src_body` is the untagged source. The pivot
/// output is fed back as tokens (shared vocabulary), retagged with the target tag.
template <typename T>
PivotResult pivot_translate(std::span<const int> src_body, const LanguageId& src_lang, const LanguageId& pivot,
                            const LanguageId& tgt_lang, const ModelParams<T>& params, const Vocab& vocab,
                            const BeamConfig& cfg) {
    PivotResult r;
    if (pivot == tgt_lang || src_lang == pivot) {
        r.output = translate(retag(vocab.tag(tgt_lang), src_body), params, cfg);
        return r;
    }
    r.intermediate = translate(retag(vocab.tag(pivot), src_body), params, cfg);
    r.output = translate(retag(vocab.tag(tgt_lang), r.intermediate.tokens), params, cfg);
    return r;
}

/// Applies `fn(i)` for i in [0, n) on `threads` workers; results are keyed by i.
template <typename R>
std::vector<R> parallel_map(std::size_t n, int threads, const std::function<R(std::size_t)>& fn) {
    std::vector<R> out(n);
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
        pool.emplace_back([&, w] {
            (void)w;
            for (std::size_t i = next++; i < n && !failed; i = next++) {
                try {
                    out[i] = fn(i);
                } catch (...) {
                    if (!failed.exchange(true)) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return out;
}

/// Decodes every tagged source; identical results for any thread count.
template <typename T>
std::vector<Hypothesis> translate_all(const std::vector<std::vector<int>>& tagged_sources, const ModelParams<T>& params,
                                      const BeamConfig& cfg, int threads = 1) {
    return parallel_map<Hypothesis>(tagged_sources.size(), threads,
                                    [&](std::size_t i) { return translate(tagged_sources[i], params, cfg); });
}

struct TranslationRow {
    int id = 0;
    LanguageId src_lang, tgt_lang;
    std::string text;
    double normalized_score = 0;
};

/// TSV: id, src_lang, tgt_lang, hypothesis text, normalized_score.
inline void write_translations(const std::vector<TranslationRow>& rows, std::ostream& os) {
    const auto prec = os.precision(9);
    for (const auto& r : rows)
        os << r.id << '\t' << r.src_lang.code << '\t' << r.tgt_lang.code << '\t' << r.text << '\t' << r.normalized_score
           << '\n';
    os.precision(prec);
}

}  // namespace crossconst
