#pragma once

// Shared fixtures and independent oracles for the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "crossconst/batching.hpp"
#include "crossconst/bpe.hpp"
#include "crossconst/corpus.hpp"
#include "crossconst/model.hpp"
#include "crossconst/training.hpp"

namespace testing_support {

using namespace crossconst;

/// Random tagged pair over a vocabulary of size V: tag in [4, 4 + tags),
/// body tokens after the tags, target ending in <eos>.
inline TaggedPair random_pair(std::mt19937_64& rng, int V, int tags, int src_len, int tgt_len) {
    std::uniform_int_distribution<int> tok(4 + tags, V - 1);
    std::uniform_int_distribution<int> tag(4, 4 + tags - 1);
    TaggedPair p;
    const int t = tag(rng);
    p.src_lang = {"L0"};
    p.tgt_lang = {"L" + std::to_string(t - 4)};
    p.src_tokens.push_back(t);
    for (int i = 0; i < src_len; ++i) p.src_tokens.push_back(tok(rng));
    for (int i = 0; i + 1 < tgt_len; ++i) p.tgt_tokens.push_back(tok(rng));
    p.tgt_tokens.push_back(Vocab::eos);
    return p;
}

inline ModelConfig tiny_config(int V = 23) {
    ModelConfig c;
    c.num_layers = 2;
    c.num_heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.vocab_size = V;
    c.dropout_rate = 0.0;
    c.max_positions = 32;
    return c;
}

/// Initialisation with a wider spread than the default so that layer norms,
/// biases and attention all carry non-trivial gradients.
inline ModelParams<double> perturbed_params(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.3) {
    auto p = init_params<double>(cfg, seed);
    std::mt19937_64 rng(seed + 1000);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& t : p.tensors())
        for (auto& v : t.storage()) v += n(rng);
    return p;
}

struct GradCheckResult {
    double max_rel_error = 0;
    std::string worst_param;
    std::size_t checked = 0;
    std::size_t kinks = 0;  // entries whose stencil straddled a ReLU kink and were rechecked at a smaller step
};

/// Relative error with a floor that keeps near-zero gradients from dividing by
/// noise. Central differences at step 1e-4 carry roundoff of about eps·|f|/h ~ 1e-11,
/// so structurally zero gradients (key biases under softmax) need a floor well above it.
inline double rel_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central finite differences of a scalar function of the registry against
/// analytic gradients, over every scalar of every parameter.
///
/// The loss is piecewise smooth (ReLU). When an entry fails at `step` and the
/// central difference at step/10 moves by far more than smooth truncation error
/// allows, a kink lies inside the stencil; that entry is rechecked at step/10
/// and step/100 and counted in `kinks`. A wrong gradient disagrees at every step.
inline GradCheckResult finite_difference_check(ModelParams<double>& params, const std::vector<Matrix<double>>& analytic,
                                               const std::function<double(const ModelParams<double>&)>& f,
                                               double step = 1e-4, double tol = 1e-4) {
    GradCheckResult r;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = params.tensors()[i];
        for (std::size_t j = 0; j < t.size(); ++j) {
            const double orig = t.data()[j];
            auto central = [&](double h) {
                t.data()[j] = orig + h;
                const double up = f(params);
                t.data()[j] = orig - h;
                const double down = f(params);
                t.data()[j] = orig;
                return (up - down) / (2 * h);
            };
            const double an = analytic[i].data()[j];
            const double fd = central(step);
            double e = rel_error(an, fd);
            if (e >= tol) {
                const double fd10 = central(step / 10);
                if (rel_error(fd, fd10) > 1e-3) {
                    ++r.kinks;
                    e = std::min(rel_error(an, fd10), rel_error(an, central(step / 100)));
                }
            }
            if (e > r.max_rel_error) {
                r.max_rel_error = e;
                r.worst_param = params.names()[i] + "[" + std::to_string(j) + "]";
            }
            ++r.checked;
        }
    }
    return r;
}

enum class LossPart { Ce, Kl, Total };

/// Scalar objective component and its analytic gradient (eval mode, 64-bit).
inline std::pair<double, std::vector<Matrix<double>>> objective_and_grad(const ModelParams<double>& params,
                                                                         const std::vector<const TaggedPair*>& pairs,
                                                                         const TrainConfig& cfg, LossPart part) {
    Transformer<double> model(params.config());
    ad::Tape<double> tape;
    auto bound = bind(tape, params, true);
    std::mt19937_64 unused(0);
    auto vars = record_objective(tape, model, bound, bound, pairs, cfg, Mode::Eval, unused);
    ad::Var target = part == LossPart::Ce ? vars.ce : (part == LossPart::Kl ? vars.kl : vars.total);
    tape.backward(target);
    return {tape.value(target)(0, 0), collect_grads(tape, params, {&bound})};
}

inline double objective_value(const ModelParams<double>& params, const std::vector<const TaggedPair*>& pairs,
                              const TrainConfig& cfg, LossPart part) {
    Transformer<double> model(params.config());
    ad::Tape<double> tape;
    auto bound = bind(tape, params, false);
    std::mt19937_64 unused(0);
    auto vars = record_objective(tape, model, bound, bound, pairs, cfg, Mode::Eval, unused);
    ad::Var target = part == LossPart::Ce ? vars.ce : (part == LossPart::Kl ? vars.kl : vars.total);
    return tape.value(target)(0, 0);
}

/// Small synthetic corpus with a trained tokenizer.
struct SmallWorld {
    MultiwayCorpus corpus;
    Tokenizer tok;
};

inline SmallWorld small_world(int num_train = 300, int merges = 60, std::uint64_t seed = 7) {
    SynthSpec s;
    s.seed = seed;
    s.num_train = num_train;
    s.num_valid = 40;
    s.num_test = 40;
    auto c = generate_synthetic_corpus(s);
    const auto texts = c.texts(c.train_ids);
    auto m = train_bpe(texts, merges);
    auto v = Vocab::build(c.languages, texts, m);
    return {std::move(c), Tokenizer(std::move(m), std::move(v))};
}

// ---------------------------------------------------------------------------
// Independent BLEU oracle: explicit n-gram lists, clipping by linear scans.

inline double brute_force_bleu(const std::vector<std::vector<std::string>>& hyps,
                               const std::vector<std::vector<std::string>>& refs) {
    double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
    double c = 0, r = 0;
    for (std::size_t s = 0; s < hyps.size(); ++s) {
        c += double(hyps[s].size());
        r += double(refs[s].size());
        for (std::size_t n = 1; n <= 4; ++n) {
            std::vector<std::vector<std::string>> hg, rg;
            for (std::size_t i = 0; i + n <= hyps[s].size(); ++i)
                hg.emplace_back(hyps[s].begin() + long(i), hyps[s].begin() + long(i + n));
            for (std::size_t i = 0; i + n <= refs[s].size(); ++i)
                rg.emplace_back(refs[s].begin() + long(i), refs[s].begin() + long(i + n));
            total[n - 1] += double(hg.size());
            std::vector<bool> used(rg.size(), false);
            for (const auto& g : hg)
                for (std::size_t k = 0; k < rg.size(); ++k)
                    if (!used[k] && rg[k] == g) {
                        used[k] = true;
                        match[n - 1] += 1;
                        break;
                    }
        }
    }
    if (c == 0) return 0;
    double logp = 0;
    for (int n = 0; n < 4; ++n) {
        if (total[n] == 0 || match[n] == 0) return 0;
        logp += std::log(match[n] / total[n]) / 4;
    }
    const double bp = c > r ? 1.0 : std::exp(1 - r / c);
    return 100 * bp * std::exp(logp);
}

}  // namespace testing_support
