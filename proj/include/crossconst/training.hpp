#pragma once

// Label-smoothed cross-entropy, the cross-lingual KL consistency term, their
// weighted sum, and the Adam / inverse-sqrt optimisation loop used for both
// the pretraining and the consistency-finetuning stage.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crossconst/autodiff.hpp"
#include "crossconst/batching.hpp"
#include "crossconst/config.hpp"
#include "crossconst/errors.hpp"
#include "crossconst/model.hpp"

namespace crossconst {

enum class Stage { Pretrain, Finetune };

inline std::string stage_name(Stage s) { return s == Stage::Pretrain ? "pretrain" : "finetune"; }

struct TrainConfig {
    double alpha = 0.25;
    double label_smoothing = 0.1;
    double lr_base = 2e-3;
    int warmup_steps = 400;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-8;
    double clip_norm = 5.0;
    int max_steps = 3000;
    int valid_interval = 250;
    int patience = 0;  // validation points without improvement before stopping; 0 disables
    double min_improvement = 0.0;  // relative drop in valid ce that counts as improvement for patience
    std::size_t max_tokens = 512;
    Stage stage = Stage::Pretrain;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
        if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
        if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0))
            throw ConfigError("adam betas must lie in (0, 1)");
        if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
        if (!(lr_base > 0.0)) throw ConfigError("lr_base must be > 0");
        if (max_steps < 0 || valid_interval < 1) throw ConfigError("max_steps must be >= 0 and valid_interval >= 1");
        if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
        if (patience < 0 || !(min_improvement >= 0.0 && min_improvement < 1.0))
            throw ConfigError("patience must be >= 0 and min_improvement in [0, 1)");
    }
};

/// Applies one "key = value" setting; returns false for keys it does not own.
inline bool apply_train_setting(TrainConfig& c, const std::string& k, const std::string& v) {
    if (k == "alpha") c.alpha = parse_double(k, v);
    else if (k == "label_smoothing") c.label_smoothing = parse_double(k, v);
    else if (k == "lr") c.lr_base = parse_double(k, v);
    else if (k == "warmup_steps") c.warmup_steps = static_cast<int>(parse_int(k, v));
    else if (k == "adam_beta1") c.adam_beta1 = parse_double(k, v);
    else if (k == "adam_beta2") c.adam_beta2 = parse_double(k, v);
    else if (k == "adam_eps") c.adam_eps = parse_double(k, v);
    else if (k == "clip_norm") c.clip_norm = parse_double(k, v);
    else if (k == "max_steps") c.max_steps = static_cast<int>(parse_int(k, v));
    else if (k == "valid_interval") c.valid_interval = static_cast<int>(parse_int(k, v));
    else if (k == "patience") c.patience = static_cast<int>(parse_int(k, v));
    else if (k == "min_improvement") c.min_improvement = parse_double(k, v);
    else if (k == "max_tokens") c.max_tokens = static_cast<std::size_t>(parse_int(k, v));
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_int(k, v));
    else return false;
    return true;
}

struct LossBreakdown {
    double ce = 0;
    double kl = 0;
    double total = 0;
    std::size_t token_count = 0;
};

// ---------------------------------------------------------------------------
// Reference losses on explicit probability rows (64-bit, no tape).

/// Mean over unmasked rows of -Σ_v q_v log p_v with the smoothed target q.
inline double cross_entropy_loss(const Matrix<double>& probs, std::span<const int> gold,
                                 std::span<const std::uint8_t> mask, double epsilon) {
    if (gold.size() != probs.rows() || mask.size() != probs.rows())
        throw std::invalid_argument("cross_entropy_loss: length mismatch");
    const std::size_t V = probs.cols();
    const double off = V > 1 ? epsilon / double(V - 1) : 0.0;
    double total = 0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        if (!mask[r]) continue;
        ++n;
        for (std::size_t c = 0; c < V; ++c) {
            const double q = c == static_cast<std::size_t>(gold[r]) ? 1.0 - epsilon : off;
            if (q > 0) total -= q * std::log(std::max(probs(r, c), 1e-300));
        }
    }
    if (n == 0) throw std::invalid_argument("cross_entropy_loss: no target tokens");
    return total / double(n);
}

/// Mean over unmasked rows of KL(p ‖ q); probabilities are floored at 1e-12 inside the logs.
inline double kl_consistency_loss(const Matrix<double>& p, const Matrix<double>& q, std::span<const std::uint8_t> mask) {
    if (!p.same_shape(q) || mask.size() != p.rows()) throw std::invalid_argument("kl_consistency_loss: length mismatch");
    double total = 0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        if (!mask[r]) continue;
        ++n;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double a = p(r, c);
            if (a <= 0) continue;
            total += a * (std::log(std::max(a, 1e-12)) - std::log(std::max(q(r, c), 1e-12)));
        }
    }
    if (n == 0) throw std::invalid_argument("kl_consistency_loss: no target tokens");
    return total / double(n);
}

/// The copied pair (y, y): the target sentence, tagged with the same target-language
/// tag, as its own source.
inline TaggedPair make_copied_pair(const TaggedPair& pair) {
    TaggedPair c;
    c.src_lang = pair.tgt_lang;
    c.tgt_lang = pair.tgt_lang;
    c.sentence_id = pair.sentence_id;
    c.src_tokens.push_back(pair.src_tokens.at(0));
    for (int t : pair.tgt_tokens)
        if (t != Vocab::eos) c.src_tokens.push_back(t);
    c.tgt_tokens = pair.tgt_tokens;
    return c;
}

// ---------------------------------------------------------------------------

/// Tape nodes of one objective evaluation.
struct ObjectiveVars {
    ad::Var ce, kl, total;
    ad::Var logp_xy, logp_yy;
};

/// Records ce (and, for finetune, KL and ce + α·KL) for a set of pairs.
/// `original` and `copied` may be different bindings of the same registry,
/// which lets tests isolate each branch's gradient contribution.
template <typename T, typename Rng>
ObjectiveVars record_objective(ad::Tape<T>& tape, const Transformer<T>& model, const BoundParams<T>& original,
                               const BoundParams<T>& copied, const std::vector<const TaggedPair*>& pairs,
                               const TrainConfig& cfg, Mode mode, Rng& rng) {
    const PaddedBatch b = collate(pairs);
    ObjectiveVars out;
    out.logp_xy = model.forward(tape, original, b, mode, rng);
    out.ce = ad::smoothed_nll(tape, out.logp_xy, std::span<const int>(b.tgt_out), std::span<const std::uint8_t>(b.tgt_mask),
                              cfg.label_smoothing);
    if (cfg.stage == Stage::Pretrain) {
        out.total = out.ce;
        return out;
    }
    std::vector<TaggedPair> copies;
    copies.reserve(pairs.size());
    for (const auto* p : pairs) copies.push_back(make_copied_pair(*p));
    std::vector<const TaggedPair*> cp;
    for (const auto& c : copies) cp.push_back(&c);
    const PaddedBatch cb = collate(cp);
    out.logp_yy = model.forward(tape, copied, cb, mode, rng);
    out.kl = ad::kl_rows(tape, out.logp_xy, out.logp_yy, std::span<const std::uint8_t>(b.tgt_mask));
    out.total = ad::weighted_sum(tape, out.ce, T(1), out.kl, static_cast<T>(cfg.alpha));
    return out;
}

template <typename T>
LossBreakdown breakdown_of(const ad::Tape<T>& tape, const ObjectiveVars& v, std::size_t tokens) {
    LossBreakdown lb;
    lb.ce = double(tape.value(v.ce)(0, 0));
    lb.kl = v.kl.valid() ? double(tape.value(v.kl)(0, 0)) : 0.0;
    lb.total = double(tape.value(v.total)(0, 0));
    lb.token_count = tokens;
    return lb;
}

template <typename T>
struct LossAndGrads {
    LossBreakdown loss;
    std::vector<Matrix<T>> grads;
};

/// Objective value and its gradient with respect to every parameter.
template <typename T, typename Rng>
LossAndGrads<T> loss_and_grads(const ModelParams<T>& params, const std::vector<const TaggedPair*>& pairs,
                               const TrainConfig& cfg, Mode mode, Rng& rng) {
    Transformer<T> model(params.config());
    ad::Tape<T> tape;
    auto bound = bind(tape, params, true);
    auto vars = record_objective(tape, model, bound, bound, pairs, cfg, mode, rng);
    tape.backward(vars.total);
    std::size_t tokens = 0;
    for (const auto* p : pairs) tokens += p->tgt_tokens.size();
    return {breakdown_of(tape, vars, tokens), collect_grads(tape, params, {&bound})};
}

/// Single-pair objective (ce + α·KL for finetune, ce for pretrain).
template <typename T, typename Rng>
LossBreakdown crossconst_loss(const TaggedPair& pair, const ModelParams<T>& params, const TrainConfig& cfg, Mode mode,
                              Rng& rng) {
    Transformer<T> model(params.config());
    ad::Tape<T> tape;
    auto bound = bind(tape, params, false);
    auto vars = record_objective(tape, model, bound, bound, {&pair}, cfg, mode, rng);
    return breakdown_of(tape, vars, pair.tgt_tokens.size());
}

// ---------------------------------------------------------------------------

/// lr_base · min(t / warmup, sqrt(warmup / t)).
inline double lr_schedule(long step, const TrainConfig& cfg) {
    if (step < 1) throw std::invalid_argument("lr_schedule: step must be >= 1");
    const double t = double(step), w = double(cfg.warmup_steps);
    return cfg.lr_base * std::min(t / w, std::sqrt(w / t));
}

template <typename T>
struct OptimizerState {
    std::vector<Matrix<T>> m, v;
    long step = 0;

    explicit OptimizerState(const ModelParams<T>& p) {
        for (const auto& t : p.tensors()) {
            m.emplace_back(t.rows(), t.cols());
            v.emplace_back(t.rows(), t.cols());
        }
    }
};

template <typename T>
double global_norm(const std::vector<Matrix<T>>& grads) {
    double s = 0;
    for (const auto& g : grads)
        for (T x : g.storage()) s += double(x) * double(x);
    return std::sqrt(s);
}

/// Scales `grads` in place so their global norm is at most `clip_norm`
/// (no-op when clip_norm <= 0). Returns the norm before clipping.
template <typename T>
double clip_by_global_norm(std::vector<Matrix<T>>& grads, double clip_norm) {
    const double norm = global_norm(grads);
    if (clip_norm > 0 && norm > clip_norm) {
        const T s = static_cast<T>(clip_norm / norm);
        for (auto& g : grads) as_eigen(g) *= s;
    }
    return norm;
}

/// Clip, then one bias-corrected Adam step. Non-finite gradients abort the step
/// before any state changes. Returns the pre-clip gradient norm.
template <typename T>
double adam_update(ModelParams<T>& params, std::vector<Matrix<T>> grads, OptimizerState<T>& state, double lr,
                   const TrainConfig& cfg) {
    if (grads.size() != params.size()) throw std::invalid_argument("adam_update: gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].same_shape(params.tensors()[i])) throw std::invalid_argument("adam_update: shape mismatch");
        for (T x : grads[i].storage())
            if (!std::isfinite(x))
                throw InvariantError("non-finite gradient for " + params.names()[i] + "; step aborted");
    }
    const double norm = clip_by_global_norm(grads, cfg.clip_norm);
    ++state.step;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, double(state.step));
    const double c2 = 1.0 - std::pow(b2, double(state.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        T* p = params.tensors()[i].data();
        T* m = state.m[i].data();
        T* v = state.v[i].data();
        const T* g = grads[i].data();
        for (std::size_t j = 0; j < grads[i].size(); ++j) {
            m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g[j]);
            v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * double(g[j]) * g[j]);
            const double mh = m[j] / c1, vh = v[j] / c2;
            p[j] = static_cast<T>(p[j] - lr * mh / (std::sqrt(vh) + cfg.adam_eps));
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------

/// Token-weighted mean label-smoothed ce over `pairs`, eval mode.
template <typename T>
double validation_ce(const ModelParams<T>& params, const std::vector<TaggedPair>& pairs, const TrainConfig& cfg) {
    if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
    Transformer<T> model(params.config());
    TrainConfig pre = cfg;
    pre.stage = Stage::Pretrain;
    std::mt19937_64 unused(0);
    double sum = 0;
    std::size_t tokens = 0;
    for (const auto& batch : make_batches(pairs, std::max(cfg.max_tokens, std::size_t{1}), 0)) {
        std::vector<const TaggedPair*> ms;
        std::size_t n = 0;
        for (auto i : batch.members) {
            ms.push_back(&pairs[i]);
            n += pairs[i].tgt_tokens.size();
        }
        ad::Tape<T> tape;
        auto bound = bind(tape, params, false);
        auto vars = record_objective(tape, model, bound, bound, ms, pre, Mode::Eval, unused);
        sum += double(tape.value(vars.ce)(0, 0)) * double(n);
        tokens += n;
    }
    return sum / double(tokens);
}

struct ValidationPoint {
    int step = 0;
    double lr = 0;
    double train_ce = 0;
    double train_kl = 0;
    double valid_ce = 0;
};

template <typename T>
struct StageResult {
    ModelParams<T> best;
    int best_step = 0;
    double best_valid_ce = std::numeric_limits<double>::infinity();
    int steps_run = 0;
    std::vector<ValidationPoint> history;
    std::vector<LossBreakdown> step_losses;
};

inline void write_log_row(std::ostream& os, const ValidationPoint& v) {
    os << v.step << '\t' << std::setprecision(6) << v.lr << '\t' << v.train_ce << '\t' << v.train_kl << '\t'
       << v.valid_ce << '\n';
    os.flush();
}

/// One training stage. Pretrain minimises ce from a fresh initialisation (or
/// `init` when given); finetune minimises ce + α·KL and requires `init`. The
/// returned registry is the state with the lowest validation ce.
template <typename T>
StageResult<T> run_stage(const std::vector<TaggedPair>& train, const std::vector<TaggedPair>& valid,
                         const ModelParams<T>* init, const ModelConfig& model_cfg, const TrainConfig& cfg,
                         std::ostream* log = nullptr, bool keep_step_losses = false) {
    cfg.validate();
    if (cfg.stage == Stage::Finetune && !init)
        throw UsageError("finetune requires an initial checkpoint: train a conventional model with pretrain first");
    if (train.empty()) throw DataError("no training pairs");
    ModelParams<T> params = init ? *init : init_params<T>(model_cfg, cfg.seed);
    Transformer<T> model(params.config());
    OptimizerState<T> opt(params);
    std::mt19937_64 dropout_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 17);

    StageResult<T> res;
    res.best = params;
    auto validate_now = [&](int step, double lr, double ce_acc, double kl_acc, int n) {
        ValidationPoint vp{step, lr, n ? ce_acc / n : 0.0, n ? kl_acc / n : 0.0, validation_ce(params, valid, cfg)};
        res.history.push_back(vp);
        if (log) write_log_row(*log, vp);
        if (vp.valid_ce < res.best_valid_ce || valid.empty()) {
            res.best_valid_ce = vp.valid_ce;
            res.best_step = step;
            res.best = params;
            return true;
        }
        return false;
    };

    // patience counts checks since valid ce last fell below anchor·(1 - min_improvement)
    int step = 0, stale = 0, since = 0;
    double anchor = std::numeric_limits<double>::infinity();
    double ce_acc = 0, kl_acc = 0, lr = 0;
    for (std::uint64_t epoch = 0; step < cfg.max_steps; ++epoch) {
        for (const auto& batch : make_batches(train, cfg.max_tokens, cfg.seed + epoch)) {
            if (step >= cfg.max_steps) break;
            std::vector<const TaggedPair*> ms;
            for (auto i : batch.members) ms.push_back(&train[i]);
            ad::Tape<T> tape;
            auto bound = bind(tape, params, true);
            auto vars = record_objective(tape, model, bound, bound, ms, cfg, Mode::Train, dropout_rng);
            const auto lb = breakdown_of(tape, vars, collate(ms).target_tokens());
            if (!std::isfinite(lb.total)) throw InvariantError("training diverged: loss is not finite at step " + std::to_string(step + 1));
            tape.backward(vars.total);
            ++step;
            lr = lr_schedule(step, cfg);
            adam_update(params, collect_grads(tape, params, {&bound}), opt, lr, cfg);
            if (keep_step_losses) res.step_losses.push_back(lb);
            ce_acc += lb.ce;
            kl_acc += lb.kl;
            ++since;
            if (step % cfg.valid_interval == 0) {
                validate_now(step, lr, ce_acc, kl_acc, since);
                const double v = res.history.back().valid_ce;
                if (v < anchor * (1.0 - cfg.min_improvement)) {
                    anchor = v;
                    stale = 0;
                } else {
                    ++stale;
                }
                ce_acc = kl_acc = 0;
                since = 0;
                if (cfg.patience > 0 && stale >= cfg.patience) break;
            }
        }
        if (cfg.patience > 0 && stale >= cfg.patience) break;
    }
    if (since > 0 || res.history.empty()) validate_now(step, lr, ce_acc, kl_acc, since);
    res.steps_run = step;
    return res;
}

}  // namespace crossconst
