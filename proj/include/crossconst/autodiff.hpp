#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Nodes are appended in evaluation order, so reverse creation order is a valid
// topological order for the backward sweep. Gradients are allocated lazily;
// a node that never receives a gradient is skipped.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "crossconst/tensor.hpp"

namespace crossconst::ad {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
public:
    struct Node {
        const Matrix<T>* external = nullptr;  // borrowed value, e.g. a model parameter
        Matrix<T> value;
        Matrix<T> grad;
        Matrix<T> aux;  // op-private saved state (softmax probs, masks, ...)
        bool requires_grad = false;
        std::function<void(Tape&, Node&)> backward;
    };

    Var leaf(Matrix<T> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }
    Var constant(Matrix<T> value) { return leaf(std::move(value), false); }

    /// Leaf that borrows `value`; it must outlive the tape's use of the node.
    Var borrow(const Matrix<T>& value, bool requires_grad) {
        Node n;
        n.external = &value;
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Matrix<T>& value(Var v) const {
        const Node& n = node(v);
        return n.external ? *n.external : n.value;
    }
    bool requires_grad(Var v) const { return node(v).requires_grad; }

    /// Gradient buffer for `v`, zero-initialised on first access.
    Matrix<T>& grad(Var v) {
        Node& n = node(v);
        const Matrix<T>& val = n.external ? *n.external : n.value;
        if (n.grad.empty() && !val.empty()) n.grad.resize(val.rows(), val.cols());
        return n.grad;
    }
    bool has_grad(Var v) const { return !node(v).grad.empty(); }

    Var record(Matrix<T> value, bool requires_grad, std::function<void(Tape&, Node&)> backward,
               Matrix<T> aux = {}) {
        Node n;
        n.value = std::move(value);
        n.aux = std::move(aux);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void backward(Var loss) {
        const Matrix<T>& lv = value(loss);
        if (lv.rows() != 1 || lv.cols() != 1) throw std::invalid_argument("backward: loss is not a scalar");
        if (!requires_grad(loss)) return;
        grad(loss)(0, 0) += T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.backward || n.grad.empty()) continue;
            n.backward(*this, n);
        }
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
bool any_grad(const Tape<T>& t, std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (v.valid() && t.requires_grad(v)) return true;
    return false;
}

}  // namespace detail

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    require_shape(av.same_shape(bv), "add");
    Matrix<T> out = av;
    as_eigen(out) += as_eigen(bv);
    return t.record(std::move(out), detail::any_grad(t, {a, b}), [a, b](Tape<T>& tp, auto& n) {
        if (tp.requires_grad(a)) as_eigen(tp.grad(a)) += as_eigen(n.grad);
        if (tp.requires_grad(b)) as_eigen(tp.grad(b)) += as_eigen(n.grad);
    });
}

/// a + c for a constant matrix c of the same shape.
template <typename T>
Var add_constant(Tape<T>& t, Var a, const Matrix<T>& c) {
    const auto& av = t.value(a);
    require_shape(av.same_shape(c), "add_constant");
    Matrix<T> out = av;
    as_eigen(out) += as_eigen(c);
    return t.record(std::move(out), t.requires_grad(a),
                    [a](Tape<T>& tp, auto& n) { as_eigen(tp.grad(a)) += as_eigen(n.grad); });
}

/// wa * a + wb * b
template <typename T>
Var weighted_sum(Tape<T>& t, Var a, T wa, Var b, T wb) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    require_shape(av.same_shape(bv), "weighted_sum");
    Matrix<T> out(av.rows(), av.cols());
    as_eigen(out) = wa * as_eigen(av) + wb * as_eigen(bv);
    return t.record(std::move(out), detail::any_grad(t, {a, b}), [a, b, wa, wb](Tape<T>& tp, auto& n) {
        if (tp.requires_grad(a)) as_eigen(tp.grad(a)) += wa * as_eigen(n.grad);
        if (tp.requires_grad(b)) as_eigen(tp.grad(b)) += wb * as_eigen(n.grad);
    });
}

template <typename T>
Var sum(Tape<T>& t, Var a) {
    Matrix<T> out(1, 1, as_eigen(t.value(a)).sum());
    return t.record(std::move(out), t.requires_grad(a),
                    [a](Tape<T>& tp, auto& n) { as_eigen(tp.grad(a)).array() += n.grad(0, 0); });
}

/// Rows of `table` selected by `indices`, multiplied by `scale`.
template <typename T>
Var gather_rows(Tape<T>& t, Var table, std::span<const int> indices, T scale) {
    const auto& tv = t.value(table);
    Matrix<T> out(indices.size(), tv.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto idx = static_cast<std::size_t>(indices[r]);
        if (idx >= tv.rows()) throw std::out_of_range("gather_rows: index out of range");
        const T* src = tv.row_ptr(idx);
        T* dst = out.row_ptr(r);
        for (std::size_t c = 0; c < tv.cols(); ++c) dst[c] = src[c] * scale;
    }
    std::vector<int> idx(indices.begin(), indices.end());
    return t.record(std::move(out), t.requires_grad(table),
                    [table, idx = std::move(idx), scale](Tape<T>& tp, auto& n) {
                        auto& g = tp.grad(table);
                        for (std::size_t r = 0; r < idx.size(); ++r) {
                            T* dst = g.row_ptr(static_cast<std::size_t>(idx[r]));
                            const T* src = n.grad.row_ptr(r);
                            for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += src[c] * scale;
                        }
                    });
}

/// x[n×k] · w[k×m] (+ bias[1×m] when given).
template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var bias = {}) {
    const auto& xv = t.value(x);
    const auto& wv = t.value(w);
    require_shape(xv.cols() == wv.rows(), "linear");
    Matrix<T> out(xv.rows(), wv.cols());
    as_eigen(out).noalias() = as_eigen(xv) * as_eigen(wv);
    if (bias.valid()) {
        const auto& bv = t.value(bias);
        require_shape(bv.rows() == 1 && bv.cols() == wv.cols(), "linear bias");
        as_eigen(out).rowwise() += as_eigen(bv).row(0);
    }
    return t.record(std::move(out), detail::any_grad(t, {x, w, bias}), [x, w, bias](Tape<T>& tp, auto& n) {
        const auto g = as_eigen(n.grad);
        if (tp.requires_grad(x)) as_eigen(tp.grad(x)).noalias() += g * as_eigen(tp.value(w)).transpose();
        if (tp.requires_grad(w)) as_eigen(tp.grad(w)).noalias() += as_eigen(tp.value(x)).transpose() * g;
        if (bias.valid() && tp.requires_grad(bias)) as_eigen(tp.grad(bias)).row(0) += g.colwise().sum();
    });
}

/// x[n×k] · e[m×k]ᵀ, used for the tied output projection.
template <typename T>
Var matmul_nt(Tape<T>& t, Var x, Var e) {
    const auto& xv = t.value(x);
    const auto& ev = t.value(e);
    require_shape(xv.cols() == ev.cols(), "matmul_nt");
    Matrix<T> out(xv.rows(), ev.rows());
    as_eigen(out).noalias() = as_eigen(xv) * as_eigen(ev).transpose();
    return t.record(std::move(out), detail::any_grad(t, {x, e}), [x, e](Tape<T>& tp, auto& n) {
        const auto g = as_eigen(n.grad);
        if (tp.requires_grad(x)) as_eigen(tp.grad(x)).noalias() += g * as_eigen(tp.value(e));
        if (tp.requires_grad(e)) as_eigen(tp.grad(e)).noalias() += g.transpose() * as_eigen(tp.value(x));
    });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
    Matrix<T> out = t.value(x);
    for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
    return t.record(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, auto& n) {
        auto& g = tp.grad(x);
        const auto& y = n.value;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (y.data()[i] > T(0)) g.data()[i] += n.grad.data()[i];
    });
}

/// Inverted dropout. Identity when rate is zero.
template <typename T, typename Rng>
Var dropout(Tape<T>& t, Var x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    const auto& xv = t.value(x);
    Matrix<T> mask(xv.rows(), xv.cols());
    std::bernoulli_distribution keep(1.0 - rate);
    const T s = T(1.0 / (1.0 - rate));
    Matrix<T> out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        mask.data()[i] = keep(rng) ? s : T(0);
        out.data()[i] = xv.data()[i] * mask.data()[i];
    }
    return t.record(
        std::move(out), t.requires_grad(x),
        [x](Tape<T>& tp, auto& n) {
            as_eigen(tp.grad(x)).array() += as_eigen(n.grad).array() * as_eigen(n.aux).array();
        },
        std::move(mask));
}

/// Row-wise layer normalisation with learned gain and bias (both 1×d).
template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias, T eps = T(1e-5)) {
    const auto& xv = t.value(x);
    const auto& gv = t.value(gain);
    const auto& bv = t.value(bias);
    const std::size_t d = xv.cols();
    require_shape(gv.cols() == d && bv.cols() == d, "layer_norm");
    Matrix<T> out(xv.rows(), d);
    // aux: normalised rows in columns [0,d), 1/sigma in column d
    Matrix<T> aux(xv.rows(), d + 1);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        const T* xr = xv.row_ptr(r);
        T mean = 0;
        for (std::size_t c = 0; c < d; ++c) mean += xr[c];
        mean /= T(d);
        T var = 0;
        for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= T(d);
        const T inv = T(1) / std::sqrt(var + eps);
        T* ar = aux.row_ptr(r);
        T* orow = out.row_ptr(r);
        for (std::size_t c = 0; c < d; ++c) {
            ar[c] = (xr[c] - mean) * inv;
            orow[c] = ar[c] * gv(0, c) + bv(0, c);
        }
        ar[d] = inv;
    }
    return t.record(
        std::move(out), detail::any_grad(t, {x, gain, bias}),
        [x, gain, bias, d](Tape<T>& tp, auto& n) {
            const auto& g = n.grad;
            const auto& aux = n.aux;
            const auto& gv = tp.value(gain);
            const bool gx = tp.requires_grad(x);
            const bool gg = tp.requires_grad(gain);
            const bool gb = tp.requires_grad(bias);
            Matrix<T>* dx = gx ? &tp.grad(x) : nullptr;
            Matrix<T>* dg = gg ? &tp.grad(gain) : nullptr;
            Matrix<T>* db = gb ? &tp.grad(bias) : nullptr;
            std::vector<T> dxhat(d);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                const T* gr = g.row_ptr(r);
                const T* xh = aux.row_ptr(r);
                const T inv = xh[d];
                T mean_dxh = 0;
                T mean_dxh_xh = 0;
                for (std::size_t c = 0; c < d; ++c) {
                    if (dg) (*dg)(0, c) += gr[c] * xh[c];
                    if (db) (*db)(0, c) += gr[c];
                    dxhat[c] = gr[c] * gv(0, c);
                    mean_dxh += dxhat[c];
                    mean_dxh_xh += dxhat[c] * xh[c];
                }
                if (!dx) continue;
                mean_dxh /= T(d);
                mean_dxh_xh /= T(d);
                T* dr = dx->row_ptr(r);
                for (std::size_t c = 0; c < d; ++c) dr[c] += inv * (dxhat[c] - mean_dxh - xh[c] * mean_dxh_xh);
            }
        },
        std::move(aux));
}

/// Shape and masking of a batched multi-head attention call.
/// Queries are `batch × query_len` rows, keys/values `batch × key_len` rows.
struct AttentionLayout {
    std::size_t batch = 1;
    std::size_t query_len = 1;
    std::size_t key_len = 1;
    std::size_t heads = 1;
    const std::vector<std::uint8_t>* key_pad = nullptr;  // batch × key_len, 1 = padding
    bool causal = false;
};

/// softmax(q kᵀ / sqrt(d_head)) v per sequence and head; masked keys get zero weight.
template <typename T>
Var attention(Tape<T>& t, Var q, Var k, Var v, const AttentionLayout& L) {
    const auto& qv = t.value(q);
    const auto& kv = t.value(k);
    const auto& vv = t.value(v);
    const std::size_t d = qv.cols();
    require_shape(kv.cols() == d && vv.cols() == d && d % L.heads == 0, "attention width");
    require_shape(qv.rows() == L.batch * L.query_len && kv.rows() == L.batch * L.key_len &&
                      vv.rows() == kv.rows(),
                  "attention rows");
    if (L.key_pad) require_shape(L.key_pad->size() == L.batch * L.key_len, "attention key mask");
    const std::size_t dh = d / L.heads;
    const T scale = T(1) / std::sqrt(T(dh));
    const std::size_t tq = L.query_len, tk = L.key_len;

    Matrix<T> probs(L.batch * L.heads * tq, tk);
    Matrix<T> out(qv.rows(), d);
    std::vector<T> scores(tk);
    for (std::size_t b = 0; b < L.batch; ++b) {
        for (std::size_t h = 0; h < L.heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < tq; ++i) {
                const T* qi = qv.row_ptr(b * tq + i) + off;
                T* pr = probs.row_ptr((b * L.heads + h) * tq + i);
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < tk; ++j) {
                    const bool masked = (L.causal && j > i) || (L.key_pad && (*L.key_pad)[b * tk + j]);
                    if (masked) {
                        scores[j] = -std::numeric_limits<T>::infinity();
                        continue;
                    }
                    const T* kj = kv.row_ptr(b * tk + j) + off;
                    T s = 0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    scores[j] = s * scale;
                    mx = std::max(mx, scores[j]);
                }
                if (mx == -std::numeric_limits<T>::infinity()) continue;  // fully masked row
                T z = 0;
                for (std::size_t j = 0; j < tk; ++j) {
                    pr[j] = scores[j] == -std::numeric_limits<T>::infinity() ? T(0) : std::exp(scores[j] - mx);
                    z += pr[j];
                }
                T* oi = out.row_ptr(b * tq + i) + off;
                for (std::size_t j = 0; j < tk; ++j) {
                    pr[j] /= z;
                    if (pr[j] == T(0)) continue;
                    const T* vj = vv.row_ptr(b * tk + j) + off;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += pr[j] * vj[c];
                }
            }
        }
    }
    const AttentionLayout lay{L.batch, L.query_len, L.key_len, L.heads, nullptr, L.causal};
    return t.record(
        std::move(out), detail::any_grad(t, {q, k, v}),
        [q, k, v, lay, dh, scale](Tape<T>& tp, auto& n) {
            const auto& qv = tp.value(q);
            const auto& kv = tp.value(k);
            const auto& vv = tp.value(v);
            const auto& probs = n.aux;
            const bool gq = tp.requires_grad(q), gk = tp.requires_grad(k), gv = tp.requires_grad(v);
            Matrix<T>* dq = gq ? &tp.grad(q) : nullptr;
            Matrix<T>* dk = gk ? &tp.grad(k) : nullptr;
            Matrix<T>* dv = gv ? &tp.grad(v) : nullptr;
            const std::size_t tq = lay.query_len, tk = lay.key_len;
            std::vector<T> dp(tk);
            for (std::size_t b = 0; b < lay.batch; ++b) {
                for (std::size_t h = 0; h < lay.heads; ++h) {
                    const std::size_t off = h * dh;
                    for (std::size_t i = 0; i < tq; ++i) {
                        const T* pr = probs.row_ptr((b * lay.heads + h) * tq + i);
                        const T* go = n.grad.row_ptr(b * tq + i) + off;
                        T dot = 0;
                        for (std::size_t j = 0; j < tk; ++j) {
                            if (pr[j] == T(0)) {
                                dp[j] = 0;
                                continue;
                            }
                            const T* vj = vv.row_ptr(b * tk + j) + off;
                            T s = 0;
                            for (std::size_t c = 0; c < dh; ++c) s += go[c] * vj[c];
                            dp[j] = s;
                            dot += pr[j] * s;
                            if (dv) {
                                T* dvj = dv->row_ptr(b * tk + j) + off;
                                for (std::size_t c = 0; c < dh; ++c) dvj[c] += pr[j] * go[c];
                            }
                        }
                        const T* qi = qv.row_ptr(b * tq + i) + off;
                        T* dqi = dq ? dq->row_ptr(b * tq + i) + off : nullptr;
                        for (std::size_t j = 0; j < tk; ++j) {
                            if (pr[j] == T(0)) continue;
                            const T ds = pr[j] * (dp[j] - dot) * scale;
                            if (dqi) {
                                const T* kj = kv.row_ptr(b * tk + j) + off;
                                for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                            }
                            if (dk) {
                                T* dkj = dk->row_ptr(b * tk + j) + off;
                                for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                            }
                        }
                    }
                }
            }
        },
        std::move(probs));
}

/// Row-wise log-softmax.
template <typename T>
Var log_softmax(Tape<T>& t, Var x) {
    const auto& xv = t.value(x);
    Matrix<T> out(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        const T* xr = xv.row_ptr(r);
        T mx = xr[0];
        for (std::size_t c = 1; c < xv.cols(); ++c) mx = std::max(mx, xr[c]);
        T z = 0;
        for (std::size_t c = 0; c < xv.cols(); ++c) z += std::exp(xr[c] - mx);
        const T lz = mx + std::log(z);
        T* orow = out.row_ptr(r);
        for (std::size_t c = 0; c < xv.cols(); ++c) orow[c] = xr[c] - lz;
    }
    return t.record(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, auto& n) {
        auto& dx = tp.grad(x);
        for (std::size_t r = 0; r < n.value.rows(); ++r) {
            const T* lp = n.value.row_ptr(r);
            const T* g = n.grad.row_ptr(r);
            T gs = 0;
            for (std::size_t c = 0; c < n.value.cols(); ++c) gs += g[c];
            T* d = dx.row_ptr(r);
            for (std::size_t c = 0; c < n.value.cols(); ++c) d[c] += g[c] - std::exp(lp[c]) * gs;
        }
    });
}

/// Mean over unmasked rows of the label-smoothed negative log-likelihood
/// -Σ_v q_v log p_v, with q = (1-ε) on the gold index and ε/(V-1) elsewhere.
/// `weights[r]` is 1 for real target tokens and 0 for padding.
template <typename T>
Var smoothed_nll(Tape<T>& t, Var logprobs, std::span<const int> targets, std::span<const std::uint8_t> weights,
                 double epsilon) {
    const auto& lp = t.value(logprobs);
    require_shape(targets.size() == lp.rows() && weights.size() == lp.rows(), "smoothed_nll");
    const std::size_t V = lp.cols();
    const T on = T(1.0 - epsilon);
    const T off = V > 1 ? T(epsilon / double(V - 1)) : T(0);
    std::size_t count = 0;
    T total = 0;
    for (std::size_t r = 0; r < lp.rows(); ++r) {
        if (!weights[r]) continue;
        ++count;
        const T* row = lp.row_ptr(r);
        T rs = 0;
        for (std::size_t c = 0; c < V; ++c) rs += row[c];
        const T gold = row[static_cast<std::size_t>(targets[r])];
        total -= on * gold + off * (rs - gold);
    }
    if (count == 0) throw std::invalid_argument("smoothed_nll: no target tokens");
    Matrix<T> out(1, 1, total / T(count));
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> w(weights.begin(), weights.end());
    return t.record(std::move(out), t.requires_grad(logprobs),
                    [logprobs, tg = std::move(tg), w = std::move(w), on, off, count](Tape<T>& tp, auto& n) {
                        auto& d = tp.grad(logprobs);
                        const T g = n.grad(0, 0) / T(count);
                        for (std::size_t r = 0; r < d.rows(); ++r) {
                            if (!w[r]) continue;
                            T* dr = d.row_ptr(r);
                            for (std::size_t c = 0; c < d.cols(); ++c) dr[c] -= g * off;
                            dr[static_cast<std::size_t>(tg[r])] -= g * (on - off);
                        }
                    });
}

/// Mean over unmasked rows of KL(p ‖ q) = Σ_v p_v (log p_v - log q_v), from log-probabilities.
/// Gradients flow into both arguments.
template <typename T>
Var kl_rows(Tape<T>& t, Var logp, Var logq, std::span<const std::uint8_t> weights) {
    const auto& a = t.value(logp);
    const auto& b = t.value(logq);
    require_shape(a.same_shape(b) && weights.size() == a.rows(), "kl_rows");
    std::size_t count = 0;
    T total = 0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        if (!weights[r]) continue;
        ++count;
        const T* ar = a.row_ptr(r);
        const T* br = b.row_ptr(r);
        for (std::size_t c = 0; c < a.cols(); ++c) total += std::exp(ar[c]) * (ar[c] - br[c]);
    }
    if (count == 0) throw std::invalid_argument("kl_rows: no target tokens");
    Matrix<T> out(1, 1, total / T(count));
    std::vector<std::uint8_t> w(weights.begin(), weights.end());
    return t.record(std::move(out), detail::any_grad(t, {logp, logq}),
                    [logp, logq, w = std::move(w), count](Tape<T>& tp, auto& n) {
                        const T g = n.grad(0, 0) / T(count);
                        const auto& a = tp.value(logp);
                        const auto& b = tp.value(logq);
                        Matrix<T>* da = tp.requires_grad(logp) ? &tp.grad(logp) : nullptr;
                        Matrix<T>* db = tp.requires_grad(logq) ? &tp.grad(logq) : nullptr;
                        for (std::size_t r = 0; r < a.rows(); ++r) {
                            if (!w[r]) continue;
                            const T* ar = a.row_ptr(r);
                            const T* br = b.row_ptr(r);
                            for (std::size_t c = 0; c < a.cols(); ++c) {
                                const T p = std::exp(ar[c]);
                                if (da) (*da)(r, c) += g * p * (ar[c] - br[c] + T(1));
                                if (db) (*db)(r, c) -= g * p;
                            }
                        }
                    });
}

}  // namespace crossconst::ad
