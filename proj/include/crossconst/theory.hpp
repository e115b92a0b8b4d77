#pragma once

// Finite-alphabet check of the autoencoding lower bound on zero-shot
// log-likelihood and of its gap identity.
//
// For pairs (x, y) bridged by a pivot variable z and an autoencoder
// distribution Q(z) = P(z|z'):
//   L     = Σ w log Σ_z P(y|x,z) P(z|x)
//   L_bar = Σ w [ E_Q log P(y|z) - KL(Q ‖ P(z|x)) ]
//   gap   = L - L_bar,   kl_sum = Σ w KL(Q ‖ P(z|y)).
// When P(y|x,z) = P(y|z), gap = Σ w KL(Q ‖ P(z|x,y)) exactly; it equals kl_sum
// when in addition P(z|x,y) = P(z|y).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "crossconst/errors.hpp"
#include "crossconst/tensor.hpp"

namespace crossconst::theory {

using Table = Matrix<double>;

struct WorldPair {
    int x = 0;
    int y = 0;
    int anchor = 0;  // z' whose autoencoder row P(·|z') plays Q for this pair
    double weight = 1.0;
};

struct DiscreteWorld {
    std::size_t nx = 0, ny = 0, nz = 0;
    Table z_given_x;                 // nx × nz
    Table z_given_y;                 // ny × nz
    Table z_given_z;                 // nz × nz, row z' is the autoencoder distribution
    Table y_given_z;                 // nz × ny
    std::vector<Table> y_given_xz;   // [x]: nz × ny
    std::vector<Table> z_given_xy;   // [x]: ny × nz
    std::vector<WorldPair> pairs;

    std::span<const double> q(const WorldPair& p) const { return z_given_z.row(static_cast<std::size_t>(p.anchor)); }

    void validate() const {
        auto check = [](const Table& t, std::size_t r, std::size_t c, const char* name) {
            if (t.rows() != r || t.cols() != c) throw DataError(std::string("world table ") + name + " has the wrong shape");
            for (std::size_t i = 0; i < r; ++i) {
                double s = 0;
                for (double v : t.row(i)) {
                    if (!(v >= 0.0) || !std::isfinite(v)) throw DataError(std::string("world table ") + name + " has a negative entry");
                    s += v;
                }
                if (std::abs(s - 1.0) > 1e-12) throw DataError(std::string("world table ") + name + " row does not sum to 1");
            }
        };
        if (nx == 0 || ny == 0 || nz == 0) throw DataError("world alphabets must be nonempty");
        check(z_given_x, nx, nz, "P(z|x)");
        check(z_given_y, ny, nz, "P(z|y)");
        check(z_given_z, nz, nz, "P(z|z)");
        check(y_given_z, nz, ny, "P(y|z)");
        if (y_given_xz.size() != nx || z_given_xy.size() != nx) throw DataError("world: per-x tables missing");
        for (std::size_t x = 0; x < nx; ++x) {
            check(y_given_xz[x], nz, ny, "P(y|x,z)");
            check(z_given_xy[x], ny, nz, "P(z|x,y)");
        }
        if (pairs.empty()) throw DataError("world pair set is empty");
        for (const auto& p : pairs) {
            if (p.x < 0 || std::size_t(p.x) >= nx || p.y < 0 || std::size_t(p.y) >= ny || p.anchor < 0 ||
                std::size_t(p.anchor) >= nz)
                throw DataError("world pair index out of range");
            if (!(p.weight > 0.0)) throw DataError("world pair weight must be positive");
        }
    }
};

struct BoundReport {
    double L = 0;
    double L_bar = 0;
    double gap = 0;
    double kl_sum = 0;    // Σ w KL(Q ‖ P(z|y))
    double kl_prior = 0;  // Σ w KL(Q ‖ P(z|x)), the KL term inside L_bar
    double residual = 0;  // |gap - kl_sum|
    std::string diagnostic;  // non-empty when a support violation produced an infinity
};

/// KL(q ‖ p); +inf if q puts mass where p has none.
inline double kl_divergence(std::span<const double> q, std::span<const double> p) {
    double s = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] <= 0) continue;
        if (p[i] <= 0) return std::numeric_limits<double>::infinity();
        s += q[i] * (std::log(q[i]) - std::log(p[i]));
    }
    return s;
}

/// Σ w log P(y|x) by enumeration over z; -inf when some pair has probability zero.
inline double log_likelihood(const DiscreteWorld& w, std::string* diagnostic = nullptr) {
    double L = 0;
    for (std::size_t k = 0; k < w.pairs.size(); ++k) {
        const auto& p = w.pairs[k];
        double py = 0;
        for (std::size_t z = 0; z < w.nz; ++z)
            py += w.y_given_xz[std::size_t(p.x)](z, std::size_t(p.y)) * w.z_given_x(std::size_t(p.x), z);
        if (py <= 0) {
            if (diagnostic && diagnostic->empty()) *diagnostic = "pair " + std::to_string(k) + " has P(y|x) = 0";
            return -std::numeric_limits<double>::infinity();
        }
        L += p.weight * std::log(py);
    }
    return L;
}

/// Σ w [E_Q log P(y|z) - KL(Q ‖ P(z|x))]; -inf on a support violation.
inline double lower_bound(const DiscreteWorld& w, std::string* diagnostic = nullptr) {
    double Lb = 0;
    for (std::size_t k = 0; k < w.pairs.size(); ++k) {
        const auto& p = w.pairs[k];
        const auto q = w.q(p);
        double e = 0;
        for (std::size_t z = 0; z < w.nz; ++z) {
            if (q[z] <= 0) continue;
            const double pyz = w.y_given_z(z, std::size_t(p.y));
            const double pzx = w.z_given_x(std::size_t(p.x), z);
            if (pyz <= 0 || pzx <= 0) {
                if (diagnostic && diagnostic->empty())
                    *diagnostic = "pair " + std::to_string(k) + ": Q puts mass on z=" + std::to_string(z) +
                                  " where P(y|z)·P(z|x) = 0";
                return -std::numeric_limits<double>::infinity();
            }
            e += q[z] * std::log(pyz);
        }
        Lb += p.weight * (e - kl_divergence(q, w.z_given_x.row(std::size_t(p.x))));
    }
    return Lb;
}

inline BoundReport gap_identity(const DiscreteWorld& w) {
    BoundReport r;
    r.L = log_likelihood(w, &r.diagnostic);
    r.L_bar = lower_bound(w, &r.diagnostic);
    for (const auto& p : w.pairs) {
        r.kl_sum += p.weight * kl_divergence(w.q(p), w.z_given_y.row(std::size_t(p.y)));
        r.kl_prior += p.weight * kl_divergence(w.q(p), w.z_given_x.row(std::size_t(p.x)));
    }
    r.gap = r.L - r.L_bar;
    r.residual = std::abs(r.gap - r.kl_sum);
    if (!std::isfinite(r.kl_sum) && r.diagnostic.empty()) r.diagnostic = "Q puts mass where P(z|y) = 0";
    return r;
}

/// Moves every P(z|x) and P(z|y) row used by a pair toward the pair's Q by
/// linear interpolation with weight λ. A row shared by several pairs moves
/// toward their weighted mean Q.
inline DiscreteWorld interpolate_toward_q(const DiscreteWorld& w, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("probe weight must lie in [0, 1]");
    DiscreteWorld out = w;
    auto move = [&](Table& t, std::size_t n, auto row_of) {
        Table target(n, w.nz);
        std::vector<double> mass(n, 0.0);
        for (const auto& p : w.pairs) {
            const auto r = static_cast<std::size_t>(row_of(p));
            const auto q = w.q(p);
            for (std::size_t z = 0; z < w.nz; ++z) target(r, z) += p.weight * q[z];
            mass[r] += p.weight;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (mass[r] == 0) continue;
            for (std::size_t z = 0; z < w.nz; ++z) t(r, z) = (1 - lambda) * t(r, z) + lambda * target(r, z) / mass[r];
        }
    };
    move(out.z_given_x, w.nx, [](const WorldPair& p) { return p.x; });
    move(out.z_given_y, w.ny, [](const WorldPair& p) { return p.y; });
    return out;
}

struct ProbeReport {
    BoundReport before;
    BoundReport after;
};

inline ProbeReport crossconst_effect_probe(const DiscreteWorld& w, double lambda) {
    return {gap_identity(w), gap_identity(interpolate_toward_q(w, lambda))};
}

// ---------------------------------------------------------------------------
// World generators.

namespace world_detail {

inline void positive_row(std::mt19937_64& rng, std::span<double> row, const std::vector<std::size_t>& support) {
    std::gamma_distribution<double> g(1.0, 1.0);
    std::fill(row.begin(), row.end(), 0.0);
    double s = 0;
    for (auto i : support) {
        row[i] = g(rng) + 1e-3;
        s += row[i];
    }
    for (auto i : support) row[i] /= s;
}

inline std::vector<std::size_t> all_of(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

inline void normalize(std::span<double> row) {
    double s = 0;
    for (double v : row) s += v;
    if (s <= 0) {
        std::fill(row.begin(), row.end(), 1.0 / double(row.size()));
        return;
    }
    for (double& v : row) v /= s;
}

/// Fills P(z|y) and P(z|x,y) from the joint P(x)·P(z|x)·P(y|x,z).
inline void derive_posteriors(DiscreteWorld& w, const std::vector<double>& px) {
    w.z_given_y = Table(w.ny, w.nz);
    w.z_given_xy.assign(w.nx, Table(w.ny, w.nz));
    for (std::size_t x = 0; x < w.nx; ++x)
        for (std::size_t y = 0; y < w.ny; ++y)
            for (std::size_t z = 0; z < w.nz; ++z) {
                const double j = px[x] * w.z_given_x(x, z) * w.y_given_xz[x](z, y);
                w.z_given_y(y, z) += j;
                w.z_given_xy[x](y, z) = j;
            }
    for (std::size_t y = 0; y < w.ny; ++y) normalize(w.z_given_y.row(y));
    for (auto& t : w.z_given_xy)
        for (std::size_t y = 0; y < w.ny; ++y) normalize(t.row(y));
}

/// P(y|z) marginalised from the joint.
inline void derive_y_given_z(DiscreteWorld& w, const std::vector<double>& px) {
    w.y_given_z = Table(w.nz, w.ny);
    for (std::size_t x = 0; x < w.nx; ++x)
        for (std::size_t z = 0; z < w.nz; ++z)
            for (std::size_t y = 0; y < w.ny; ++y) w.y_given_z(z, y) += px[x] * w.z_given_x(x, z) * w.y_given_xz[x](z, y);
    for (std::size_t z = 0; z < w.nz; ++z) normalize(w.y_given_z.row(z));
}

}  // namespace world_detail

enum class QFamily {
    Independent,  // autoencoder rows drawn independently (nonzero gap)
    Posterior,    // Q set to the true posterior P(z|x,y) of each pair (Jensen tight)
};

struct WorldSpec {
    std::size_t nx = 5, ny = 5, nz = 5;
    std::size_t clusters = 2;
    QFamily q_family = QFamily::Independent;
};

/// A world in which both approximations hold exactly. Z and Y are split into
/// `clusters` blocks; P(z|x) = P(c|x)·P(z|c) and P(y|z) is supported on z's
/// block, so y is independent of x given z and z is independent of x given y.
/// All conditionals are derived from the joint P(x)·P(z|x)·P(y|z).
/// Pairs use distinct x and distinct y; each anchor lies in its y's block.
inline DiscreteWorld make_factorized_world(std::uint64_t seed, const WorldSpec& spec = {}) {
    using namespace world_detail;
    const std::size_t C = spec.clusters;
    if (C < 1 || C > spec.nz || C > spec.ny || spec.nx == 0)
        throw ConfigError("factorized world needs 1 <= clusters <= min(|Y|, |Z|) and |X| >= 1");
    std::mt19937_64 rng(seed);
    DiscreteWorld w;
    w.nx = spec.nx;
    w.ny = spec.ny;
    w.nz = spec.nz;
    auto block_z = [&](std::size_t c) {
        std::vector<std::size_t> v;
        for (std::size_t z = c; z < w.nz; z += C) v.push_back(z);
        return v;
    };
    auto block_y = [&](std::size_t c) {
        std::vector<std::size_t> v;
        for (std::size_t y = c; y < w.ny; y += C) v.push_back(y);
        return v;
    };

    std::vector<double> px(w.nx);
    positive_row(rng, px, all_of(w.nx));
    Table pc_x(w.nx, C), pz_c(C, w.nz);
    for (std::size_t x = 0; x < w.nx; ++x) positive_row(rng, pc_x.row(x), all_of(C));
    for (std::size_t c = 0; c < C; ++c) positive_row(rng, pz_c.row(c), block_z(c));
    w.z_given_x = Table(w.nx, w.nz);
    for (std::size_t x = 0; x < w.nx; ++x)
        for (std::size_t z = 0; z < w.nz; ++z) w.z_given_x(x, z) = pc_x(x, z % C) * pz_c(z % C, z);
    w.y_given_z = Table(w.nz, w.ny);
    for (std::size_t z = 0; z < w.nz; ++z) positive_row(rng, w.y_given_z.row(z), block_y(z % C));
    w.y_given_xz.assign(w.nx, w.y_given_z);
    derive_posteriors(w, px);

    std::vector<std::size_t> xs = all_of(w.nx);
    std::shuffle(xs.begin(), xs.end(), rng);
    const std::size_t n_pairs = std::min(w.nx, w.ny);
    w.z_given_z = Table(w.nz, w.nz);
    for (std::size_t z = 0; z < w.nz; ++z) positive_row(rng, w.z_given_z.row(z), block_z(z % C));
    std::vector<bool> used(w.nz, false);
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const std::size_t y = k;
        const auto cands = block_z(y % C);
        int anchor = static_cast<int>(cands[std::uniform_int_distribution<std::size_t>(0, cands.size() - 1)(rng)]);
        if (spec.q_family == QFamily::Posterior) {
            // one autoencoder row per pair: pick any unused z
            anchor = -1;
            for (std::size_t z = 0; z < w.nz && anchor < 0; ++z)
                if (!used[z]) anchor = static_cast<int>(z);
            if (anchor < 0) break;
            used[std::size_t(anchor)] = true;
            const auto post = w.z_given_xy[xs[k]].row(y);
            std::copy(post.begin(), post.end(), w.z_given_z.row_ptr(std::size_t(anchor)));
        }
        w.pairs.push_back({static_cast<int>(xs[k]), static_cast<int>(y), anchor, 1.0});
    }
    w.validate();
    return w;
}

/// Generic factorized joint P(x)·P(z|x)·P(y|z) with full supports. Only the
/// first approximation is exact, so the residual measures the second one.
inline DiscreteWorld make_joint_world(std::uint64_t seed, std::size_t nx = 5, std::size_t ny = 5, std::size_t nz = 5) {
    using namespace world_detail;
    std::mt19937_64 rng(seed);
    DiscreteWorld w;
    w.nx = nx;
    w.ny = ny;
    w.nz = nz;
    std::vector<double> px(nx);
    positive_row(rng, px, all_of(nx));
    w.z_given_x = Table(nx, nz);
    for (std::size_t x = 0; x < nx; ++x) positive_row(rng, w.z_given_x.row(x), all_of(nz));
    w.y_given_z = Table(nz, ny);
    for (std::size_t z = 0; z < nz; ++z) positive_row(rng, w.y_given_z.row(z), all_of(ny));
    w.y_given_xz.assign(nx, w.y_given_z);
    derive_posteriors(w, px);
    w.z_given_z = Table(nz, nz);
    for (std::size_t z = 0; z < nz; ++z) positive_row(rng, w.z_given_z.row(z), all_of(nz));
    std::vector<std::size_t> xs = all_of(nx);
    std::shuffle(xs.begin(), xs.end(), rng);
    for (std::size_t k = 0; k < std::min(nx, ny); ++k)
        w.pairs.push_back({static_cast<int>(xs[k]), static_cast<int>(k),
                           static_cast<int>(std::uniform_int_distribution<std::size_t>(0, nz - 1)(rng)), 1.0});
    w.validate();
    return w;
}

/// The factorized world of `seed` with P(y|x,z) = (1-δ)·P(y|z) + δ·R(y|x,z)
/// for a random full-support R; P(y|z), P(z|y) and P(z|x,y) are re-derived
/// from the mixed joint. δ = 0 reproduces make_factorized_world(seed).
inline DiscreteWorld make_mixed_world(std::uint64_t seed, double delta, const WorldSpec& spec = {}) {
    using namespace world_detail;
    if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("mixing weight must lie in [0, 1]");
    DiscreteWorld w = make_factorized_world(seed, spec);
    // Recover P(x): the generator draws it first from the same stream.
    std::mt19937_64 rng(seed);
    std::vector<double> px(w.nx);
    positive_row(rng, px, all_of(w.nx));
    std::mt19937_64 mix(seed ^ 0xD1B54A32D192ED03ULL);
    for (std::size_t x = 0; x < w.nx; ++x)
        for (std::size_t z = 0; z < w.nz; ++z) {
            std::vector<double> r(w.ny);
            positive_row(mix, r, all_of(w.ny));
            for (std::size_t y = 0; y < w.ny; ++y)
                w.y_given_xz[x](z, y) = (1 - delta) * w.y_given_xz[x](z, y) + delta * r[y];
        }
    derive_y_given_z(w, px);
    derive_posteriors(w, px);
    for (std::size_t z = 0; z < w.nz; ++z) normalize(w.y_given_z.row(z));
    w.validate();
    return w;
}

/// Point-mass world: x -> z = f(x), z -> y = g(z) for random permutations f, g,
/// with Q the point mass on z. L = L_bar = 0 and kl_sum = 0.
inline DiscreteWorld make_deterministic_world(std::uint64_t seed, std::size_t n = 5) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> f = world_detail::all_of(n), g = world_detail::all_of(n);
    std::shuffle(f.begin(), f.end(), rng);
    std::shuffle(g.begin(), g.end(), rng);
    DiscreteWorld w;
    w.nx = w.ny = w.nz = n;
    w.z_given_x = Table(n, n);
    w.z_given_y = Table(n, n);
    w.z_given_z = Table(n, n);
    w.y_given_z = Table(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        w.z_given_x(i, f[i]) = 1;
        w.y_given_z(i, g[i]) = 1;
        w.z_given_y(g[i], i) = 1;
        w.z_given_z(i, i) = 1;
    }
    w.y_given_xz.assign(n, w.y_given_z);
    w.z_given_xy.assign(n, Table(n, n));
    for (std::size_t x = 0; x < n; ++x)
        for (std::size_t y = 0; y < n; ++y) {
            // P(z|x,y) is the point f(x) when consistent, else undefined: use P(z|y).
            const std::size_t z = g[f[x]] == y ? f[x] : 0;
            if (g[f[x]] == y) w.z_given_xy[x](y, z) = 1;
            else
                for (std::size_t zz = 0; zz < n; ++zz) w.z_given_xy[x](y, zz) = w.z_given_y(y, zz);
        }
    for (std::size_t x = 0; x < n; ++x) w.pairs.push_back({int(x), int(g[f[x]]), int(f[x]), 1.0});
    w.validate();
    return w;
}

// ---------------------------------------------------------------------------

struct TheoryCheck {
    std::uint64_t seed = 0;
    std::size_t nx = 0, ny = 0, nz = 0;
    BoundReport report;
    bool jensen_ok = false;
    bool identity_ok = false;
    bool probe_ok = false;
    bool ok() const { return jensen_ok && identity_ok && probe_ok; }
};

/// Jensen, gap identity and probe monotonicity (strict decrease of kl_sum over
/// the λ grid) on one factorized world.
inline TheoryCheck check_world(std::uint64_t seed, const WorldSpec& spec = {},
                               const std::vector<double>& lambdas = {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto w = make_factorized_world(seed, spec);
    TheoryCheck c{seed, w.nx, w.ny, w.nz, gap_identity(w), false, false, true};
    c.jensen_ok = c.report.L_bar <= c.report.L + 1e-12;
    c.identity_ok = c.report.residual <= 1e-9;
    double prev = std::numeric_limits<double>::infinity();
    for (double lam : lambdas) {
        const double k = gap_identity(interpolate_toward_q(w, lam)).kl_sum;
        if (!(k < prev)) c.probe_ok = false;
        prev = k;
    }
    return c;
}

inline void write_theory_header(std::ostream& os) {
    os << "seed\tX\tY\tZ\tL\tL_bar\tgap\tkl_sum\tresidual\n";
}

inline void write_theory_row(std::ostream& os, const TheoryCheck& c) {
    const auto prec = os.precision(17);
    const auto& r = c.report;
    os << c.seed << '\t' << c.nx << '\t' << c.ny << '\t' << c.nz << '\t' << r.L << '\t' << r.L_bar << '\t' << r.gap
       << '\t' << r.kl_sum << '\t' << r.residual << '\n';
    os.precision(prec);
}

}  // namespace crossconst::theory
