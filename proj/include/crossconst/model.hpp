#pragma once

// Pre-layer-norm encoder-decoder transformer on the reverse-mode tape.
//
// Parameters live in a flat registry keyed by dotted names. Every name starts
// with "enc.", "dec." or "embed." so the registry partitions into encoder,
// decoder and shared-embedding groups.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "crossconst/autodiff.hpp"
#include "crossconst/batching.hpp"
#include "crossconst/errors.hpp"
#include "crossconst/tensor.hpp"

namespace crossconst {

struct ModelConfig {
    int num_layers = 2;
    int num_heads = 4;
    int d_model = 64;
    int d_ff = 128;
    int vocab_size = 0;
    double dropout_rate = 0.1;
    int max_positions = 64;
    bool tie_embeddings = true;

    void validate() const {
        if (num_layers < 1 || num_heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1 || max_positions < 1)
            throw ConfigError("model dimensions must all be >= 1");
        if (d_model % num_heads != 0) throw ConfigError("d_model must be divisible by num_heads");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Mode { Train, Eval };

enum class ParamGroup { Encoder, Decoder, SharedEmbedding };

inline ParamGroup param_group(const std::string& name) {
    if (name.rfind("enc.", 0) == 0) return ParamGroup::Encoder;
    if (name.rfind("dec.", 0) == 0) return ParamGroup::Decoder;
    if (name.rfind("embed.", 0) == 0) return ParamGroup::SharedEmbedding;
    throw InvariantError("parameter '" + name + "' belongs to no group");
}

template <typename T>
class ModelParams {
public:
    ModelParams() = default;
    explicit ModelParams(ModelConfig cfg) : config_(cfg) {}

    const ModelConfig& config() const { return config_; }

    Matrix<T>& add(const std::string& name, std::size_t rows, std::size_t cols, T fill = T(0)) {
        if (index_.count(name)) throw InvariantError("duplicate parameter name " + name);
        (void)param_group(name);
        index_.emplace(name, tensors_.size());
        names_.push_back(name);
        tensors_.emplace_back(rows, cols, fill);
        return tensors_.back();
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    Matrix<T>& at(const std::string& name) { return tensors_.at(position(name)); }
    const Matrix<T>& at(const std::string& name) const { return tensors_.at(position(name)); }
    std::size_t position(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return it->second;
    }

    std::size_t size() const { return tensors_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    std::vector<Matrix<T>>& tensors() { return tensors_; }
    const std::vector<Matrix<T>>& tensors() const { return tensors_; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& t : tensors_)
            for (T v : t.storage())
                if (!std::isfinite(v)) return false;
        return true;
    }

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out(config_);
        for (std::size_t i = 0; i < tensors_.size(); ++i) {
            auto& dst = out.add(names_[i], tensors_[i].rows(), tensors_[i].cols());
            dst = tensors_[i].template cast<U>();
        }
        return out;
    }

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        return a.config_ == b.config_ && a.names_ == b.names_ && a.tensors_ == b.tensors_;
    }

private:
    ModelConfig config_;
    std::vector<std::string> names_;
    std::vector<Matrix<T>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace model_detail {

template <typename T>
void add_attention(ModelParams<T>& p, const std::string& pre, std::size_t d) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) p.add(pre + "." + w, d, d);
    for (const char* b : {"bq", "bk", "bv", "bo"}) p.add(pre + "." + b, 1, d);
}

template <typename T>
void add_norm(ModelParams<T>& p, const std::string& pre, std::size_t d) {
    p.add(pre + ".gain", 1, d, T(1));
    p.add(pre + ".bias", 1, d, T(0));
}

template <typename T>
void add_ffn(ModelParams<T>& p, const std::string& pre, std::size_t d, std::size_t ff) {
    p.add(pre + ".w1", d, ff);
    p.add(pre + ".b1", 1, ff);
    p.add(pre + ".w2", ff, d);
    p.add(pre + ".b2", 1, d);
}

inline bool is_matrix_weight(const std::string& name) {
    auto leaf = name.substr(name.rfind('.') + 1);
    return leaf == "tokens" || leaf == "out_proj" || leaf == "w1" || leaf == "w2" || leaf[0] == 'w';
}

}  // namespace model_detail

/// Registry with every parameter at its initial value: Xavier-uniform weight
/// matrices, zero biases, unit layer-norm gains.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams<T> p(cfg);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto ff = static_cast<std::size_t>(cfg.d_ff);
    const auto V = static_cast<std::size_t>(cfg.vocab_size);
    if (cfg.tie_embeddings) {
        p.add("embed.tokens", V, d);
    } else {
        p.add("enc.embed.tokens", V, d);
        p.add("dec.embed.tokens", V, d);
        p.add("dec.out_proj", d, V);
    }
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string e = "enc.layers." + std::to_string(l);
        model_detail::add_norm(p, e + ".ln_attn", d);
        model_detail::add_attention(p, e + ".self_attn", d);
        model_detail::add_norm(p, e + ".ln_ffn", d);
        model_detail::add_ffn(p, e + ".ffn", d, ff);
    }
    model_detail::add_norm(p, "enc.final_ln", d);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string e = "dec.layers." + std::to_string(l);
        model_detail::add_norm(p, e + ".ln_self", d);
        model_detail::add_attention(p, e + ".self_attn", d);
        model_detail::add_norm(p, e + ".ln_cross", d);
        model_detail::add_attention(p, e + ".cross_attn", d);
        model_detail::add_norm(p, e + ".ln_ffn", d);
        model_detail::add_ffn(p, e + ".ffn", d, ff);
    }
    model_detail::add_norm(p, "dec.final_ln", d);

    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& name = p.names()[i];
        auto& m = p.tensors()[i];
        if (m.rows() == 1 || !model_detail::is_matrix_weight(name)) continue;
        const double a = std::sqrt(6.0 / double(m.rows() + m.cols()));
        std::uniform_real_distribution<double> u(-a, a);
        for (auto& v : m.storage()) v = static_cast<T>(u(rng));
    }
    return p;
}

/// Sinusoidal position table, max_positions × d_model.
template <typename T>
Matrix<T> sinusoidal_positions(std::size_t max_positions, std::size_t d) {
    Matrix<T> pe(max_positions, d);
    for (std::size_t pos = 0; pos < max_positions; ++pos)
        for (std::size_t i = 0; i < d; i += 2) {
            const double freq = std::pow(10000.0, -double(i) / double(d));
            pe(pos, i) = static_cast<T>(std::sin(double(pos) * freq));
            if (i + 1 < d) pe(pos, i + 1) = static_cast<T>(std::cos(double(pos) * freq));
        }
    return pe;
}

/// Parameter leaves of one registry on one tape.
template <typename T>
struct BoundParams {
    const ModelParams<T>* params = nullptr;
    std::vector<ad::Var> vars;  // same order as params->names()
    ad::Var operator[](const std::string& name) const { return vars[params->position(name)]; }
};

/// Borrow every parameter onto `tape`; `trainable` controls gradient flow.
template <typename T>
BoundParams<T> bind(ad::Tape<T>& tape, const ModelParams<T>& params, bool trainable) {
    BoundParams<T> b{&params, {}};
    b.vars.reserve(params.size());
    for (const auto& m : params.tensors()) b.vars.push_back(tape.borrow(m, trainable));
    return b;
}

/// Accumulated gradient of each parameter, zeros where unreached. Several
/// bindings of the same registry are summed.
template <typename T>
std::vector<Matrix<T>> collect_grads(ad::Tape<T>& tape, const ModelParams<T>& params,
                                     std::initializer_list<const BoundParams<T>*> bindings) {
    std::vector<Matrix<T>> out;
    out.reserve(params.size());
    for (const auto& m : params.tensors()) out.emplace_back(m.rows(), m.cols());
    for (const auto* b : bindings)
        for (std::size_t i = 0; i < params.size(); ++i)
            if (tape.has_grad(b->vars[i])) as_eigen(out[i]) += as_eigen(tape.grad(b->vars[i]));
    return out;
}

/// Batched transformer forward passes on a tape.
template <typename T>
class Transformer {
public:
    explicit Transformer(const ModelConfig& cfg)
        : cfg_(cfg),
          positions_(sinusoidal_positions<T>(static_cast<std::size_t>(cfg.max_positions),
                                             static_cast<std::size_t>(cfg.d_model))) {
        cfg.validate();
    }

    const ModelConfig& config() const { return cfg_; }

    /// Encoder states, batch × len rows of width d_model (after the final norm).
    template <typename Rng>
    ad::Var encode(ad::Tape<T>& t, const BoundParams<T>& p, std::span<const int> src,
                   const std::vector<std::uint8_t>& src_pad, std::size_t batch, std::size_t len, Mode mode,
                   Rng& rng) const {
        check_tokens(src, batch, len);
        const std::string emb = cfg_.tie_embeddings ? "embed.tokens" : "enc.embed.tokens";
        ad::Var x = embed(t, p[emb], src, batch, len, 0);
        x = drop(t, x, mode, rng);
        for (int l = 0; l < cfg_.num_layers; ++l) {
            const std::string pre = "enc.layers." + std::to_string(l);
            ad::Var h = norm(t, p, x, pre + ".ln_attn");
            ad::AttentionLayout lay{batch, len, len, heads(), &src_pad, false};
            ad::Var a = mha(t, p, pre + ".self_attn", h, h, lay);
            x = ad::add(t, x, drop(t, a, mode, rng));
            h = norm(t, p, x, pre + ".ln_ffn");
            x = ad::add(t, x, drop(t, ffn(t, p, pre + ".ffn", h, mode, rng), mode, rng));
        }
        return norm(t, p, x, "enc.final_ln");
    }

    /// Log-probabilities, batch × tgt_len rows of width vocab_size.
    /// `first_position` offsets the positional encoding of the decoder input.
    template <typename Rng>
    ad::Var decode(ad::Tape<T>& t, const BoundParams<T>& p, ad::Var memory, const std::vector<std::uint8_t>& src_pad,
                   std::size_t src_len, std::span<const int> tgt_in, const std::vector<std::uint8_t>& tgt_pad,
                   std::size_t batch, std::size_t tgt_len, Mode mode, Rng& rng) const {
        check_tokens(tgt_in, batch, tgt_len);
        ad::Var y = embed(t, p[embedding_name(false)], tgt_in, batch, tgt_len, 0);
        y = drop(t, y, mode, rng);
        for (int l = 0; l < cfg_.num_layers; ++l) {
            const std::string pre = "dec.layers." + std::to_string(l);
            ad::Var h = norm(t, p, y, pre + ".ln_self");
            ad::AttentionLayout self{batch, tgt_len, tgt_len, heads(), &tgt_pad, true};
            y = ad::add(t, y, drop(t, mha(t, p, pre + ".self_attn", h, h, self), mode, rng));
            h = norm(t, p, y, pre + ".ln_cross");
            ad::AttentionLayout cross{batch, tgt_len, src_len, heads(), &src_pad, false};
            y = ad::add(t, y, drop(t, mha(t, p, pre + ".cross_attn", h, memory, cross), mode, rng));
            h = norm(t, p, y, pre + ".ln_ffn");
            y = ad::add(t, y, drop(t, ffn(t, p, pre + ".ffn", h, mode, rng), mode, rng));
        }
        y = norm(t, p, y, "dec.final_ln");
        return ad::log_softmax(t, project(t, p, y));
    }

    template <typename Rng>
    ad::Var forward(ad::Tape<T>& t, const BoundParams<T>& p, const PaddedBatch& b, Mode mode, Rng& rng) const {
        ad::Var mem = encode(t, p, b.src, b.src_pad, b.size, b.src_len, mode, rng);
        return decode(t, p, mem, b.src_pad, b.src_len, b.tgt_in, b.tgt_pad, b.size, b.tgt_len, mode, rng);
    }

    // Building blocks shared with the incremental decoder.

    std::size_t heads() const { return static_cast<std::size_t>(cfg_.num_heads); }
    std::string embedding_name(bool encoder) const {
        if (cfg_.tie_embeddings) return "embed.tokens";
        return encoder ? "enc.embed.tokens" : "dec.embed.tokens";
    }

    /// Scaled token embedding plus sinusoidal position, positions first_position.. per row block.
    ad::Var embed(ad::Tape<T>& t, ad::Var table, std::span<const int> tokens, std::size_t batch, std::size_t len,
                  std::size_t first_position) const {
        if (first_position + len > static_cast<std::size_t>(cfg_.max_positions))
            throw DataError("sequence longer than max_positions");
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        ad::Var x = ad::gather_rows(t, table, tokens, static_cast<T>(std::sqrt(double(d))));
        Matrix<T> pe(batch * len, d);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < len; ++i)
                std::copy_n(positions_.row_ptr(first_position + i), d, pe.row_ptr(b * len + i));
        return ad::add_constant(t, x, pe);
    }

    ad::Var norm(ad::Tape<T>& t, const BoundParams<T>& p, ad::Var x, const std::string& pre) const {
        return ad::layer_norm(t, x, p[pre + ".gain"], p[pre + ".bias"]);
    }

    ad::Var mha(ad::Tape<T>& t, const BoundParams<T>& p, const std::string& pre, ad::Var query_src,
                ad::Var key_src, const ad::AttentionLayout& lay) const {
        ad::Var q = ad::linear(t, query_src, p[pre + ".wq"], p[pre + ".bq"]);
        ad::Var k = ad::linear(t, key_src, p[pre + ".wk"], p[pre + ".bk"]);
        ad::Var v = ad::linear(t, key_src, p[pre + ".wv"], p[pre + ".bv"]);
        ad::Var o = ad::attention(t, q, k, v, lay);
        return ad::linear(t, o, p[pre + ".wo"], p[pre + ".bo"]);
    }

    template <typename Rng>
    ad::Var ffn(ad::Tape<T>& t, const BoundParams<T>& p, const std::string& pre, ad::Var x, Mode mode,
                Rng& rng) const {
        ad::Var h = ad::relu(t, ad::linear(t, x, p[pre + ".w1"], p[pre + ".b1"]));
        h = drop(t, h, mode, rng);
        return ad::linear(t, h, p[pre + ".w2"], p[pre + ".b2"]);
    }

    ad::Var project(ad::Tape<T>& t, const BoundParams<T>& p, ad::Var y) const {
        if (cfg_.tie_embeddings) return ad::matmul_nt(t, y, p["embed.tokens"]);
        return ad::linear(t, y, p["dec.out_proj"]);
    }

    template <typename Rng>
    ad::Var drop(ad::Tape<T>& t, ad::Var x, Mode mode, Rng& rng) const {
        if (mode == Mode::Eval) return x;
        return ad::dropout(t, x, cfg_.dropout_rate, rng);
    }

private:
    void check_tokens(std::span<const int> tokens, std::size_t batch, std::size_t len) const {
        if (tokens.size() != batch * len) throw DataError("token matrix does not match batch shape");
        if (len > static_cast<std::size_t>(cfg_.max_positions)) throw DataError("sequence longer than max_positions");
        for (int tok : tokens)
            if (tok < 0 || tok >= cfg_.vocab_size) throw DataError("token index out of range");
    }

    ModelConfig cfg_;
    Matrix<T> positions_;
};

/// Encoder states of one sentence with its padding mask.
template <typename T>
struct EncoderOutput {
    Matrix<T> hidden;  // len × d_model
    std::vector<std::uint8_t> pad;
};

/// Eval-mode encoding of a single (possibly padded) source sequence.
template <typename T>
EncoderOutput<T> encode_sentence(const ModelParams<T>& params, std::span<const int> src,
                                 std::vector<std::uint8_t> pad = {}) {
    if (pad.empty()) {
        pad.resize(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) pad[i] = src[i] == Vocab::pad ? 1 : 0;
    }
    Transformer<T> model(params.config());
    ad::Tape<T> tape;
    auto bound = bind(tape, params, false);
    std::mt19937_64 unused(0);
    ad::Var h = model.encode(tape, bound, src, pad, 1, src.size(), Mode::Eval, unused);
    return {tape.value(h), std::move(pad)};
}

/// Elementwise maximum over the non-pad positions.
template <typename T>
std::vector<T> pooled_representation(const EncoderOutput<T>& enc) {
    const auto& h = enc.hidden;
    std::vector<T> out;
    for (std::size_t r = 0; r < h.rows(); ++r) {
        if (r < enc.pad.size() && enc.pad[r]) continue;
        if (out.empty()) {
            out.assign(h.row(r).begin(), h.row(r).end());
            continue;
        }
        for (std::size_t c = 0; c < h.cols(); ++c) out[c] = std::max(out[c], h(r, c));
    }
    if (out.empty()) throw DataError("pooled_representation: every position is padding");
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container (little-endian):
//   "XCKP" u32 version | config | stage string | u32 n_meta (key,value)* |
//   u32 n_params (name, u32 rows, u32 cols, f32 values)*

inline constexpr std::uint32_t checkpoint_version = 1;

struct CheckpointMeta {
    std::string stage;  // "pretrain" | "finetune"
    std::map<std::string, std::string> extra;
};

namespace ckpt_detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("checkpoint is truncated");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}
inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
    const auto n = get_u32(is);
    if (n > (1u << 20)) throw DataError("checkpoint string length is corrupt");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw DataError("checkpoint is truncated");
    return s;
}
inline void put_f64(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    put_u32(os, static_cast<std::uint32_t>(bits));
    put_u32(os, static_cast<std::uint32_t>(bits >> 32));
}
inline double get_f64(std::istream& is) {
    const std::uint64_t lo = get_u32(is);
    const std::uint64_t hi = get_u32(is);
    return std::bit_cast<double>(lo | (hi << 32));
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const CheckpointMeta& meta, const std::string& path) {
    using namespace ckpt_detail;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path);
    os.write("XCKP", 4);
    put_u32(os, checkpoint_version);
    const auto& c = params.config();
    for (int v : {c.num_layers, c.num_heads, c.d_model, c.d_ff, c.vocab_size, c.max_positions})
        put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, c.tie_embeddings ? 1u : 0u);
    put_f64(os, c.dropout_rate);
    put_str(os, meta.stage);
    put_u32(os, static_cast<std::uint32_t>(meta.extra.size()));
    for (const auto& [k, v] : meta.extra) {
        put_str(os, k);
        put_str(os, v);
    }
    put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& m = params.tensors()[i];
        put_str(os, params.names()[i]);
        put_u32(os, static_cast<std::uint32_t>(m.rows()));
        put_u32(os, static_cast<std::uint32_t>(m.cols()));
        for (T v : m.storage()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    if (!os) throw DataError("failed writing checkpoint " + path);
}

template <typename T>
struct LoadedCheckpoint {
    ModelParams<T> params;
    CheckpointMeta meta;
};

/// Loads a checkpoint. A positive `expected_vocab_size` must match the stored config.
template <typename T = float>
LoadedCheckpoint<T> load_checkpoint(const std::string& path, int expected_vocab_size = 0) {
    using namespace ckpt_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "XCKP", 4) != 0) throw DataError("not a checkpoint file: " + path);
    const auto version = get_u32(is);
    if (version != checkpoint_version)
        throw DataError("checkpoint version " + std::to_string(version) + " is not supported");
    ModelConfig c;
    c.num_layers = static_cast<int>(get_u32(is));
    c.num_heads = static_cast<int>(get_u32(is));
    c.d_model = static_cast<int>(get_u32(is));
    c.d_ff = static_cast<int>(get_u32(is));
    c.vocab_size = static_cast<int>(get_u32(is));
    c.max_positions = static_cast<int>(get_u32(is));
    c.tie_embeddings = get_u32(is) != 0;
    c.dropout_rate = get_f64(is);
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint config is corrupt: ") + e.what());
    }
    if (expected_vocab_size > 0 && c.vocab_size != expected_vocab_size)
        throw DataError("checkpoint vocab_size " + std::to_string(c.vocab_size) + " does not match vocabulary size " +
                        std::to_string(expected_vocab_size));
    LoadedCheckpoint<T> out{init_params<T>(c, 0), {}};
    out.meta.stage = get_str(is);
    const auto nmeta = get_u32(is);
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        auto k = get_str(is);
        out.meta.extra[k] = get_str(is);
    }
    const auto n = get_u32(is);
    if (n != out.params.size()) throw DataError("checkpoint parameter count does not match its config");
    std::vector<bool> seen(n, false);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto name = get_str(is);
        if (!out.params.contains(name)) throw DataError("checkpoint has unexpected parameter " + name);
        if (seen[out.params.position(name)]) throw DataError("checkpoint repeats parameter " + name);
        seen[out.params.position(name)] = true;
        auto& m = out.params.at(name);
        const auto rows = get_u32(is), cols = get_u32(is);
        if (rows != m.rows() || cols != m.cols()) throw DataError("checkpoint shape mismatch for " + name);
        for (auto& v : m.storage()) v = static_cast<T>(std::bit_cast<float>(get_u32(is)));
    }
    return out;
}

}  // namespace crossconst
