#pragma once

// Subcommand dispatch for the crossconst binary.
//
// Settings resolve in three layers: --preset, then --config FILE, then
// --set key=value / --seed flags. The resolved settings are echoed as
// "# key = value" lines at the top of every log.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 data error,
// 3 invariant or verification failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crossconst/batching.hpp"
#include "crossconst/bpe.hpp"
#include "crossconst/config.hpp"
#include "crossconst/corpus.hpp"
#include "crossconst/decoding.hpp"
#include "crossconst/errors.hpp"
#include "crossconst/evaluation.hpp"
#include "crossconst/model.hpp"
#include "crossconst/theory.hpp"
#include "crossconst/training.hpp"

namespace crossconst::cli {

namespace fs = std::filesystem;

/// Every tunable of every subcommand.
struct Settings {
    SynthSpec synth;
    int num_merges = 200;
    ModelConfig model;
    TrainConfig train;
    BeamConfig beam;
    std::uint64_t seed = 1;

    void apply(const std::string& k, const std::string& v) {
        if (k == "seed") {
            seed = static_cast<std::uint64_t>(parse_int(k, v));
            synth.seed = seed;
            train.seed = seed;
        } else if (k == "num_languages") synth.num_languages = static_cast<int>(parse_int(k, v));
        else if (k == "num_train") synth.num_train = static_cast<int>(parse_int(k, v));
        else if (k == "num_valid") synth.num_valid = static_cast<int>(parse_int(k, v));
        else if (k == "num_test") synth.num_test = static_cast<int>(parse_int(k, v));
        else if (k == "num_merges") num_merges = static_cast<int>(parse_int(k, v));
        else if (k == "num_layers") model.num_layers = static_cast<int>(parse_int(k, v));
        else if (k == "num_heads") model.num_heads = static_cast<int>(parse_int(k, v));
        else if (k == "d_model") model.d_model = static_cast<int>(parse_int(k, v));
        else if (k == "d_ff") model.d_ff = static_cast<int>(parse_int(k, v));
        else if (k == "dropout") model.dropout_rate = parse_double(k, v);
        else if (k == "max_positions") model.max_positions = static_cast<int>(parse_int(k, v));
        else if (k == "tie_embeddings") model.tie_embeddings = parse_bool(k, v);
        else if (k == "beam_size") beam.beam_size = static_cast<int>(parse_int(k, v));
        else if (k == "length_penalty") beam.length_penalty = parse_double(k, v);
        else if (k == "max_len_factor") beam.max_len_factor = parse_double(k, v);
        else if (k == "max_len_constant") beam.max_len_constant = static_cast<int>(parse_int(k, v));
        else if (!apply_train_setting(train, k, v)) throw ConfigError("unknown config key '" + k + "'");
    }

    void apply_preset(const std::string& name) {
        if (name == "lowres") {
            train.alpha = 0.25;
            beam.length_penalty = 0.6;
            beam.beam_size = 5;
        } else if (name == "highres") {
            train.alpha = 0.1;
            beam.length_penalty = 1.0;
            beam.beam_size = 5;
        } else {
            throw UsageError("unknown preset '" + name + "' (expected lowres or highres)");
        }
    }

    std::vector<std::pair<std::string, std::string>> resolved() const {
        auto num = [](double d) {
            std::ostringstream os;
            os << d;
            return os.str();
        };
        return {{"seed", std::to_string(seed)},
                {"num_languages", std::to_string(synth.num_languages)},
                {"num_train", std::to_string(synth.num_train)},
                {"num_valid", std::to_string(synth.num_valid)},
                {"num_test", std::to_string(synth.num_test)},
                {"num_merges", std::to_string(num_merges)},
                {"num_layers", std::to_string(model.num_layers)},
                {"num_heads", std::to_string(model.num_heads)},
                {"d_model", std::to_string(model.d_model)},
                {"d_ff", std::to_string(model.d_ff)},
                {"dropout", num(model.dropout_rate)},
                {"max_positions", std::to_string(model.max_positions)},
                {"tie_embeddings", model.tie_embeddings ? "true" : "false"},
                {"alpha", num(train.alpha)},
                {"label_smoothing", num(train.label_smoothing)},
                {"lr", num(train.lr_base)},
                {"warmup_steps", std::to_string(train.warmup_steps)},
                {"adam_beta1", num(train.adam_beta1)},
                {"adam_beta2", num(train.adam_beta2)},
                {"adam_eps", num(train.adam_eps)},
                {"clip_norm", num(train.clip_norm)},
                {"max_steps", std::to_string(train.max_steps)},
                {"valid_interval", std::to_string(train.valid_interval)},
                {"patience", std::to_string(train.patience)},
                {"min_improvement", num(train.min_improvement)},
                {"max_tokens", std::to_string(train.max_tokens)},
                {"beam_size", std::to_string(beam.beam_size)},
                {"length_penalty", num(beam.length_penalty)},
                {"max_len_factor", num(beam.max_len_factor)},
                {"max_len_constant", std::to_string(beam.max_len_constant)}};
    }

    void echo(std::ostream& os, const std::string& command) const {
        os << "# command = " << command << '\n';
        for (const auto& [k, v] : resolved()) os << "# " << k << " = " << v << '\n';
    }
};

/// Files of one experiment directory.
struct DataFiles {
    fs::path dir;
    fs::path corpus() const { return dir / "corpus.tsv"; }
    fs::path splits() const { return dir / "splits.cfg"; }
    fs::path merges() const { return dir / "merges.txt"; }
    fs::path vocab() const { return dir / "vocab.txt"; }
};

inline std::ifstream open_in(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw DataError("cannot read " + p.string());
    return is;
}

inline std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw DataError("cannot write " + p.string());
    return os;
}

inline MultiwayCorpus load_corpus(const DataFiles& f) {
    auto is = open_in(f.corpus());
    auto c = read_multiway_tsv(is);
    auto ss = open_in(f.splits());
    const auto m = parse_config(ss);
    auto get = [&](const char* k) {
        auto it = m.find(k);
        if (it == m.end()) throw DataError(std::string("splits file lacks ") + k);
        return static_cast<int>(parse_int(k, it->second));
    };
    const int train = get("train"), valid = get("valid"), test = get("test");
    if (train + valid + test != static_cast<int>(c.entries.size()))
        throw DataError("split sizes do not add up to the corpus size");
    assign_splits(c, train, valid);
    return c;
}

inline Tokenizer load_tokenizer(const DataFiles& f) {
    auto ms = open_in(f.merges());
    auto vs = open_in(f.vocab());
    return Tokenizer(read_merge_table(ms), read_vocab(vs));
}

inline LanguageId language_arg(const MultiwayCorpus& c, const std::string& code) {
    LanguageId l{code};
    if (!c.has_language(l)) throw UsageError("language " + code + " is not in the corpus");
    return l;
}

struct Runner {
    std::ostream& out;
    std::ostream& err;
    Settings settings;
    std::string command;
    fs::path out_dir = ".";
    fs::path data_dir;
    int threads = 1;

    DataFiles data() const { return {data_dir.empty() ? out_dir : data_dir}; }

    int make_corpus() {
        settings.echo(out, command);
        const auto c = generate_synthetic_corpus(settings.synth);
        const DataFiles f{out_dir};
        auto os = open_out(f.corpus());
        write_multiway_tsv(c, os);
        auto ss = open_out(f.splits());
        ss << "train = " << c.train_ids.size() << "\nvalid = " << c.valid_ids.size() << "\ntest = " << c.test_ids.size()
           << '\n';
        out << "wrote " << c.entries.size() << " sentences x " << c.languages.size() << " languages to "
            << f.corpus().string() << '\n';
        return 0;
    }

    int train_bpe_cmd() {
        settings.echo(out, command);
        const auto c = load_corpus(data());
        const auto texts = c.texts(c.train_ids);
        const auto merges = train_bpe(texts, settings.num_merges);
        const auto vocab = Vocab::build(c.languages, texts, merges);
        const DataFiles f{out_dir};
        auto ms = open_out(f.merges());
        write_merge_table(merges, ms);
        auto vs = open_out(f.vocab());
        write_vocab(vocab, vs);
        out << "learned " << merges.merges.size() << " merges, vocabulary of " << vocab.size() << " symbols\n";
        return 0;
    }

    int train_stage(Stage stage, const std::optional<std::string>& init) {
        if (stage == Stage::Finetune && !init)
            throw UsageError(
                "finetune requires --init-checkpoint: training is two-stage, pretrain a conventional model first");
        const auto c = load_corpus(data());
        const auto tok = load_tokenizer(data());
        const LanguageId pivot = c.languages.front();
        const auto train = english_centric_pairs(c, pivot, tok, c.train_ids);
        const auto valid = english_centric_pairs(c, pivot, tok, c.valid_ids);
        TrainConfig tc = settings.train;
        tc.stage = stage;
        std::optional<ModelParams<float>> start;
        ModelConfig mc = settings.model;
        mc.vocab_size = static_cast<int>(tok.vocab().size());
        if (init) {
            start = load_checkpoint<float>(*init, mc.vocab_size).params;
            mc = start->config();
        }
        const std::string name = stage_name(stage);
        auto log = open_out(out_dir / (name + ".log"));
        settings.echo(log, command);
        settings.echo(out, command);
        log << "step\tlr\ttrain_ce\ttrain_kl\tvalid_ce\n";
        out << "step\tlr\ttrain_ce\ttrain_kl\tvalid_ce\n";
        struct Tee : std::streambuf {
            std::streambuf *a, *b;
            int overflow(int ch) override {
                if (ch == EOF) return 0;
                a->sputc(static_cast<char>(ch));
                b->sputc(static_cast<char>(ch));
                return ch;
            }
            int sync() override {
                a->pubsync();
                b->pubsync();
                return 0;
            }
        } tee;
        tee.a = log.rdbuf();
        tee.b = out.rdbuf();
        std::ostream both(&tee);
        const auto res = run_stage<float>(train, valid, start ? &*start : nullptr, mc, tc, &both);
        CheckpointMeta meta{name, {{"best_step", std::to_string(res.best_step)},
                                   {"steps_run", std::to_string(res.steps_run)},
                                   {"seed", std::to_string(settings.seed)}}};
        const auto path = out_dir / (name + ".ckpt");
        save_checkpoint(res.best, meta, path.string());
        out << "best step " << res.best_step << " valid_ce " << res.best_valid_ce << " -> " << path.string() << '\n';
        return 0;
    }

    std::vector<std::vector<std::string>> source_sentences(const MultiwayCorpus& c, const LanguageId& src,
                                                           const std::optional<std::string>& input,
                                                           std::vector<int>& ids) const {
        std::vector<std::vector<std::string>> out_words;
        if (input) {
            auto is = open_in(*input);
            std::string line;
            int k = 0;
            while (std::getline(is, line)) {
                ids.push_back(k++);
                out_words.push_back(split_ws(line));
            }
            return out_words;
        }
        const auto s = c.language_index(src);
        for (int id : c.test_ids) {
            ids.push_back(id);
            out_words.push_back(c.words(id, s));
        }
        return out_words;
    }

    int translate_cmd(const std::string& ckpt, const std::string& src_code, const std::string& tgt_code,
                      const std::optional<std::string>& pivot_code, const std::optional<std::string>& input) {
        settings.echo(out, command);
        const auto c = load_corpus(data());
        const auto tok = load_tokenizer(data());
        const auto params = load_checkpoint<float>(ckpt, static_cast<int>(tok.vocab().size())).params;
        const auto src = language_arg(c, src_code), tgt = language_arg(c, tgt_code);
        std::vector<int> ids;
        const auto sents = source_sentences(c, src, input, ids);
        std::vector<TranslationRow> rows(sents.size());
        if (pivot_code) {
            const auto pivot = language_arg(c, *pivot_code);
            auto hyps = parallel_map<Hypothesis>(sents.size(), threads, [&](std::size_t i) {
                return pivot_translate(tok.encode_words(sents[i]), src, pivot, tgt, params, tok.vocab(), settings.beam)
                    .output;
            });
            for (std::size_t i = 0; i < rows.size(); ++i)
                rows[i] = {ids[i], src, tgt, tok.decode(hyps[i].tokens), hyps[i].normalized_score};
        } else {
            std::vector<std::vector<int>> srcs;
            for (const auto& s : sents) srcs.push_back(retag(tok.vocab().tag(tgt), tok.encode_words(s)));
            const auto hyps = translate_all(srcs, params, settings.beam, threads);
            for (std::size_t i = 0; i < rows.size(); ++i)
                rows[i] = {ids[i], src, tgt, tok.decode(hyps[i].tokens), hyps[i].normalized_score};
        }
        const auto path = out_dir / (pivot_code ? "pivot_translations.tsv" : "translations.tsv");
        auto os = open_out(path);
        write_translations(rows, os);
        out << "wrote " << rows.size() << " translations to " << path.string() << '\n';
        return 0;
    }

    int evaluate_cmd(const std::string& ckpt, bool with_pivot, std::optional<int> limit) {
        settings.echo(out, command);
        const auto c = load_corpus(data());
        const auto tok = load_tokenizer(data());
        const auto params = load_checkpoint<float>(ckpt, static_cast<int>(tok.vocab().size())).params;
        EvalOptions opt;
        opt.pivot = c.languages.front();
        opt.with_pivot = with_pivot;
        opt.threads = threads;
        opt.beam = settings.beam;
        auto ids = c.test_ids;
        if (limit && *limit >= 0 && static_cast<std::size_t>(*limit) < ids.size()) ids.resize(std::size_t(*limit));
        const auto rep = evaluate_run(params, c, tok, ids, opt);
        print_report(rep, out);
        auto os = open_out(out_dir / "report.json");
        os << report_json(rep).dump(2) << '\n';
        return 0;
    }

    int export_cmd(const std::string& ckpt) {
        settings.echo(out, command);
        const auto c = load_corpus(data());
        const auto tok = load_tokenizer(data());
        const auto params = load_checkpoint<float>(ckpt, static_cast<int>(tok.vocab().size())).params;
        const auto dump = export_representations(c, c.test_ids, tok, params, c.languages.front(), threads);
        const auto path = out_dir / "reprs.jsonl";
        auto os = open_out(path);
        write_dump(dump, os);
        out << "wrote " << dump.size() << " records to " << path.string() << '\n';
        return 0;
    }

    int simsearch_cmd(const std::string& dump_path, const std::optional<std::string>& src,
                      const std::optional<std::string>& tgt) {
        auto is = open_in(dump_path);
        const auto dump = read_dump(is);
        std::vector<std::string> langs;
        for (const auto& r : dump)
            if (std::find(langs.begin(), langs.end(), r.lang) == langs.end()) langs.push_back(r.lang);
        if (src.has_value() != tgt.has_value()) throw UsageError("--src and --tgt go together");
        out << "src\ttgt\taccuracy\tmean_cosine\n";
        auto row = [&](const std::string& a, const std::string& b) {
            out << a << '\t' << b << '\t' << similarity_search(dump, a, b) << '\t' << mean_parallel_cosine(dump, a, b)
                << '\n';
        };
        if (src) {
            row(*src, *tgt);
            return 0;
        }
        for (const auto& a : langs)
            for (const auto& b : langs)
                if (a != b) row(a, b);
        return 0;
    }

    int verify_theory_cmd(int seeds, int size) {
        if (seeds < 1 || size < 2) throw UsageError("--seeds must be >= 1 and --size >= 2");
        theory::WorldSpec spec;
        spec.nx = spec.ny = spec.nz = static_cast<std::size_t>(size);
        std::ostringstream tsv;
        theory::write_theory_header(tsv);
        int failed = 0;
        for (int s = 0; s < seeds; ++s) {
            const auto c = theory::check_world(settings.seed + static_cast<std::uint64_t>(s), spec);
            theory::write_theory_row(tsv, c);
            if (!c.ok()) {
                ++failed;
                err << "seed " << c.seed << ": jensen " << c.jensen_ok << " identity " << c.identity_ok << " probe "
                    << c.probe_ok << '\n';
            }
        }
        auto os = open_out(out_dir / "theory.tsv");
        os << tsv.str();
        out << tsv.str();
        out << (seeds - failed) << "/" << seeds << " worlds pass\n";
        return failed ? 3 : 0;
    }
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"CrossConST multilingual NMT lab", "crossconst"};
    app.require_subcommand(1);
    Runner r{out, err, {}, {}, ".", {}, 1};

    std::optional<std::string> config_path, preset;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".", data_dir;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key = value settings file");
        sub->add_option("--preset", preset, "lowres or highres recipe defaults");
        sub->add_option("--set", sets, "override one setting, key=value (repeatable)");
        sub->add_option("--seed", seed, "seed for every random choice");
        sub->add_option("--threads", r.threads, "sentence-level decoding threads")->check(CLI::PositiveNumber);
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--data", data_dir, "directory with corpus.tsv, splits.cfg, merges.txt, vocab.txt");
    };

    auto* make = app.add_subcommand("make-corpus", "generate the synthetic multiway corpus");
    auto* bpe = app.add_subcommand("train-bpe", "learn BPE merges and the vocabulary on the train split");
    auto* pre = app.add_subcommand("pretrain", "stage 1: label-smoothed cross-entropy on English-centric pairs");
    auto* fin = app.add_subcommand("finetune", "stage 2: cross-entropy plus the KL consistency term");
    auto* tra = app.add_subcommand("translate", "beam-search translation of the test split or --input");
    auto* piv = app.add_subcommand("pivot-translate", "two-pass translation through the pivot language");
    auto* eva = app.add_subcommand("evaluate", "BLEU and similarity search on the test split");
    auto* sim = app.add_subcommand("simsearch", "similarity search over a representation dump");
    auto* exp = app.add_subcommand("export-reprs", "dump pooled encoder representations of the test split");
    auto* thy = app.add_subcommand("verify-theory", "check the lower bound and gap identity on discrete worlds");
    for (auto* s : {make, bpe, pre, fin, tra, piv, eva, sim, exp, thy}) common(s);

    std::optional<std::string> init_ckpt;
    fin->add_option("--init-checkpoint", init_ckpt, "pretrained checkpoint to start from");
    pre->add_option("--init-checkpoint", init_ckpt, "optional checkpoint to continue from");

    std::string ckpt, src, tgt, pivot = "L0";
    std::optional<std::string> input;
    for (auto* s : {tra, piv}) {
        s->add_option("--checkpoint", ckpt, "model checkpoint")->required();
        s->add_option("--src", src, "source language code")->required();
        s->add_option("--tgt", tgt, "target language code")->required();
        s->add_option("--input", input, "one whitespace-tokenized sentence per line (default: test split)");
    }
    piv->add_option("--pivot", pivot, "pivot language code");
    bool with_pivot = false;
    std::optional<int> limit;
    eva->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    eva->add_flag("--pivot", with_pivot, "also report pivot translation for zero-shot directions");
    eva->add_option("--limit", limit, "evaluate only the first N test sentences");
    exp->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    std::string dump_path;
    std::optional<std::string> ssrc, stgt;
    sim->add_option("--dump", dump_path, "representation dump (JSON Lines)")->required();
    sim->add_option("--src", ssrc, "source language code");
    sim->add_option("--tgt", stgt, "target language code");
    int seeds = 100, size = 5;
    thy->add_option("--seeds", seeds, "number of seeded worlds");
    thy->add_option("--size", size, "alphabet size of X, Y and Z");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 1;
    }

    try {
        auto* sub = app.get_subcommands().front();
        r.command = sub->get_name();
        if (preset) r.settings.apply_preset(*preset);
        if (config_path)
            for (const auto& [k, v] : read_config_file(*config_path)) r.settings.apply(k, v);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
            r.settings.apply(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
        if (seed) r.settings.apply("seed", std::to_string(*seed));
        {
            ModelConfig probe = r.settings.model;
            probe.vocab_size = 1;  // known only once the vocabulary is loaded
            probe.validate();
        }
        r.settings.train.validate();
        r.settings.beam.validate();
        r.out_dir = out_dir;
        r.data_dir = data_dir;

        if (sub == make) return r.make_corpus();
        if (sub == bpe) return r.train_bpe_cmd();
        if (sub == pre) return r.train_stage(Stage::Pretrain, init_ckpt);
        if (sub == fin) return r.train_stage(Stage::Finetune, init_ckpt);
        if (sub == tra) return r.translate_cmd(ckpt, src, tgt, std::nullopt, input);
        if (sub == piv) return r.translate_cmd(ckpt, src, tgt, pivot, input);
        if (sub == eva) return r.evaluate_cmd(ckpt, with_pivot, limit);
        if (sub == exp) return r.export_cmd(ckpt);
        if (sub == sim) return r.simsearch_cmd(dump_path, ssrc, stgt);
        if (sub == thy) return r.verify_theory_cmd(seeds, size);
        return 1;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const InvariantError& e) {
        err << "invariant violated: " << e.what() << '\n';
        return 3;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace crossconst::cli
