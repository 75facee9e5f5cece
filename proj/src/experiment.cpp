#include "syllo/experiment.hpp"

#include "syllo/analysis.hpp"
#include "syllo/checkpoint.hpp"
#include "syllo/circuit.hpp"
#include "syllo/report.hpp"
#include "syllo/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace syllo {

namespace fs = std::filesystem;
using nlohmann::json;

json ExperimentConfig::to_json() const {
    return json{{"command", command},
                {"checkpoint", checkpoint},
                {"kind", short_name(kind)},
                {"template", template_index},
                {"pair", pair},
                {"n", n},
                {"seed", seed},
                {"source", to_string(source)},
                {"corruption", to_string(corruption)},
                {"prepend_eot", prepend_eot},
                {"circuit", circuit},
                {"out_dir", out_dir.string()},
                {"formats", formats},
                {"jobs", jobs},
                {"mode", mode},
                {"with_attention", with_attention},
                {"receiver", receiver},
                {"pairs", pairs},
                {"analysis", analysis},
                {"head", head},
                {"mlp", mlp},
                {"source_token", source_token},
                {"prompt", prompt},
                {"target", target},
                {"k", k}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    try {
        c.command = j.value("command", c.command);
        c.checkpoint = j.value("checkpoint", c.checkpoint);
        if (j.contains("kind")) c.kind = parse_kind(j.at("kind").get<std::string>());
        c.template_index = j.value("template", c.template_index);
        c.pair = j.value("pair", c.pair);
        c.n = j.value("n", c.n);
        c.seed = j.value("seed", c.seed);
        if (j.contains("source")) c.source = parse_source(j.at("source").get<std::string>());
        if (j.contains("corruption")) c.corruption = parse_corruption(j.at("corruption").get<std::string>());
        c.prepend_eot = j.value("prepend_eot", c.prepend_eot);
        c.circuit = j.value("circuit", c.circuit);
        c.out_dir = j.value("out_dir", c.out_dir.string());
        if (j.contains("formats")) c.formats = j.at("formats").get<std::set<std::string>>();
        c.jobs = j.value("jobs", c.jobs);
        c.mode = j.value("mode", c.mode);
        c.with_attention = j.value("with_attention", c.with_attention);
        c.receiver = j.value("receiver", c.receiver);
        if (j.contains("pairs")) c.pairs = j.at("pairs").get<std::vector<std::string>>();
        c.analysis = j.value("analysis", c.analysis);
        c.head = j.value("head", c.head);
        c.mlp = j.value("mlp", c.mlp);
        c.source_token = j.value("source_token", c.source_token);
        c.prompt = j.value("prompt", c.prompt);
        c.target = j.value("target", c.target);
        c.k = j.value("k", c.k);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("experiment config: ") + e.what());
    }
    return c;
}

void ExperimentConfig::validate() const {
    if (n < 1) throw std::invalid_argument("n must be at least 1");
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    if (template_index < 0 || template_index > template_count(kind))
        throw std::invalid_argument("template index out of range for " + std::string(short_name(kind)));
    for (const auto& f : formats)
        if (f != "csv" && f != "json" && f != "svg") throw std::invalid_argument("unknown output format '" + f + "'");
    if (target != "correct" && target != "incorrect") throw std::invalid_argument("target must be correct or incorrect");
}

fs::path resolve_checkpoint(const std::string& explicit_path) {
    if (!explicit_path.empty()) return explicit_path;
    if (const char* env = std::getenv(kCheckpointEnv); env && *env) return env;
    return kDefaultCheckpoint;
}

// ---------------------------------------------------------------------------------------

OutputSet::OutputSet(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::exists(dir_)) {
        fs::create_directories(dir_);
        created_dir_ = true;
    }
}

OutputSet::~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
}

fs::path OutputSet::reserve(const std::string& name) {
    files_.push_back(dir_ / name);
    return files_.back();
}

void OutputSet::write(const std::string& name, const std::string& content) {
    const fs::path path = reserve(name);
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out.flush()) throw std::runtime_error("cannot write " + path.string());
}

// ---------------------------------------------------------------------------------------

namespace {

struct Session {
    CheckpointManifest manifest;
    BpeTokenizer tokenizer;

    explicit Session(const ExperimentConfig& c)
        : manifest(CheckpointManifest::from_path(resolve_checkpoint(c.checkpoint))), tokenizer(load_tokenizer()) {}

    const WeightsF& weights() {
        if (!weights_) weights_ = load_model(manifest);
        return *weights_;
    }

    DatasetOptions dataset_options(const ExperimentConfig& c) const {
        return DatasetOptions{c.template_index, c.corruption, c.prepend_eot};
    }

    SyllogismDataset dataset(const ExperimentConfig& c, SyllogismKind kind) const {
        DatasetOptions opts = dataset_options(c);
        if (kind != c.kind) opts.template_index = 0;
        return generate(tokenizer, kind, BinaryPair::parse(tokenizer, c.pair), c.n, c.seed, opts);
    }

private:
    BpeTokenizer load_tokenizer() const {
        if (!manifest.vocab_path || !manifest.merges_path)
            throw std::runtime_error("checkpoint has no vocab.json / merges.txt; text prompts need a tokenizer");
        return BpeTokenizer::load(*manifest.vocab_path, *manifest.merges_path);
    }

    std::optional<WeightsF> weights_;
};

void write_config(OutputSet& files, const ExperimentConfig& c) {
    ExperimentConfig resolved = c;
    resolved.checkpoint = resolve_checkpoint(c.checkpoint).string();
    files.write("config.json", resolved.to_json().dump(2) + "\n");
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

void print_summary(std::ostream& out, const std::string& label, const EvalSummary& s) {
    out << label << ": ALD " << fixed(s.ald) << " (sd " << fixed(s.stddev) << ", n " << s.n << ")  positive "
        << fixed(s.positive.ald) << " (n " << s.positive.n << ")  negative " << fixed(s.negative.ald) << " (n "
        << s.negative.n << ")  odds " << fixed(s.odds_ratio) << '\n';
}

template <typename Fn>
void run_command(const ExperimentConfig& c, Fn&& body) {
    c.validate();
    OutputSet files(c.out_dir);
    body(files);
    write_config(files, c);
    files.commit();
}

void emit_effects(OutputSet& files, const ExperimentConfig& c, const EffectMatrix& m, const ModelConfig& model,
                  const std::string& stem, const std::string& title) {
    files.write(stem + ".csv", effects_csv(m));
    const bool heads = std::any_of(m.entries.begin(), m.entries.end(), [](const auto& e) { return e.component.is_head(); });
    if (heads) files.write(stem + "_grid.csv", head_grid_csv(m, model));
    if (c.wants("json")) {
        json j{{"mode", to_string(m.mode)}, {"source", to_string(m.source)}, {"ald_clean", m.ald_clean}};
        if (m.receiver) j["receiver"] = m.receiver->label();
        json entries = json::array();
        for (const auto& e : m.entries)
            entries.push_back({{"component", e.component.label()}, {"delta", e.delta}, {"ald_patched", e.ald_patched}});
        j["entries"] = entries;
        files.write(stem + ".json", j.dump(2) + "\n");
    }
    if (c.wants("svg")) files.write(stem + ".svg", heatmap_svg(m, model, title));
}

void print_ranked(std::ostream& out, const EffectMatrix& m, std::size_t k) {
    out << "clean ALD " << fixed(m.ald_clean) << "; most negative:";
    for (const auto& id : m.most_negative(k)) out << ' ' << id.label() << " (" << fixed(m.at(id).delta, 3) << ')';
    out << '\n';
}

} // namespace

void cmd_gen(const ExperimentConfig& c, std::ostream& out) {
    run_command(c, [&](OutputSet& files) {
        Session s(c);
        const auto ds = s.dataset(c, c.kind);
        write_jsonl(ds, files.reserve("dataset.jsonl"));
        out << "wrote " << ds.size() << ' ' << short_name(ds.kind) << " instances (template " << ds.template_index
            << ", pair " << ds.pair.label() << ", " << ds.seq_len() << " tokens each)\n";
    });
}

void cmd_eval(const ExperimentConfig& c, std::ostream& out) {
    run_command(c, [&](OutputSet& files) {
        Session s(c);
        const auto ds = s.dataset(c, c.kind);
        const auto summary = eval_model(s.weights(), ds, c.jobs);
        files.write("instances.csv", instances_csv(ds, summary));
        json j = eval_json(summary);
        j["kind"] = short_name(ds.kind);
        j["template"] = ds.template_index;
        j["pair"] = ds.pair.label();
        files.write("summary.json", j.dump(2) + "\n");
        print_summary(out, std::string(short_name(ds.kind)), summary);
    });
}

void cmd_patch(const ExperimentConfig& c, std::ostream& out) {
    run_command(c, [&](OutputSet& files) {
        Session s(c);
        const auto& w = s.weights();
        const auto ds = s.dataset(c, c.kind);
        std::optional<MeanCache> mean;
        if (c.source == PatchSource::DatasetMean) mean = MeanCache::compute(w, ds, c.jobs);
        const PatchContext ctx{w, ds, c.source, mean ? &*mean : nullptr, c.jobs};
        const std::string kind(short_name(ds.kind));

        if (c.mode == "heads-direct") {
            const auto m = direct_effect_sweep(ctx, all_heads(w.config));
            emit_effects(files, c, m, w.config, "heads_direct", "Head direct effect (" + kind + ")");
            print_ranked(out, m, 5);
        } else if (c.mode == "all-direct") {
            auto comps = all_heads(w.config);
            for (const auto& m : all_mlps(w.config)) comps.push_back(m);
            const auto m = direct_effect_sweep(ctx, comps);
            emit_effects(files, c, m, w.config, "all_direct", "Direct effect (" + kind + ")");
            print_ranked(out, m, 5);
        } else if (c.mode == "mlps-direct") {
            const auto m = mlp_effect_modes(ctx, c.with_attention);
            const std::string stem = c.with_attention ? "mlps_with_attn" : "mlps_without_attn";
            emit_effects(files, c, m, w.config, stem, "MLP effect (" + kind + ")");
            print_ranked(out, m, 3);
        } else if (c.mode == "qkv") {
            if (c.receiver.empty()) throw std::invalid_argument("qkv mode needs --receiver");
            const auto receiver = ComponentId::parse(c.receiver);
            receiver.check(w.config);
            const auto sweeps = head_input_sweep(ctx, upstream_components(w.config, receiver), receiver);
            for (const auto& m : sweeps) {
                const std::string input(to_string(m.mode));
                emit_effects(files, c, m, w.config, "qkv_" + input, input + " input of " + receiver.label());
                out << input << ": ";
                print_ranked(out, m, 5);
            }
        } else {
            throw std::invalid_argument("unknown patch mode '" + c.mode + "' (heads-direct, mlps-direct, all-direct, qkv)");
        }
    });
}

void cmd_circuit(const ExperimentConfig& c, std::ostream& out) {
    run_command(c, [&](OutputSet& files) {
        Session s(c);
        const auto& w = s.weights();
        const auto circuit = CircuitSpec::resolve(c.circuit, w.config);
        circuit.check(w.config);

        std::vector<PairSpec> pairs;
        if (c.pairs.empty()) {
            pairs = builtin_pairs();
        } else {
            for (const auto& p : c.pairs) {
                const auto slash = p.find('/');
                if (slash == std::string::npos) throw std::invalid_argument("pair '" + p + "' is not of the form a/b");
                pairs.push_back({p, p.substr(0, slash), p.substr(slash + 1)});
            }
        }
        TransferOptions opts{c.n, c.seed, s.dataset_options(c), c.jobs};
        const auto table = transfer_matrix(w, s.tokenizer, circuit, c.kind, pairs, opts);
        files.write("transfer.csv", transfer_csv(table));
        if (c.wants("json")) files.write("transfer.json", transfer_json(table).dump(2) + "\n");
        files.write("circuit.json", circuit.to_json_text() + "\n");

        out << circuit.name << " on " << short_name(c.kind) << '\n';
        for (const auto& col : table.columns) {
            out << "  " << std::left << std::setw(20) << col.column;
            if (!col.error.empty())
                out << "unusable: " << col.error << '\n';
            else
                out << "model " << fixed(*col.model_ald) << "  circuit " << fixed(*col.circuit_ald) << "  faithfulness "
                    << fixed(faithfulness(*col.model_ald, *col.circuit_ald)) << '\n';
        }
    });
}

namespace {

ComponentId require_head_arg(const ExperimentConfig& c) {
    if (c.head.empty()) throw std::invalid_argument("analysis '" + c.analysis + "' needs --head");
    return ComponentId::parse(c.head);
}

Tokens prompt_tokens(Session& s, const ExperimentConfig& c) {
    if (!c.prompt.empty()) return s.tokenizer.encode(c.prompt);
    ExperimentConfig one = c;
    one.n = 1;
    return s.dataset(one, c.kind).instances.front().clean_tokens;
}

void print_slate(std::ostream& out, const TokenLogitSlate& slate, const BpeTokenizer& tok) {
    out << slate.stage << " top:";
    for (const auto& t : slate.top) out << " '" << display_token(tok, t.token) << "'";
    out << "\n" << slate.stage << " bottom:";
    for (const auto& t : slate.bottom) out << " '" << display_token(tok, t.token) << "'";
    out << '\n';
}

void emit_slate(OutputSet& files, const ExperimentConfig& c, const TokenLogitSlate& slate, const BpeTokenizer& tok) {
    files.write("slate_" + slate.stage + ".csv", slate_csv(slate, tok));
    if (c.wants("json")) files.write("slate_" + slate.stage + ".json", slate_json(slate, tok).dump(2) + "\n");
}

} // namespace

void cmd_analyze(const ExperimentConfig& c, std::ostream& out) {
    run_command(c, [&](OutputSet& files) {
        Session s(c);
        const auto& w = s.weights();
        const std::size_t k = static_cast<std::size_t>(c.k);

        if (c.analysis == "qk") {
            const auto head = require_head_arg(c);
            const auto matrix = qk_prompt_matrix(w, head, prompt_tokens(s, c), &s.tokenizer);
            const auto pairs = top_qk_pairs(matrix, std::min(k, distinct_pair_count(matrix)));
            files.write("qk_matrix.csv", qk_matrix_csv(matrix));
            files.write("qk_pairs.csv", qk_pairs_csv(pairs));
            if (c.wants("json")) files.write("qk_pairs.json", qk_pairs_json(matrix, pairs).dump(2) + "\n");
            for (const auto& p : pairs)
                out << fixed(p.score) << ": ('" << p.query_label << "', '" << p.key_label << "')\n";
        } else if (c.analysis == "ov" || c.analysis == "mlp-trace") {
            const auto head = require_head_arg(c);
            const TokenId src = s.tokenizer.single_token_id(c.source_token);
            const auto slate = ov_extended_logits(w, head, src, k);
            emit_slate(files, c, slate, s.tokenizer);
            print_slate(out, slate, s.tokenizer);
            if (c.analysis == "mlp-trace") {
                const int layer = c.mlp >= 0 ? c.mlp : head.layer;
                const auto traced = trace_ov_through_mlp(w, head, layer, src, k);
                emit_slate(files, c, traced, s.tokenizer);
                print_slate(out, traced, s.tokenizer);
            }
        } else if (c.analysis == "lens") {
            const auto target = require_head_arg(c);
            const Tokens tokens = prompt_tokens(s, c);
            const auto run = forward_with_cache(w, std::span<const TokenId>(tokens));
            const auto top = logit_lens(w, run.cache, -1, target, k);
            json list = json::array();
            for (const auto& t : top) {
                list.push_back({{"token", t.token}, {"text", display_token(s.tokenizer, t.token)}, {"logit", t.logit}});
                out << "'" << display_token(s.tokenizer, t.token) << "' " << fixed(t.logit) << '\n';
            }
            files.write("lens.json", json{{"component", target.label()}, {"top", list}}.dump(2) + "\n");
        } else if (c.analysis == "scatter") {
            const auto head = require_head_arg(c);
            const auto ds = s.dataset(c, c.kind);
            const auto target = c.target == "correct" ? ScatterTarget::Correct : ScatterTarget::Incorrect;
            const auto sc = head_contribution_scatter(w, head, ds, target, c.jobs);
            files.write("scatter.csv", scatter_csv(sc));
            if (c.wants("json"))
                files.write("scatter.json", json{{"head", head.label()},
                                                 {"target", c.target},
                                                 {"r", sc.correlation.r},
                                                 {"degenerate", sc.correlation.degenerate}}
                                                    .dump(2) + "\n");
            out << head.label() << " r = " << fixed(sc.correlation.r) << (sc.correlation.degenerate ? " (degenerate)" : "")
                << '\n';
        } else if (c.analysis == "classify") {
            const auto ss = s.dataset(c, SyllogismKind::Simple);
            const auto os = s.dataset(c, SyllogismKind::Opposite);
            const auto cs = s.dataset(c, SyllogismKind::Complex);
            ClassifyOptions opts;
            opts.k = k;
            const auto heads = classify_heads(w, ss, os, cs, opts, c.jobs);
            files.write("classify.json", classify_json(heads, opts).dump(2) + "\n");
            for (const auto& h : heads)
                if (h.label != HeadLabel::Unclassified) out << h.head.label() << ' ' << to_string(h.label) << '\n';
        } else if (c.analysis == "diagnostics") {
            const Tokens probe = c.prompt.empty()
                                     ? repeated_random_probe(25, 1000, 20000, c.seed, s.tokenizer.eot_id())
                                     : s.tokenizer.encode(c.prompt);
            const auto scores = attention_diagnostics_all(w, probe);
            files.write("diagnostics.csv", diagnostics_csv(scores));
            std::vector<std::pair<double, ComponentId>> ranked;
            for (const auto& [head, sc] : scores) ranked.emplace_back(sc.induction, head);
            std::sort(ranked.rbegin(), ranked.rend());
            out << "top induction:";
            for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked.size()); ++i)
                out << ' ' << ranked[i].second.label() << " (" << fixed(ranked[i].first, 3) << ')';
            out << '\n';
        } else {
            throw std::invalid_argument("unknown analysis '" + c.analysis +
                                        "' (qk, ov, mlp-trace, lens, scatter, classify, diagnostics)");
        }
    });
}

void run_experiment(const ExperimentConfig& c, std::ostream& out) {
    if (c.command == "gen") return cmd_gen(c, out);
    if (c.command == "eval") return cmd_eval(c, out);
    if (c.command == "patch") return cmd_patch(c, out);
    if (c.command == "circuit") return cmd_circuit(c, out);
    if (c.command == "analyze") return cmd_analyze(c, out);
    throw std::invalid_argument("unknown command '" + c.command + "'");
}

} // namespace syllo
