#include "syllo/report.hpp"

#include "syllo/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace syllo {

using nlohmann::json;

std::string csv_field(const std::string& text) {
    if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::string format_number(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

namespace {

std::string header(const char* schema) { return std::string("# schema: ") + schema + "\n"; }

} // namespace

std::string effects_csv(const EffectMatrix& m) {
    std::ostringstream out;
    out << header(schema::kEffects) << "component,kind,mode,source,delta,ald_patched\n";
    for (const auto& e : m.entries)
        out << e.component.label() << ',' << to_string(e.component.kind) << ',' << to_string(m.mode) << ','
            << to_string(m.source) << ',' << format_number(e.delta) << ',' << format_number(e.ald_patched) << '\n';
    return out.str();
}

std::string head_grid_csv(const EffectMatrix& m, const ModelConfig& config) {
    std::vector<std::vector<std::string>> grid(config.n_layers, std::vector<std::string>(config.n_heads));
    for (const auto& e : m.entries)
        if (e.component.is_head()) grid.at(e.component.layer).at(*e.component.head) = format_number(e.delta);
    std::ostringstream out;
    out << header(schema::kHeadGrid) << "layer";
    for (int h = 0; h < config.n_heads; ++h) out << ",h" << h;
    out << '\n';
    for (int l = 0; l < config.n_layers; ++l) {
        out << l;
        for (const auto& cell : grid[l]) out << ',' << cell;
        out << '\n';
    }
    return out.str();
}

namespace {

// Blue for negative, red for positive, white at zero.
std::string diverging_color(double v, double bound) {
    const double t = bound > 0 ? std::clamp(v / bound, -1.0, 1.0) : 0.0;
    const int fade = static_cast<int>(std::lround(255 * (1 - std::abs(t))));
    char buf[8];
    if (t < 0)
        std::snprintf(buf, sizeof buf, "#%02x%02xff", fade, fade);
    else
        std::snprintf(buf, sizeof buf, "#ff%02x%02x", fade, fade);
    return buf;
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

} // namespace

std::string heatmap_svg(const EffectMatrix& m, const ModelConfig& config, const std::string& title) {
    constexpr int cell = 32, left = 60, top = 50;
    const bool has_mlp = std::any_of(m.entries.begin(), m.entries.end(), [](const auto& e) { return e.component.is_mlp(); });
    const int cols = config.n_heads + (has_mlp ? 1 : 0);
    double lo = 0.0, hi = 0.0;
    for (const auto& e : m.entries) {
        lo = std::min(lo, e.delta);
        hi = std::max(hi, e.delta);
    }
    const double bound = std::max(std::abs(lo), std::abs(hi));
    const int width = left + cols * cell + 20;
    const int height = top + config.n_layers * cell + 60;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << escape_xml(title) << "</text>\n";
    for (int h = 0; h < config.n_heads; ++h)
        out << "<text x=\"" << left + h * cell + cell / 2 << "\" y=\"" << top - 6 << "\" text-anchor=\"middle\">" << h
            << "</text>\n";
    if (has_mlp)
        out << "<text x=\"" << left + config.n_heads * cell + cell / 2 << "\" y=\"" << top - 6
            << "\" text-anchor=\"middle\">MLP</text>\n";
    for (int l = 0; l < config.n_layers; ++l)
        out << "<text x=\"" << left - 8 << "\" y=\"" << top + l * cell + cell / 2 + 4 << "\" text-anchor=\"end\">" << l
            << "</text>\n";
    for (const auto& e : m.entries) {
        int col;
        if (e.component.is_head())
            col = *e.component.head;
        else if (e.component.is_mlp())
            col = config.n_heads;
        else
            continue;
        out << "<rect x=\"" << left + col * cell << "\" y=\"" << top + e.component.layer * cell << "\" width=\"" << cell
            << "\" height=\"" << cell << "\" fill=\"" << diverging_color(e.delta, bound) << "\" stroke=\"#ccc\">"
            << "<title>" << e.component.label() << ": " << format_number(e.delta) << "</title></rect>\n";
    }
    out << "<text x=\"" << left << "\" y=\"" << top + config.n_layers * cell + 24 << "\">min "
        << format_number(lo) << "   max " << format_number(hi) << "   (scale symmetric about 0)</text>\n";
    out << "</svg>\n";
    return out.str();
}

std::string instances_csv(const SyllogismDataset& dataset, const EvalSummary& summary) {
    std::ostringstream out;
    out << header(schema::kInstances) << "instance,gold,correct,incorrect,ld\n";
    for (int i = 0; i < dataset.size(); ++i) {
        const auto& inst = dataset.instances[i];
        out << i << ',' << csv_field(dataset.pair.word(inst.gold_positive)) << ',' << inst.correct_id << ','
            << inst.incorrect_id << ',' << format_number(summary.instance_lds.at(i)) << '\n';
    }
    return out.str();
}

json eval_json(const EvalSummary& s) {
    return json{{"ald", s.ald},
                {"stddev", s.stddev},
                {"n", s.n},
                {"odds_ratio", s.odds_ratio},
                {"positive", {{"ald", s.positive.ald}, {"n", s.positive.n}}},
                {"negative", {{"ald", s.negative.ald}, {"n", s.negative.n}}}};
}

std::string transfer_csv(const TransferTable& table) {
    std::ostringstream out;
    out << header(schema::kTransfer) << "row";
    for (const auto& c : table.columns) out << ',' << csv_field(c.column);
    out << '\n';
    auto row = [&](const std::string& name, auto&& value) {
        out << csv_field(name);
        for (const auto& c : table.columns) out << ',' << (c.error.empty() ? value(c) : std::string("unusable"));
        out << '\n';
    };
    row("model", [](const TransferColumn& c) { return format_number(*c.model_ald); });
    row(table.circuit, [](const TransferColumn& c) { return format_number(*c.circuit_ald); });
    row("faithfulness", [](const TransferColumn& c) { return format_number(faithfulness(*c.model_ald, *c.circuit_ald)); });
    return out.str();
}

json transfer_json(const TransferTable& table) {
    json cols = json::array();
    for (const auto& c : table.columns) {
        json j{{"column", c.column}};
        if (c.error.empty()) {
            j["model_ald"] = *c.model_ald;
            j["circuit_ald"] = *c.circuit_ald;
            j["faithfulness"] = faithfulness(*c.model_ald, *c.circuit_ald);
        } else {
            j["error"] = c.error;
        }
        cols.push_back(std::move(j));
    }
    return json{{"circuit", table.circuit}, {"kind", short_name(table.kind)}, {"columns", cols}};
}

std::string qk_matrix_csv(const QKScoreMatrix& m) {
    auto label = [&](int i) { return m.labels.empty() ? std::to_string(m.tokens[i]) : m.labels[i]; };
    std::ostringstream out;
    out << header(schema::kQkMatrix) << "query\\key";
    for (int j = 0; j < m.normalized.cols(); ++j) out << ',' << csv_field(label(j));
    out << '\n';
    for (int i = 0; i < m.normalized.rows(); ++i) {
        out << csv_field(label(i));
        for (int j = 0; j < m.normalized.cols(); ++j) out << ',' << format_number(m.normalized(i, j));
        out << '\n';
    }
    return out.str();
}

std::string qk_pairs_csv(const std::vector<QkPair>& pairs) {
    std::ostringstream out;
    out << header(schema::kQkPairs) << "rank,query,key,query_pos,key_pos,score\n";
    for (std::size_t r = 0; r < pairs.size(); ++r) {
        const auto& p = pairs[r];
        out << r + 1 << ',' << csv_field(p.query_label) << ',' << csv_field(p.key_label) << ',' << p.query_pos << ','
            << p.key_pos << ',' << format_number(p.score) << '\n';
    }
    return out.str();
}

json qk_pairs_json(const QKScoreMatrix& m, const std::vector<QkPair>& pairs) {
    json list = json::array();
    for (const auto& p : pairs)
        list.push_back({{"query", p.query_label}, {"key", p.key_label}, {"query_pos", p.query_pos},
                        {"key_pos", p.key_pos}, {"score", p.score}});
    return json{{"head", m.head.label()}, {"tokens", m.labels}, {"pairs", list}};
}

std::string slate_csv(const TokenLogitSlate& slate, const BpeTokenizer& tokenizer) {
    std::ostringstream out;
    out << header(schema::kSlate) << "list,rank,token,text,logit\n";
    auto emit = [&](const char* name, const std::vector<TokenLogit>& list) {
        for (std::size_t r = 0; r < list.size(); ++r)
            out << name << ',' << r + 1 << ',' << list[r].token << ','
                << csv_field(display_token(tokenizer, list[r].token)) << ',' << format_number(list[r].logit) << '\n';
    };
    emit("top", slate.top);
    emit("bottom", slate.bottom);
    return out.str();
}

json slate_json(const TokenLogitSlate& slate, const BpeTokenizer& tokenizer) {
    auto list = [&](const std::vector<TokenLogit>& v) {
        json a = json::array();
        for (const auto& t : v) a.push_back({{"token", t.token}, {"text", display_token(tokenizer, t.token)}, {"logit", t.logit}});
        return a;
    };
    return json{{"source", display_token(tokenizer, slate.source)},
                {"source_id", slate.source},
                {"stage", slate.stage},
                {"top", list(slate.top)},
                {"bottom", list(slate.bottom)}};
}

std::string scatter_csv(const ScatterResult& s) {
    std::ostringstream out;
    out << header(schema::kScatter) << "instance,attn_prob,contribution\n";
    for (std::size_t i = 0; i < s.attention.size(); ++i)
        out << i << ',' << format_number(s.attention[i]) << ',' << format_number(s.contribution[i]) << '\n';
    return out.str();
}

json classify_json(const std::vector<HeadClassification>& heads, const ClassifyOptions& options) {
    json list = json::array();
    for (const auto& h : heads) {
        const auto& e = h.evidence;
        list.push_back({{"head", h.head.label()},
                        {"label", to_string(h.label)},
                        {"evidence",
                         {{"attn_ss", e.attn_ss},
                          {"attn_os", e.attn_os},
                          {"attn_cs", e.attn_cs},
                          {"contribution_cs", e.contribution_cs},
                          {"r_cs", e.r_cs},
                          {"r_degenerate", e.r_degenerate},
                          {"ov_in_top", e.ov_in_top},
                          {"ov_in_bottom", e.ov_in_bottom}}}});
    }
    return json{{"constants", {{"theta_attn", options.theta_attn}, {"theta_r", options.theta_r}, {"k", options.k}}},
                {"heads", list}};
}

std::string diagnostics_csv(const std::map<ComponentId, AttentionScores>& scores) {
    std::ostringstream out;
    out << header(schema::kDiagnostics) << "head,prev_token,duplicate,induction\n";
    for (const auto& [head, s] : scores)
        out << head.label() << ',' << format_number(s.prev_token) << ',' << format_number(s.duplicate) << ','
            << format_number(s.induction) << '\n';
    return out.str();
}

} // namespace syllo
