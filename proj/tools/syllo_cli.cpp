#include "syllo/experiment.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>

namespace {

struct Raw {
    std::string kind = "ss";
    std::string source = "mean";
    std::string corruption = "flip";
    std::vector<std::string> formats;
    bool fast = false;
};

void add_common(CLI::App& cmd, syllo::ExperimentConfig& c, Raw& raw) {
    cmd.add_option("--checkpoint", c.checkpoint, "Checkpoint directory or manifest (default: $SYLLO_CHECKPOINT, then models/gpt2)");
    cmd.add_option("--kind", raw.kind, "Syllogism kind: ss, os, cs, cos")->capture_default_str();
    cmd.add_option("--template", c.template_index, "Template variant (0 = default for the kind)");
    cmd.add_option("--pair", c.pair, "Answer pair, e.g. true/false")->capture_default_str();
    cmd.add_option("--n", c.n, "Number of prompts")->capture_default_str();
    cmd.add_flag("--fast", raw.fast, "Use 50 prompts unless --n is given");
    cmd.add_option("--seed", c.seed, "Dataset seed")->capture_default_str();
    cmd.add_option("--corruption", raw.corruption, "flip or resample")->capture_default_str();
    cmd.add_flag("--prepend-eot", c.prepend_eot, "Start prompts with <|endoftext|>");
    cmd.add_option("--out", c.out_dir, "Output directory")->capture_default_str();
    cmd.add_option("--format", raw.formats, "Output formats: csv, json, svg (repeatable)");
    cmd.add_option("--jobs", c.jobs, "Worker threads (0 = all cores)")->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Syllogism circuit analysis for GPT-2 small"};
    app.require_subcommand(1);

    syllo::ExperimentConfig c;
    Raw raw;
    std::string rerun_path;

    auto* gen = app.add_subcommand("gen", "Generate a syllogism dataset as JSON lines");
    auto* eval = app.add_subcommand("eval", "Average logit difference of the full model");
    auto* patch = app.add_subcommand("patch", "Path patching sweeps");
    auto* circuit = app.add_subcommand("circuit", "Circuit faithfulness and transfer across answer pairs");
    auto* analyze = app.add_subcommand("analyze", "Weight-space and attention analyses");
    auto* rerun = app.add_subcommand("rerun", "Repeat a run from its written config.json");
    for (auto* cmd : {gen, eval, patch, circuit, analyze}) add_common(*cmd, c, raw);

    patch->add_option("--mode", c.mode, "heads-direct, mlps-direct, all-direct or qkv")->capture_default_str();
    patch->add_option("--source", raw.source, "Patch source: mean, corrupted or clean")->capture_default_str();
    bool without_attention = false;
    patch->add_flag("--with-attention", c.with_attention, "MLP sweep with downstream heads restored (default)");
    patch->add_flag("--without-attention", without_attention, "MLP sweep with downstream heads recomputed");
    patch->add_option("--receiver", c.receiver, "Receiver head for qkv mode, e.g. 7.2");

    circuit->add_option("--circuit", c.circuit, "c_ss, c_os, c_os_11_10, full, empty, or a JSON file")->capture_default_str();
    circuit->add_option("--pairs", c.pairs, "Pairs to evaluate (default: the five builtin pairs)");

    analyze->add_option("analysis", c.analysis, "qk, ov, mlp-trace, lens, scatter, classify, diagnostics")->required();
    analyze->add_option("--head", c.head, "Head (7.2) or, for lens, any component (MLP10, embed)");
    analyze->add_option("--mlp", c.mlp, "MLP layer for mlp-trace (default: the head's layer)");
    analyze->add_option("--source", c.source_token, "Source token for ov / mlp-trace")->capture_default_str();
    analyze->add_option("--prompt", c.prompt, "Prompt text (default: first generated prompt)");
    analyze->add_option("--target", c.target, "Scatter target: correct or incorrect")->capture_default_str();
    analyze->add_option("--k", c.k, "Slate / pair count")->capture_default_str();

    rerun->add_option("config", rerun_path, "config.json written by an earlier run")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (rerun->parsed()) {
            std::ifstream in(rerun_path);
            c = syllo::ExperimentConfig::from_json(nlohmann::json::parse(in));
        } else {
            c.command = app.get_subcommands().front()->get_name();
            c.kind = syllo::parse_kind(raw.kind);
            c.corruption = syllo::parse_corruption(raw.corruption);
            if (patch->parsed()) c.source = syllo::parse_source(raw.source);
            if (without_attention) c.with_attention = false;
            if (!raw.formats.empty()) c.formats = {raw.formats.begin(), raw.formats.end()};
            auto* active = app.get_subcommands().front();
            if (raw.fast && active->count("--n") == 0) c.n = syllo::kFastN;
        }
        syllo::run_experiment(c, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "syllo " << c.command << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
