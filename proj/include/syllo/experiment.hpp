#pragma once

#include "syllo/dataset.hpp"
#include "syllo/patching.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace syllo {

// Environment variable that overrides the default checkpoint location.
inline constexpr const char* kCheckpointEnv = "SYLLO_CHECKPOINT";
inline constexpr const char* kDefaultCheckpoint = "models/gpt2";
inline constexpr int kDefaultN = 500;
inline constexpr int kFastN = 50;

// Everything a command needs; written as config.json beside its outputs and accepted back
// by `syllo rerun`.
struct ExperimentConfig {
    std::string command;        // gen, eval, patch, circuit, analyze
    std::string checkpoint;     // directory or manifest file
    SyllogismKind kind = SyllogismKind::Simple;
    int template_index = 0;     // 0 = default for the kind
    std::string pair = "true/false";
    int n = kDefaultN;
    std::uint64_t seed = 0;
    PatchSource source = PatchSource::DatasetMean;
    Corruption corruption = Corruption::FlipTruthValues;
    bool prepend_eot = false;
    std::string circuit = "c_ss"; // builtin name or JSON file
    std::filesystem::path out_dir = "out";
    std::set<std::string> formats{"csv", "json"};
    int jobs = 0;               // 0 = all cores

    // patch
    std::string mode = "heads-direct"; // heads-direct, mlps-direct, all-direct, qkv
    bool with_attention = true;
    std::string receiver;              // qkv receiver head
    // circuit
    std::vector<std::string> pairs;    // empty = the five builtin pairs
    // analyze
    std::string analysis;              // qk, ov, mlp-trace, lens, scatter, classify, diagnostics
    std::string head;
    int mlp = -1;
    std::string source_token = " true";
    std::string prompt;                // empty = first dataset prompt
    std::string target = "incorrect";  // scatter target: correct / incorrect
    int k = 10;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);

    // Throws std::invalid_argument on a value no command could use.
    void validate() const;
    bool wants(const std::string& format) const { return formats.count(format) != 0; }
};

// Explicit path, else $SYLLO_CHECKPOINT, else models/gpt2.
std::filesystem::path resolve_checkpoint(const std::string& explicit_path);

// Files written by one command. Unless commit() is called, the destructor deletes them.
class OutputSet {
public:
    explicit OutputSet(std::filesystem::path dir);
    ~OutputSet();
    OutputSet(const OutputSet&) = delete;
    OutputSet& operator=(const OutputSet&) = delete;

    void write(const std::string& name, const std::string& content);
    // Register a file some other writer will create; returns its full path.
    std::filesystem::path reserve(const std::string& name);
    void commit() { committed_ = true; }
    const std::vector<std::filesystem::path>& files() const { return files_; }

private:
    std::filesystem::path dir_;
    std::vector<std::filesystem::path> files_;
    bool created_dir_ = false;
    bool committed_ = false;
};

// Each returns normally only when every output was written; errors propagate as exceptions
// after partial outputs are removed. Human-readable results go to `out`.
void cmd_gen(const ExperimentConfig& config, std::ostream& out);
void cmd_eval(const ExperimentConfig& config, std::ostream& out);
void cmd_patch(const ExperimentConfig& config, std::ostream& out);
void cmd_circuit(const ExperimentConfig& config, std::ostream& out);
void cmd_analyze(const ExperimentConfig& config, std::ostream& out);

// Dispatch on config.command.
void run_experiment(const ExperimentConfig& config, std::ostream& out);

} // namespace syllo
