#pragma once

#include "syllo/tensor.hpp"

#include <functional>
#include <vector>

namespace syllo {

struct SyllogismDataset;
struct SyllogismInstance;

struct LogitDiff {
    double value = 0.0;
    TokenId correct_id = -1;
    TokenId incorrect_id = -1;
};

struct ClassSummary {
    double ald = 0.0;
    int n = 0;
};

struct EvalSummary {
    double ald = 0.0;
    double stddev = 0.0; // sample standard deviation of instance LDs
    int n = 0;
    ClassSummary positive; // instances whose gold answer is the pair's positive word
    ClassSummary negative;
    double odds_ratio = 1.0; // exp(ald)
    std::vector<double> instance_lds;
};

// logit(correct) - logit(incorrect) on the last row of `logits` (positions x n_vocab, or a
// single row). Throws std::invalid_argument when the ids are equal or out of range.
LogitDiff logit_diff(const MatF& logits, TokenId correct_id, TokenId incorrect_id);
LogitDiff logit_diff(const VecF& final_logits, TokenId correct_id, TokenId incorrect_id);

// Produces the final-position logits for one instance under some model or circuit.
using InstanceRunner = std::function<VecF(const SyllogismInstance&)>;

// Mean LD over the dataset, split by gold-answer class. Runs instances on `jobs` threads.
EvalSummary average_logit_diff(const InstanceRunner& runner, const SyllogismDataset& dataset, int jobs = 1);

// Summary statistics of precomputed instance LDs; gold_positive flags pick the class.
EvalSummary summarize(std::vector<double> lds, const std::vector<bool>& gold_positive);

// |ALD(model) - ALD(circuit)|.
double faithfulness(double ald_model, double ald_circuit);

} // namespace syllo
