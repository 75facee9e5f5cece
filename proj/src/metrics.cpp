#include "syllo/metrics.hpp"

#include "syllo/dataset.hpp"
#include "syllo/parallel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace syllo {

LogitDiff logit_diff(const VecF& final_logits, TokenId correct_id, TokenId incorrect_id) {
    if (correct_id == incorrect_id) throw std::invalid_argument("logit_diff: correct and incorrect ids are equal");
    const auto n = final_logits.size();
    if (correct_id < 0 || correct_id >= n || incorrect_id < 0 || incorrect_id >= n)
        throw std::invalid_argument("logit_diff: token id out of range");
    return {static_cast<double>(final_logits(correct_id)) - static_cast<double>(final_logits(incorrect_id)),
            correct_id, incorrect_id};
}

LogitDiff logit_diff(const MatF& logits, TokenId correct_id, TokenId incorrect_id) {
    if (logits.rows() == 0) throw std::invalid_argument("logit_diff: empty logits");
    return logit_diff(VecF(logits.row(logits.rows() - 1)), correct_id, incorrect_id);
}

EvalSummary summarize(std::vector<double> lds, const std::vector<bool>& gold_positive) {
    if (lds.empty()) throw std::invalid_argument("summarize: no instances");
    EvalSummary s;
    s.n = static_cast<int>(lds.size());
    double sum = 0.0;
    for (double v : lds) sum += v;
    s.ald = sum / s.n;
    double ss = 0.0;
    for (double v : lds) ss += (v - s.ald) * (v - s.ald);
    s.stddev = s.n > 1 ? std::sqrt(ss / (s.n - 1)) : 0.0;
    for (int i = 0; i < s.n; ++i) {
        auto& cls = gold_positive.at(i) ? s.positive : s.negative;
        cls.ald += lds[i];
        ++cls.n;
    }
    if (s.positive.n) s.positive.ald /= s.positive.n;
    if (s.negative.n) s.negative.ald /= s.negative.n;
    s.odds_ratio = std::exp(s.ald);
    s.instance_lds = std::move(lds);
    return s;
}

EvalSummary average_logit_diff(const InstanceRunner& runner, const SyllogismDataset& dataset, int jobs) {
    if (dataset.instances.empty()) throw std::invalid_argument("average_logit_diff: empty dataset");
    const int n = dataset.size();
    std::vector<double> lds(n);
    std::vector<bool> gold(n);
    for (int i = 0; i < n; ++i) gold[i] = dataset.instances[i].gold_positive;
    parallel_for(n, jobs, [&](int i) {
        const auto& inst = dataset.instances[i];
        lds[i] = logit_diff(runner(inst), inst.correct_id, inst.incorrect_id).value;
    });
    return summarize(std::move(lds), gold);
}

double faithfulness(double ald_model, double ald_circuit) { return std::abs(ald_model - ald_circuit); }

} // namespace syllo
