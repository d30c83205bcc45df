#pragma once

#include <array>
#include <string>
#include <vector>

#include "spinevox/error.hpp"

namespace spinevox {

// One per-stack probability from an external classifier. Model A is the raw
// slice-stack network, model B the MIP-stack network.
struct PredictionRow {
    std::string patient_id;
    int vertebra = 0;     // 1..7
    int stack_index = 0;  // 0..14
    char model = 'A';     // 'A' or 'B'
    double prob = 0.0;    // [0,1]
};

struct PredictionTable {
    std::vector<PredictionRow> rows;

    // Enforces key uniqueness and field ranges.
    void validate() const;
    std::vector<std::string> patients() const;

    // The 15 stack probabilities for (patient, vertebra, model), ordered by
    // stack index. Throws Errc::completeness when any stack is missing.
    std::vector<double> stack_probs(const std::string& patient, int vertebra, char model) const;
};

// CSV with header: patient_id,vertebra,stack_index,model,prob
PredictionTable load_predictions_csv(const std::string& path);

// Fractured iff strictly more than half the probabilities exceed thr.
bool majority_vote(const std::vector<double>& probs, double thr = 0.5);

// Element-wise weight*A + (1-weight)*B.
std::vector<double> score_fuse(const std::vector<double>& probs_a,
                               const std::vector<double>& probs_b, double weight = 0.5);

bool patient_if_any(const std::array<bool, 7>& vertebra_decisions);

struct AdaptiveParams {
    double thr_low = 0.4;
    double thr_high = 0.6;
    double d_ref = 0.2;

    void validate() const;
};

struct AdaptiveDecision {
    bool fractured = false;
    double score = 0.0;      // highest unified vertebra score
    double threshold = 0.0;  // the applied adaptive threshold
    double disagreement = 0.0;
};

// Patient-level rule: unify the per-vertebra stack means of both models,
// take the highest unified score, and compare it against a threshold that
// ramps from thr_low (models agree) to thr_high (models disagree by d_ref
// or more).
AdaptiveDecision patient_adaptive(const PredictionTable& table, const std::string& patient,
                                  const AdaptiveParams& params = {});

// Weighted binary cross-entropy, positive samples scaled by pos_weight and
// the sum normalized by the total weight. Probabilities are clamped to
// [1e-7, 1 - 1e-7].
double weighted_bce(const std::vector<int>& labels, const std::vector<double>& probs,
                    double pos_weight = 2.0);

struct PatientDecision {
    std::string patient_id;
    std::array<bool, 7> vertebra_decisions{};
    bool if_any = false;
    AdaptiveDecision adaptive;
};

// Full per-patient aggregation: fuse the two models' stack probabilities,
// majority-vote each vertebra, then derive both patient-level rules.
PatientDecision aggregate_patient(const PredictionTable& table, const std::string& patient,
                                  double vote_thr = 0.5, double fuse_weight = 0.5,
                                  const AdaptiveParams& params = {});

void save_decisions_jsonl(const std::vector<PatientDecision>& decisions,
                          const std::string& path);

}  // namespace spinevox
