#include "spinevox/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace spinevox {

namespace {

constexpr std::size_t kStacks = 15;
constexpr int kVertebrae = 7;
constexpr double kProbEps = 1e-7;

}  // namespace

void PredictionTable::validate() const {
    std::set<std::tuple<std::string, int, int, char>> keys;
    for (const auto& r : rows) {
        if (r.vertebra < 1 || r.vertebra > kVertebrae)
            throw Error(Errc::value, "vertebra outside 1..7 for patient " + r.patient_id);
        if (r.stack_index < 0 || r.stack_index >= static_cast<int>(kStacks))
            throw Error(Errc::value, "stack index outside 0..14 for patient " + r.patient_id);
        if (r.model != 'A' && r.model != 'B')
            throw Error(Errc::value, "model must be A or B for patient " + r.patient_id);
        if (!(r.prob >= 0.0 && r.prob <= 1.0))
            throw Error(Errc::value, "probability outside [0,1] for patient " + r.patient_id);
        if (!keys.emplace(r.patient_id, r.vertebra, r.stack_index, r.model).second)
            throw Error(Errc::value, "duplicate prediction key for patient " + r.patient_id);
    }
}

std::vector<std::string> PredictionTable::patients() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
        if (std::find(out.begin(), out.end(), r.patient_id) == out.end())
            out.push_back(r.patient_id);
    return out;
}

std::vector<double> PredictionTable::stack_probs(const std::string& patient, int vertebra,
                                                 char model) const {
    std::vector<double> probs(kStacks, -1.0);
    for (const auto& r : rows)
        if (r.patient_id == patient && r.vertebra == vertebra && r.model == model)
            probs[static_cast<std::size_t>(r.stack_index)] = r.prob;
    for (std::size_t i = 0; i < kStacks; ++i)
        if (probs[i] < 0.0)
            throw Error(Errc::completeness,
                        "patient " + patient + " vertebra C" + std::to_string(vertebra) +
                            " model " + model + " misses stack " + std::to_string(i));
    return probs;
}

PredictionTable load_predictions_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::io, "cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw Error(Errc::format, "empty predictions file " + path);
    if (line.find("patient_id") == std::string::npos)
        throw Error(Errc::format, "missing header in " + path);

    PredictionTable table;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        std::string field;
        PredictionRow r;
        if (!std::getline(ss, r.patient_id, ',')) throw Error(Errc::format, "bad row: " + line);
        if (!std::getline(ss, field, ',')) throw Error(Errc::format, "bad row: " + line);
        r.vertebra = std::stoi(field);
        if (!std::getline(ss, field, ',')) throw Error(Errc::format, "bad row: " + line);
        r.stack_index = std::stoi(field);
        if (!std::getline(ss, field, ',')) throw Error(Errc::format, "bad row: " + line);
        if (field.size() != 1) throw Error(Errc::format, "bad model field: " + line);
        r.model = field[0];
        if (!std::getline(ss, field)) throw Error(Errc::format, "bad row: " + line);
        r.prob = std::stod(field);
        table.rows.push_back(std::move(r));
    }
    table.validate();
    return table;
}

bool majority_vote(const std::vector<double>& probs, double thr) {
    if (probs.size() != kStacks)
        throw Error(Errc::arity, "majority_vote expects exactly 15 probabilities");
    std::size_t votes = 0;
    for (double p : probs) votes += (p > thr) ? 1 : 0;
    return votes >= (kStacks / 2 + 1);
}

std::vector<double> score_fuse(const std::vector<double>& probs_a,
                               const std::vector<double>& probs_b, double weight) {
    if (probs_a.size() != kStacks || probs_b.size() != kStacks)
        throw Error(Errc::arity, "score_fuse expects two 15-vectors");
    if (!(weight >= 0.0 && weight <= 1.0))
        throw Error(Errc::argument, "weight must lie in [0,1]");
    std::vector<double> out(kStacks);
    for (std::size_t i = 0; i < kStacks; ++i)
        out[i] = weight * probs_a[i] + (1.0 - weight) * probs_b[i];
    return out;
}

bool patient_if_any(const std::array<bool, 7>& vertebra_decisions) {
    for (bool d : vertebra_decisions)
        if (d) return true;
    return false;
}

void AdaptiveParams::validate() const {
    if (!(thr_low > 0.0 && thr_low < 1.0 && thr_high > 0.0 && thr_high < 1.0))
        throw Error(Errc::argument, "thresholds must lie in (0,1)");
    if (thr_low > thr_high) throw Error(Errc::argument, "thr_low must not exceed thr_high");
    if (!(d_ref > 0.0)) throw Error(Errc::argument, "d_ref must be positive");
}

AdaptiveDecision patient_adaptive(const PredictionTable& table, const std::string& patient,
                                  const AdaptiveParams& params) {
    params.validate();
    AdaptiveDecision out;
    double disagreement = 0.0;
    double best = 0.0;
    for (int v = 1; v <= kVertebrae; ++v) {
        const auto pa = table.stack_probs(patient, v, 'A');
        const auto pb = table.stack_probs(patient, v, 'B');
        double ma = 0.0, mb = 0.0;
        for (std::size_t i = 0; i < kStacks; ++i) {
            ma += pa[i];
            mb += pb[i];
        }
        ma /= static_cast<double>(kStacks);
        mb /= static_cast<double>(kStacks);
        best = std::max(best, (ma + mb) / 2.0);
        disagreement += std::abs(ma - mb);
    }
    disagreement /= static_cast<double>(kVertebrae);

    out.score = best;
    out.disagreement = disagreement;
    out.threshold = params.thr_low + (params.thr_high - params.thr_low) *
                                         std::min(disagreement / params.d_ref, 1.0);
    out.fractured = out.score > out.threshold;
    return out;
}

double weighted_bce(const std::vector<int>& labels, const std::vector<double>& probs,
                    double pos_weight) {
    if (labels.empty()) throw Error(Errc::empty_input, "weighted_bce over empty input");
    if (labels.size() != probs.size())
        throw Error(Errc::arity, "labels and probabilities differ in length");
    double acc = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw Error(Errc::value, "labels must be 0 or 1");
        const double y = static_cast<double>(labels[i]);
        const double yhat = std::clamp(probs[i], kProbEps, 1.0 - kProbEps);
        const double w = labels[i] == 1 ? pos_weight : 1.0;
        acc += w * (y * std::log(yhat) + (1.0 - y) * std::log(1.0 - yhat));
        wsum += w;
    }
    return -acc / wsum;
}

PatientDecision aggregate_patient(const PredictionTable& table, const std::string& patient,
                                  double vote_thr, double fuse_weight,
                                  const AdaptiveParams& params) {
    PatientDecision out;
    out.patient_id = patient;
    for (int v = 1; v <= kVertebrae; ++v) {
        const auto fused = score_fuse(table.stack_probs(patient, v, 'A'),
                                      table.stack_probs(patient, v, 'B'), fuse_weight);
        out.vertebra_decisions[static_cast<std::size_t>(v - 1)] = majority_vote(fused, vote_thr);
    }
    out.if_any = patient_if_any(out.vertebra_decisions);
    out.adaptive = patient_adaptive(table, patient, params);
    return out;
}

void save_decisions_jsonl(const std::vector<PatientDecision>& decisions,
                          const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(Errc::io, "cannot write " + path);
    for (const auto& d : decisions) {
        nlohmann::json j{{"patient_id", d.patient_id},
                         {"vertebra_decisions", d.vertebra_decisions},
                         {"patient_if_any", d.if_any},
                         {"patient_adaptive", d.adaptive.fractured},
                         {"score", d.adaptive.score},
                         {"threshold", d.adaptive.threshold}};
        os << j.dump() << "\n";
    }
}

}  // namespace spinevox
