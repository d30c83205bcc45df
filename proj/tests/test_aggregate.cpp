#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "spinevox/aggregate.hpp"

using namespace spinevox;

namespace {

std::vector<double> probs15(double v) { return std::vector<double>(15, v); }

PredictionTable table_for(const std::string& patient,
                          const std::array<double, 7>& means_a,
                          const std::array<double, 7>& means_b) {
    PredictionTable t;
    for (int v = 1; v <= 7; ++v)
        for (int s = 0; s < 15; ++s) {
            t.rows.push_back({patient, v, s, 'A', means_a[static_cast<std::size_t>(v - 1)]});
            t.rows.push_back({patient, v, s, 'B', means_b[static_cast<std::size_t>(v - 1)]});
        }
    return t;
}

}  // namespace

TEST_CASE("majority vote needs a strict majority of 15") {
    std::vector<double> probs(15, 0.1);
    std::fill_n(probs.begin(), 8, 0.9);
    CHECK(majority_vote(probs));

    std::fill(probs.begin(), probs.end(), 0.49);
    CHECK_FALSE(majority_vote(probs));

    std::fill(probs.begin(), probs.end(), 0.1);
    std::fill_n(probs.begin(), 7, 0.9);
    CHECK_FALSE(majority_vote(probs));

    CHECK_THROWS_AS(majority_vote(std::vector<double>(14, 0.9)), Error);
}

TEST_CASE("majority vote is invariant under permutations") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> probs(15);
        for (double& p : probs) p = unit(rng);
        const bool base = majority_vote(probs);
        for (int shuffle = 0; shuffle < 50; ++shuffle) {
            std::shuffle(probs.begin(), probs.end(), rng);
            CHECK(majority_vote(probs) == base);
        }
    }
}

TEST_CASE("score fusion blends element-wise") {
    const auto a = probs15(1.0), b = probs15(0.0);
    CHECK(score_fuse(a, a, 0.5) == a);
    CHECK(score_fuse(a, b, 0.5) == probs15(0.5));
    CHECK(score_fuse(a, b, 1.0) == a);
    CHECK_THROWS_AS(score_fuse(a, std::vector<double>(3, 0.5), 0.5), Error);
}

TEST_CASE("score_fuse(A,B,w) equals score_fuse(B,A,1-w)") {
    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> a(15), b(15);
    for (int i = 0; i < 15; ++i) {
        a[static_cast<std::size_t>(i)] = unit(rng);
        b[static_cast<std::size_t>(i)] = unit(rng);
    }
    const double w = 0.3;
    const auto f1 = score_fuse(a, b, w);
    const auto f2 = score_fuse(b, a, 1.0 - w);
    for (std::size_t i = 0; i < 15; ++i) CHECK(f1[i] == doctest::Approx(f2[i]));
}

TEST_CASE("patient_if_any is a plain OR over 7 vertebrae") {
    CHECK_FALSE(patient_if_any({false, false, false, false, false, false, false}));
    CHECK(patient_if_any({false, false, false, false, false, false, true}));
    CHECK(patient_if_any({true, true, true, true, true, true, true}));
}

TEST_CASE("adaptive rule: perfect agreement keeps the sensitive threshold") {
    std::array<double, 7> m{};
    m.fill(0.45);
    const PredictionTable t = table_for("p1", m, m);
    const AdaptiveDecision d = patient_adaptive(t, "p1");
    CHECK(d.disagreement == doctest::Approx(0.0));
    CHECK(d.threshold == doctest::Approx(0.4));
    CHECK(d.score == doctest::Approx(0.45));
    CHECK(d.fractured);
}

TEST_CASE("adaptive rule: full disagreement raises the threshold") {
    std::array<double, 7> ones{}, zeros{};
    ones.fill(1.0);
    zeros.fill(0.0);
    const PredictionTable t = table_for("p2", ones, zeros);
    const AdaptiveDecision d = patient_adaptive(t, "p2");
    CHECK(d.disagreement == doctest::Approx(1.0));
    CHECK(d.threshold == doctest::Approx(0.6));
    CHECK(d.score == doctest::Approx(0.5));
    CHECK_FALSE(d.fractured);
}

TEST_CASE("adaptive rule: all-zero probabilities stay intact") {
    std::array<double, 7> zeros{};
    const PredictionTable t = table_for("p3", zeros, zeros);
    const AdaptiveDecision d = patient_adaptive(t, "p3");
    CHECK(d.score == doctest::Approx(0.0));
    CHECK_FALSE(d.fractured);
}

TEST_CASE("adaptive threshold always stays within its bounds") {
    std::mt19937_64 rng(91);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::array<double, 7> a{}, b{};
        for (auto& v : a) v = unit(rng);
        for (auto& v : b) v = unit(rng);
        const PredictionTable t = table_for("p", a, b);
        const AdaptiveDecision d = patient_adaptive(t, "p");
        CHECK(d.threshold >= 0.4);
        CHECK(d.threshold <= 0.6);
    }
}

TEST_CASE("missing rows raise a completeness error") {
    std::array<double, 7> m{};
    m.fill(0.5);
    PredictionTable t = table_for("p4", m, m);
    t.rows.pop_back();  // drop one stack of C7 model B
    try {
        patient_adaptive(t, "p4");
        FAIL("expected completeness error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::completeness);
    }
}

TEST_CASE("weighted BCE reproduces the hand example") {
    const double loss = weighted_bce({1, 0}, {0.9, 0.1});
    CHECK(std::abs(loss - (-std::log(0.9))) < 1e-9);
}

TEST_CASE("weighted BCE is ~0 for perfect predictions and >=0 always") {
    CHECK(weighted_bce({1, 0, 1}, {1.0, 0.0, 1.0}) < 1e-5);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> y(20);
        std::vector<double> p(20);
        for (std::size_t i = 0; i < 20; ++i) {
            y[i] = unit(rng) < 0.5 ? 0 : 1;
            p[i] = unit(rng);
        }
        CHECK(weighted_bce(y, p) >= 0.0);
    }
}

TEST_CASE("pos_weight=1 reduces to the plain mean BCE oracle") {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<int> y(31);
        std::vector<double> p(31);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = unit(rng) < 0.4 ? 1 : 0;
            p[i] = unit(rng);
        }
        CHECK(weighted_bce(y, p, 1.0) == doctest::Approx(oracle::plain_bce(y, p)).epsilon(1e-12));
    }
}

TEST_CASE("weighted BCE is strictly decreasing in a positive's probability") {
    const std::vector<int> y{1, 0, 1};
    double prev = weighted_bce(y, {0.1, 0.3, 0.5});
    for (double q : {0.3, 0.5, 0.7, 0.9}) {
        const double cur = weighted_bce(y, {q, 0.3, 0.5});
        CHECK(cur < prev);
        prev = cur;
    }
    CHECK_THROWS_AS(weighted_bce({}, {}), Error);
}

TEST_CASE("if-any and adaptive patient rules can disagree") {
    // One vertebra: 8 stacks just above the vote threshold, 7 at zero. The
    // majority vote fires, but the stack mean (0.272) stays below even the
    // most sensitive adaptive threshold.
    PredictionTable t;
    for (int v = 1; v <= 7; ++v)
        for (int s = 0; s < 15; ++s) {
            const double p = (v == 4 && s < 8) ? 0.51 : 0.0;
            t.rows.push_back({"split", v, s, 'A', p});
            t.rows.push_back({"split", v, s, 'B', p});
        }
    const PatientDecision d = aggregate_patient(t, "split");
    CHECK(d.vertebra_decisions[3]);
    CHECK(d.if_any);
    CHECK(d.adaptive.score == doctest::Approx(8.0 * 0.51 / 15.0));
    CHECK(d.adaptive.threshold == doctest::Approx(0.4));
    CHECK_FALSE(d.adaptive.fractured);
}

TEST_CASE("prediction CSV parses and validates") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "spinevox_test";
    fs::create_directories(dir);
    const auto path = (dir / "preds.csv").string();
    std::ofstream os(path, std::ios::trunc);
    os << "patient_id,vertebra,stack_index,model,prob\n";
    for (int v = 1; v <= 7; ++v)
        for (int s = 0; s < 15; ++s)
            os << "pa," << v << "," << s << ",A,0.2\npa," << v << "," << s << ",B,0.3\n";
    os.close();

    const PredictionTable t = load_predictions_csv(path);
    CHECK(t.rows.size() == 7 * 15 * 2);
    CHECK(t.patients() == std::vector<std::string>{"pa"});
    const auto probs = t.stack_probs("pa", 3, 'B');
    CHECK(probs == std::vector<double>(15, 0.3));

    // Duplicate row trips validation.
    std::ofstream app(path, std::ios::app);
    app << "pa,1,0,A,0.5\n";
    app.close();
    CHECK_THROWS_AS(load_predictions_csv(path), Error);
}

TEST_CASE("aggregate_patient combines votes, if-any and adaptive rules") {
    std::array<double, 7> a{}, b{};
    a.fill(0.1);
    b.fill(0.1);
    a[2] = 0.9;  // C3 fractured under fusion: (0.9+0.7)/2 = 0.8 > 0.5
    b[2] = 0.7;
    const PredictionTable t = table_for("px", a, b);
    const PatientDecision d = aggregate_patient(t, "px");
    CHECK(d.vertebra_decisions[2]);
    CHECK_FALSE(d.vertebra_decisions[0]);
    CHECK(d.if_any);
    CHECK(d.adaptive.score == doctest::Approx(0.8));

    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "spinevox_test";
    fs::create_directories(dir);
    const auto path = (dir / "decisions.jsonl").string();
    save_decisions_jsonl({d}, path);
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    CHECK(line.find("\"patient_id\":\"px\"") != std::string::npos);
    CHECK(line.find("\"patient_if_any\":true") != std::string::npos);
}
