#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "spinevox/pipeline.hpp"
#include "spinevox/vertmask.hpp"

using namespace spinevox;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    fs::path dir;
    Manifest manifest;

    explicit Fixture(const std::string& name, std::uint64_t seed = 77) {
        dir = fs::temp_directory_path() / "spinevox_pipeline" / name;
        fs::remove_all(dir);
        fs::create_directories(dir);
        const Phantom ph = make_phantom(seed, 7, 120, 64, 64);
        save_vvol(ph.intensity, (dir / "vol.vvol").string());
        save_vvol(ph.labels, (dir / "lab.vvol").string());

        manifest.patient_id = "pt_" + name;
        manifest.volume = (dir / "vol.vvol").string();
        manifest.label_volume = (dir / "lab.vvol").string();
        manifest.params.min_slices = 160;
        manifest.params.t = 0;
        manifest.params.margin = 0;
    }
};

std::map<std::string, std::vector<StageArtifact>> artifact_map(const RunReport& r) {
    std::map<std::string, std::vector<StageArtifact>> m;
    for (const auto& s : r.stages) m[s.name] = s.artifacts;
    return m;
}

const StageReport& stage(const RunReport& r, const std::string& name) {
    for (const auto& s : r.stages)
        if (s.name == name) return s;
    throw std::runtime_error("missing stage " + name);
}

void write_predictions(const fs::path& path, const std::string& patient) {
    std::ofstream os(path, std::ios::trunc);
    os << "patient_id,vertebra,stack_index,model,prob\n";
    for (int v = 1; v <= 7; ++v)
        for (int s = 0; s < 15; ++s) {
            const double p = v == 2 ? 0.9 : 0.1;
            os << patient << "," << v << "," << s << ",A," << p << "\n";
            os << patient << "," << v << "," << s << ",B," << p << "\n";
        }
}

}  // namespace

TEST_CASE("oracle phantom run: VOI matches the ground-truth box exactly at t=0") {
    Fixture fx("oracle");
    const RunReport report = run_pipeline(fx.manifest, (fx.dir / "runs").string());

    const StageReport& fuse = stage(report, "fuse");
    CHECK(fuse.metrics.at("voi_iou_vs_gt").get<double>() == doctest::Approx(1.0));
    CHECK(fuse.metrics.at("voi_contains_gt").get<bool>());

    const StageReport& extract = stage(report, "extract");
    const auto& containment = extract.metrics.at("label_containment");
    for (int v = 1; v <= 7; ++v)
        CHECK(containment.at("C" + std::to_string(v)).get<double>() == doctest::Approx(1.0));

    // Oracle masks evaluate perfectly against themselves.
    const StageReport& eval = stage(report, "evaluate");
    for (const char* view : {"sagittal", "coronal"})
        for (int v = 1; v <= 7; ++v) {
            const auto& entry =
                eval.metrics.at("mask_metrics").at(view).at("C" + std::to_string(v));
            CHECK(entry.at("iou").get<double>() == doctest::Approx(1.0));
            CHECK(entry.at("dice").get<double>() == doctest::Approx(1.0));
            CHECK(entry.at("hd95").get<double>() == doctest::Approx(0.0));
        }

    // Aggregate was skipped: no predictions in the manifest.
    CHECK(stage(report, "aggregate").skipped);

    // Stack artifacts exist for all 7 vertebrae in both variants.
    CHECK(stage(report, "stacks").artifacts.size() == 7 * 2 * 2);  // file + sidecar
}

TEST_CASE("t=20 keeps the VOI a superset of the ground-truth box") {
    Fixture fx("tolerance");
    fx.manifest.params.t = 20;
    const RunReport report = run_pipeline(fx.manifest, (fx.dir / "runs").string());
    const StageReport& fuse = stage(report, "fuse");
    CHECK(fuse.metrics.at("voi_contains_gt").get<bool>());
    CHECK(fuse.metrics.at("voi_iou_vs_gt").get<double>() < 1.0);
}

TEST_CASE("reruns are idempotent and cached") {
    Fixture fx("idempotent");
    const RunReport first = run_pipeline(fx.manifest, (fx.dir / "runs").string());
    const RunReport second = run_pipeline(fx.manifest, (fx.dir / "runs").string());

    const auto a = artifact_map(first), b = artifact_map(second);
    CHECK(a.size() == b.size());
    for (const auto& [name, arts] : a) {
        REQUIRE(b.count(name) == 1);
        REQUIRE(b.at(name).size() == arts.size());
        for (std::size_t i = 0; i < arts.size(); ++i) {
            CHECK(b.at(name)[i].name == arts[i].name);
            CHECK(b.at(name)[i].hash == arts[i].hash);
        }
    }
    for (const auto& s : second.stages) CHECK(s.cached);
}

TEST_CASE("independent runs of the same manifest hash identically") {
    Fixture fx("deterministic");
    const RunReport a = run_pipeline(fx.manifest, (fx.dir / "runs_a").string());
    const RunReport b = run_pipeline(fx.manifest, (fx.dir / "runs_b").string());
    const auto ma = artifact_map(a), mb = artifact_map(b);
    for (const auto& [name, arts] : ma)
        for (std::size_t i = 0; i < arts.size(); ++i)
            CHECK(mb.at(name)[i].hash == arts[i].hash);
}

TEST_CASE("deleting a downstream artifact resumes from that stage") {
    Fixture fx("resume");
    const std::string out = (fx.dir / "runs").string();
    run_pipeline(fx.manifest, out);

    // Invalidate extract; upstream must stay cached, extract must rebuild.
    fs::remove(fs::path(out) / fx.manifest.patient_id / "extract" / "stage.json");
    const RunReport again = run_pipeline(fx.manifest, out);
    CHECK(stage(again, "interpolate").cached);
    CHECK(stage(again, "fuse").cached);
    CHECK_FALSE(stage(again, "extract").cached);
    CHECK(stage(again, "stacks").cached);
}

TEST_CASE("missing masks with no label volume names the segment stage") {
    Fixture fx("segfail");
    // Provide detector boxes so detect succeeds, then drop the labels.
    const RunReport probe = run_pipeline(fx.manifest, (fx.dir / "probe").string());
    (void)probe;
    fx.manifest.boxes_jsonl =
        (fs::path(fx.dir) / "probe" / fx.manifest.patient_id / "detect" / "boxes.jsonl")
            .string();
    fx.manifest.label_volume.reset();
    try {
        run_pipeline(fx.manifest, (fx.dir / "runs").string());
        FAIL("expected stage-dependency error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::stage_dependency);
        CHECK(std::string(e.what()).find("segment") != std::string::npos);
    }
}

TEST_CASE("missing boxes with no label volume names the detect stage") {
    Fixture fx("detfail");
    fx.manifest.label_volume.reset();
    try {
        run_pipeline(fx.manifest, (fx.dir / "runs").string());
        FAIL("expected stage-dependency error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::stage_dependency);
        CHECK(std::string(e.what()).find("detect") != std::string::npos);
    }
}

TEST_CASE("predictions CSV flows through to decisions") {
    Fixture fx("preds");
    write_predictions(fx.dir / "preds.csv", fx.manifest.patient_id);
    fx.manifest.predictions_csv = (fx.dir / "preds.csv").string();
    const RunReport report = run_pipeline(fx.manifest, (fx.dir / "runs").string());
    const StageReport& agg = stage(report, "aggregate");
    CHECK_FALSE(agg.skipped);
    CHECK(agg.metrics.at("patients").get<int>() == 1);

    std::ifstream is(fs::path(report.run_dir) / "aggregate" / "decisions.jsonl");
    std::string line;
    REQUIRE(std::getline(is, line));
    const nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("patient_id") == fx.manifest.patient_id);
    CHECK(j.at("vertebra_decisions").at(1).get<bool>());  // C2 fractured
    CHECK(j.at("patient_if_any").get<bool>());
}

TEST_CASE("manifest round trips through JSON") {
    Fixture fx("manifest");
    fx.manifest.params.t = 13;
    fx.manifest.params.adaptive.d_ref = 0.5;
    const auto path = (fx.dir / "m.json").string();
    save_manifest(fx.manifest, path);
    const Manifest back = load_manifest(path);
    CHECK(back.patient_id == fx.manifest.patient_id);
    CHECK(back.volume == fx.manifest.volume);
    CHECK(back.label_volume == fx.manifest.label_volume);
    CHECK(back.params.t == 13);
    CHECK(back.params.adaptive.d_ref == doctest::Approx(0.5));
    CHECK_FALSE(back.predictions_csv.has_value());
}

TEST_CASE("ingested 256x256 masks are reverse-resized onto the VOI") {
    Fixture fx("ingest", 91);
    const std::string out = (fx.dir / "oracle_run").string();
    const RunReport oracle_run = run_pipeline(fx.manifest, out);

    // Re-encode the oracle masks as 256x256 network-style outputs.
    const fs::path seg = fs::path(oracle_run.run_dir) / "segment";
    const MultiLabelMask sag = load_multilabel((seg / "mask_sagittal.vvol").string());
    const MultiLabelMask cor = load_multilabel((seg / "mask_coronal.vvol").string());
    MultiLabelMask sag_net, cor_net;
    sag_net.axis = Axis::sagittal;
    cor_net.axis = Axis::coronal;
    for (int v = 0; v < kCervicalCount; ++v) {
        sag_net.channels[static_cast<std::size_t>(v)] =
            square_pad_resize(sag.channels[static_cast<std::size_t>(v)], kStackSide);
        cor_net.channels[static_cast<std::size_t>(v)] =
            square_pad_resize(cor.channels[static_cast<std::size_t>(v)], kStackSide);
    }
    save_multilabel(sag_net, (fx.dir / "sag256.vvol").string());
    save_multilabel(cor_net, (fx.dir / "cor256.vvol").string());

    fx.manifest.masks_sagittal = (fx.dir / "sag256.vvol").string();
    fx.manifest.masks_coronal = (fx.dir / "cor256.vvol").string();
    const RunReport report = run_pipeline(fx.manifest, (fx.dir / "runs").string());
    CHECK(stage(report, "segment").metrics.at("source") == "ingested");

    // Masks went through pad/resize twice; overlap with ground truth stays high.
    const auto& eval = stage(report, "evaluate").metrics.at("mask_metrics");
    for (int v = 1; v <= 7; ++v) {
        const double dice =
            eval.at("sagittal").at("C" + std::to_string(v)).at("dice").get<double>();
        CHECK(dice >= 0.9);
    }
}
