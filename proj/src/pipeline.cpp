#include "spinevox/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <ostream>
#include <set>
#include <thread>

#include "spinevox/metrics.hpp"
#include "spinevox/projection.hpp"
#include "spinevox/vertmask.hpp"

namespace fs = std::filesystem;

namespace spinevox {

namespace {

const std::vector<std::string> kStages = {"interpolate", "project", "detect",  "fuse",
                                          "segment",     "approximate", "extract", "stacks",
                                          "aggregate",   "evaluate"};

std::string fnv1a_bytes(const char* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::optional<std::string> opt_string(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::string>();
}

Box3D box3d_from_json(const nlohmann::json& j) {
    return Box3D{j.at("z0").get<std::int64_t>(), j.at("z1").get<std::int64_t>(),
                 j.at("y0").get<std::int64_t>(), j.at("y1").get<std::int64_t>(),
                 j.at("x0").get<std::int64_t>(), j.at("x1").get<std::int64_t>()};
}

nlohmann::json box3d_to_json(const Box3D& b) {
    return {{"z0", b.z0}, {"z1", b.z1}, {"y0", b.y0},
            {"y1", b.y1}, {"x0", b.x0}, {"x1", b.x1}};
}

// Tight 3D bounding box of all cervical labels.
Box3D cervical_bbox(const VoxelGrid& labels) {
    Box3D box{static_cast<std::int64_t>(labels.nz), 0, static_cast<std::int64_t>(labels.ny), 0,
              static_cast<std::int64_t>(labels.nx), 0};
    bool any = false;
    for (std::size_t z = 0; z < labels.nz; ++z)
        for (std::size_t y = 0; y < labels.ny; ++y)
            for (std::size_t x = 0; x < labels.nx; ++x) {
                const int v = static_cast<int>(labels.at(z, y, x));
                if (v < 1 || v > kCervicalCount) continue;
                any = true;
                box.z0 = std::min<std::int64_t>(box.z0, static_cast<std::int64_t>(z));
                box.z1 = std::max<std::int64_t>(box.z1, static_cast<std::int64_t>(z) + 1);
                box.y0 = std::min<std::int64_t>(box.y0, static_cast<std::int64_t>(y));
                box.y1 = std::max<std::int64_t>(box.y1, static_cast<std::int64_t>(y) + 1);
                box.x0 = std::min<std::int64_t>(box.x0, static_cast<std::int64_t>(x));
                box.x1 = std::max<std::int64_t>(box.x1, static_cast<std::int64_t>(x) + 1);
            }
    if (!any) throw Error(Errc::empty_mask, "label volume holds no cervical voxels");
    return box;
}

struct StageContext {
    const Manifest& manifest;
    fs::path run_dir;

    fs::path stage_dir(const std::string& stage) const { return run_dir / stage; }
    fs::path artifact(const std::string& stage, const std::string& name) const {
        return stage_dir(stage) / name;
    }
};

// Runs one vertebra job per worker slot in waves of at most
// SPINEVOX_THREADS; results are keyed by index so the outcome is identical
// at any thread cap.
void for_each_vertebra(const std::function<void(int)>& job) {
    const unsigned cap = std::min<unsigned>(pipeline_thread_cap(), kCervicalCount);
    if (cap <= 1) {
        for (int v = 1; v <= kCervicalCount; ++v) job(v);
        return;
    }
    int v = 1;
    while (v <= kCervicalCount) {
        std::vector<std::future<void>> wave;
        for (unsigned i = 0; i < cap && v <= kCervicalCount; ++i, ++v)
            wave.push_back(std::async(std::launch::async, job, v));
        for (auto& f : wave) f.get();
    }
}

class Runner {
public:
    Runner(const Manifest& manifest, const std::string& out_root, LogFormat fmt,
           std::ostream* log)
        : ctx_{manifest, fs::path(out_root) / manifest.patient_id}, fmt_(fmt), log_(log) {}

    RunReport run();

private:
    using StageFn = std::function<void(std::vector<StageArtifact>&, nlohmann::json&, bool&)>;

    void log_line(const std::string& stage, const std::string& msg) const {
        if (!log_) return;
        if (fmt_ == LogFormat::json) {
            nlohmann::json j{{"stage", stage}, {"msg", msg}};
            *log_ << j.dump() << "\n";
        } else {
            *log_ << "[" << stage << "] " << msg << "\n";
        }
    }

    // Stage wrapper: reuse valid cached outputs, otherwise execute and record
    // name->hash pairs in stage.json.
    StageReport run_stage(const std::string& name, const StageFn& fn);

    bool stage_cache_valid(const std::string& name, StageReport& report) const;

    void write_stage_manifest(const std::string& name, const StageReport& report) const;

    VoxelGrid interpolated_volume() const {
        return load_vvol(ctx_.artifact("interpolate", "volume.vvol").string());
    }
    VoxelGrid interpolated_labels() const {
        return load_vvol(ctx_.artifact("interpolate", "labels.vvol").string());
    }
    bool have_labels() const { return ctx_.manifest.label_volume.has_value(); }
    Box3D load_voi() const {
        std::ifstream is(ctx_.artifact("fuse", "voi.json"));
        if (!is) throw Error(Errc::io, "missing fused VOI");
        return box3d_from_json(nlohmann::json::parse(is).at("voi"));
    }

    void stage_interpolate(std::vector<StageArtifact>&, nlohmann::json&, bool&);
    void stage_project(std::vector<StageArtifact>&, nlohmann::json&, bool&);
    void stage_detect(std::vector<StageArtifact>&, nlohmann::json&, bool&);
    void stage_fuse(std::vector<StageArtifact>&, nlohmann::json&, bool&);
    void stage_segment(std::vector<StageArtifact>&, nlohmann::json&, bool&);
    void stage_approximate(std::vector<StageArtifact>&, nlohmann::json&, bool&);
    void stage_extract(std::vector<StageArtifact>&, nlohmann::json&, bool&);
    void stage_stacks(std::vector<StageArtifact>&, nlohmann::json&, bool&);
    void stage_aggregate(std::vector<StageArtifact>&, nlohmann::json&, bool&);
    void stage_evaluate(std::vector<StageArtifact>&, nlohmann::json&, bool&);

    StageContext ctx_;
    LogFormat fmt_;
    std::ostream* log_;
};

bool Runner::stage_cache_valid(const std::string& name, StageReport& report) const {
    const fs::path meta_path = ctx_.artifact(name, "stage.json");
    std::ifstream is(meta_path);
    if (!is) return false;
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(is);
    } catch (...) {
        return false;
    }
    std::vector<StageArtifact> arts;
    for (const auto& a : meta.value("artifacts", nlohmann::json::array())) {
        StageArtifact sa{a.at("name").get<std::string>(), a.at("hash").get<std::string>()};
        const fs::path p = ctx_.artifact(name, sa.name);
        if (!fs::exists(p) || fnv1a_file(p.string()) != sa.hash) return false;
        arts.push_back(std::move(sa));
    }
    report.artifacts = std::move(arts);
    report.metrics = meta.value("metrics", nlohmann::json::object());
    report.skipped = meta.value("skipped", false);
    return true;
}

void Runner::write_stage_manifest(const std::string& name, const StageReport& report) const {
    nlohmann::json meta{{"stage", name},
                        {"skipped", report.skipped},
                        {"metrics", report.metrics},
                        {"artifacts", nlohmann::json::array()}};
    for (const auto& a : report.artifacts)
        meta["artifacts"].push_back({{"name", a.name}, {"hash", a.hash}});
    std::ofstream os(ctx_.artifact(name, "stage.json"), std::ios::trunc);
    os << meta.dump(2) << "\n";
}

StageReport Runner::run_stage(const std::string& name, const StageFn& fn) {
    StageReport report;
    report.name = name;
    fs::create_directories(ctx_.stage_dir(name));

    const auto t0 = std::chrono::steady_clock::now();
    if (stage_cache_valid(name, report)) {
        report.cached = true;
        log_line(name, "cached");
    } else {
        // Invalidated outputs are rebuilt from scratch. Collect paths first;
        // removing while iterating the directory is not safe.
        std::vector<fs::path> stale;
        for (const auto& entry : fs::directory_iterator(ctx_.stage_dir(name)))
            stale.push_back(entry.path());
        for (const auto& p : stale) fs::remove_all(p);
        std::vector<StageArtifact> arts;
        nlohmann::json metrics = nlohmann::json::object();
        bool skipped = false;
        fn(arts, metrics, skipped);
        for (auto& a : arts) a.hash = fnv1a_file(ctx_.artifact(name, a.name).string());
        report.artifacts = std::move(arts);
        report.metrics = std::move(metrics);
        report.skipped = skipped;
        write_stage_manifest(name, report);
        log_line(name, skipped ? "skipped" : "done");
    }
    report.millis = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    return report;
}

void Runner::stage_interpolate(std::vector<StageArtifact>& arts, nlohmann::json& metrics,
                               bool&) {
    const auto& m = ctx_.manifest;
    VoxelGrid vol = load_vvol(m.volume);
    if (vol.kind != GridKind::intensity)
        throw Error(Errc::kind, "manifest volume must be an intensity grid");
    VoxelGrid interp = interpolate_slices(vol, m.params.min_slices);
    save_vvol(interp, ctx_.artifact("interpolate", "volume.vvol").string());
    arts.push_back({"volume.vvol", ""});
    metrics["slices_in"] = vol.nz;
    metrics["slices_out"] = interp.nz;

    if (m.label_volume) {
        VoxelGrid labels = load_vvol(*m.label_volume);
        if (labels.kind != GridKind::label)
            throw Error(Errc::kind, "manifest label volume must be a label grid");
        if (labels.nz != vol.nz || labels.ny != vol.ny || labels.nx != vol.nx)
            throw Error(Errc::shape, "label volume dims differ from the CT volume");
        VoxelGrid linterp = interpolate_slices(labels, m.params.min_slices);
        save_vvol(linterp, ctx_.artifact("interpolate", "labels.vvol").string());
        arts.push_back({"labels.vvol", ""});
    }
}

void Runner::stage_project(std::vector<StageArtifact>& arts, nlohmann::json&, bool&) {
    const VoxelGrid vol = interpolated_volume();
    const struct {
        Axis axis;
        ProjectionOp op;
        const char* name;
    } plan[] = {
        {Axis::sagittal, ProjectionOp::variance, "sagittal_variance.pgm"},
        {Axis::coronal, ProjectionOp::variance, "coronal_variance.pgm"},
        {Axis::axial, ProjectionOp::variance, "axial_variance.pgm"},
        {Axis::sagittal, ProjectionOp::energy, "sagittal_energy.pgm"},
        {Axis::coronal, ProjectionOp::energy, "coronal_energy.pgm"},
    };
    for (const auto& p : plan) {
        save_proj(project(vol, p.axis, p.op), ctx_.artifact("project", p.name).string());
        arts.push_back({p.name, ""});
        arts.push_back({std::string(p.name) + ".json", ""});
    }
}

void Runner::stage_detect(std::vector<StageArtifact>& arts, nlohmann::json& metrics, bool&) {
    const auto& m = ctx_.manifest;
    std::vector<ViewBox> boxes;
    if (m.boxes_jsonl) {
        boxes = load_boxes_jsonl(*m.boxes_jsonl);
        metrics["source"] = "ingested";
    } else if (have_labels()) {
        const VoxelGrid labels = interpolated_labels();
        std::set<int> cervical;
        for (int v = 1; v <= kCervicalCount; ++v) cervical.insert(v);
        for (Axis axis : {Axis::sagittal, Axis::coronal, Axis::axial})
            boxes.push_back({axis_name(axis), bbox_from_mask(labels, axis, cervical), 1.0});
        metrics["source"] = "oracle";
    } else {
        throw Error(Errc::stage_dependency,
                    "detect: no boxes ingested and no label volume for the oracle fallback");
    }
    save_boxes_jsonl(boxes, ctx_.artifact("detect", "boxes.jsonl").string());
    arts.push_back({"boxes.jsonl", ""});
}

void Runner::stage_fuse(std::vector<StageArtifact>& arts, nlohmann::json& metrics, bool&) {
    const auto boxes = load_boxes_jsonl(ctx_.artifact("detect", "boxes.jsonl").string());
    std::optional<Box2D> sag, cor, axi;
    for (const auto& vb : boxes) {
        if (vb.view == "sagittal") sag = vb.box;
        if (vb.view == "coronal") cor = vb.box;
        if (vb.view == "axial") axi = vb.box;
    }
    if (!sag || !cor || !axi)
        throw Error(Errc::stage_dependency, "fuse: boxes for all three views are required");

    const VoxelGrid vol = interpolated_volume();
    const Box3D voi =
        fuse_voi(*cor, *sag, *axi, ctx_.manifest.params.t, {vol.nz, vol.ny, vol.nx});

    nlohmann::json out{{"voi", box3d_to_json(voi)}, {"t", ctx_.manifest.params.t}};
    if (have_labels()) {
        const Box3D gt = cervical_bbox(interpolated_labels());
        out["gt_box"] = box3d_to_json(gt);
        metrics["voi_iou_vs_gt"] = box_iou(voi, gt);
        metrics["voi_contains_gt"] = voi.z0 <= gt.z0 && voi.z1 >= gt.z1 && voi.y0 <= gt.y0 &&
                                     voi.y1 >= gt.y1 && voi.x0 <= gt.x0 && voi.x1 >= gt.x1;
    }
    std::ofstream os(ctx_.artifact("fuse", "voi.json"), std::ios::trunc);
    os << out.dump(2) << "\n";
    arts.push_back({"voi.json", ""});
}

void Runner::stage_segment(std::vector<StageArtifact>& arts, nlohmann::json& metrics, bool&) {
    const auto& m = ctx_.manifest;
    const Box3D voi = load_voi();
    const std::size_t vz = static_cast<std::size_t>(voi.z1 - voi.z0);
    const std::size_t vy = static_cast<std::size_t>(voi.y1 - voi.y0);
    const std::size_t vx = static_cast<std::size_t>(voi.x1 - voi.x0);

    MultiLabelMask sag, cor;
    if (m.masks_sagittal && m.masks_coronal) {
        sag = load_multilabel(*m.masks_sagittal);
        cor = load_multilabel(*m.masks_coronal);
        // 256x256 network outputs are reverse-resized and unpadded to the VOI.
        if (sag.h() == kStackSide && sag.w() == kStackSide && (vz != kStackSide || vy != kStackSide))
            sag = unpad_resize_mask(sag, vz, vy);
        if (cor.h() == kStackSide && cor.w() == kStackSide && (vz != kStackSide || vx != kStackSide))
            cor = unpad_resize_mask(cor, vz, vx);
        if (sag.h() != vz || sag.w() != vy || cor.h() != vz || cor.w() != vx)
            throw Error(Errc::shape, "ingested masks do not match the VOI dims");
        metrics["source"] = "ingested";
    } else if (have_labels()) {
        const VoxelGrid labels = interpolated_labels();
        const VoxelGrid voi_labels =
            crop(labels, static_cast<std::size_t>(voi.z0), static_cast<std::size_t>(voi.z1),
                 static_cast<std::size_t>(voi.y0), static_cast<std::size_t>(voi.y1),
                 static_cast<std::size_t>(voi.x0), static_cast<std::size_t>(voi.x1));
        sag = multilabel_project(voi_labels, Axis::sagittal);
        cor = multilabel_project(voi_labels, Axis::coronal);
        metrics["source"] = "oracle";
    } else {
        throw Error(Errc::stage_dependency,
                    "segment: no masks ingested and no label volume for the oracle fallback");
    }
    save_multilabel(sag, ctx_.artifact("segment", "mask_sagittal.vvol").string());
    save_multilabel(cor, ctx_.artifact("segment", "mask_coronal.vvol").string());
    for (const char* n : {"mask_sagittal.vvol", "mask_sagittal.vvol.json",
                          "mask_coronal.vvol", "mask_coronal.vvol.json"})
        arts.push_back({n, ""});
}

void Runner::stage_approximate(std::vector<StageArtifact>& arts, nlohmann::json& metrics,
                               bool&) {
    const Box3D voi = load_voi();
    const MultiLabelMask sag =
        load_multilabel(ctx_.artifact("segment", "mask_sagittal.vvol").string());
    const MultiLabelMask cor =
        load_multilabel(ctx_.artifact("segment", "mask_coronal.vvol").string());
    const ApproxMask3D approx = approximate_mask3d(
        sag, cor,
        {static_cast<std::size_t>(voi.z1 - voi.z0), static_cast<std::size_t>(voi.y1 - voi.y0),
         static_cast<std::size_t>(voi.x1 - voi.x0)});

    nlohmann::json excluded = nlohmann::json::array();
    std::vector<std::string> names(kCervicalCount);
    for_each_vertebra([&](int v) {
        const VoxelGrid& g = approx.per_vertebra[static_cast<std::size_t>(v - 1)];
        const std::string name = "approx_c" + std::to_string(v) + ".vvol";
        save_vvol(g, ctx_.artifact("approximate", name).string());
        names[static_cast<std::size_t>(v - 1)] = name;
    });
    for (int v = 1; v <= kCervicalCount; ++v) {
        arts.push_back({names[static_cast<std::size_t>(v - 1)], ""});
        bool any = false;
        for (double vv : approx.per_vertebra[static_cast<std::size_t>(v - 1)].voxels)
            if (vv != 0.0) {
                any = true;
                break;
            }
        if (!any) excluded.push_back("C" + std::to_string(v));
    }
    metrics["excluded"] = excluded;
}

void Runner::stage_extract(std::vector<StageArtifact>& arts, nlohmann::json& metrics, bool&) {
    const Box3D voi = load_voi();
    const VoxelGrid vol = interpolated_volume();
    const VoxelGrid voi_vol =
        crop(vol, static_cast<std::size_t>(voi.z0), static_cast<std::size_t>(voi.z1),
             static_cast<std::size_t>(voi.y0), static_cast<std::size_t>(voi.y1),
             static_cast<std::size_t>(voi.x0), static_cast<std::size_t>(voi.x1));

    ApproxMask3D approx;
    for (int v = 1; v <= kCervicalCount; ++v)
        approx.per_vertebra[static_cast<std::size_t>(v - 1)] = load_vvol(
            ctx_.artifact("approximate", "approx_c" + std::to_string(v) + ".vvol").string());

    std::optional<VoxelGrid> voi_labels;
    if (have_labels()) {
        const VoxelGrid labels = interpolated_labels();
        voi_labels = crop(labels, static_cast<std::size_t>(voi.z0),
                          static_cast<std::size_t>(voi.z1), static_cast<std::size_t>(voi.y0),
                          static_cast<std::size_t>(voi.y1), static_cast<std::size_t>(voi.x0),
                          static_cast<std::size_t>(voi.x1));
    }

    nlohmann::json boxes = nlohmann::json::object();
    nlohmann::json containment = nlohmann::json::object();
    for (int v = 1; v <= kCervicalCount; ++v) {
        const std::string key = "C" + std::to_string(v);
        Box3D box;
        try {
            box = approx_bbox(approx, v);
        } catch (const Error& e) {
            if (e.code() == Errc::empty_mask) {
                boxes[key] = nullptr;  // excluded vertebra, mirrors the approximate stage
                continue;
            }
            throw;
        }
        const VoxelGrid vert = extract_vertebra(voi_vol, approx, v, ctx_.manifest.params.margin);
        const std::string name = "vert_c" + std::to_string(v) + ".vvol";
        save_vvol(vert, ctx_.artifact("extract", name).string());
        arts.push_back({name, ""});
        boxes[key] = box3d_to_json(box);

        if (voi_labels) {
            // Fraction of this label's voxels inside the extracted box.
            std::uint64_t inside = 0, total = 0;
            Box3D ex = box;
            ex.z0 = std::max<std::int64_t>(0, ex.z0 - ctx_.manifest.params.margin);
            ex.y0 = std::max<std::int64_t>(0, ex.y0 - ctx_.manifest.params.margin);
            ex.x0 = std::max<std::int64_t>(0, ex.x0 - ctx_.manifest.params.margin);
            ex.z1 = std::min<std::int64_t>(static_cast<std::int64_t>(voi_labels->nz),
                                           ex.z1 + ctx_.manifest.params.margin);
            ex.y1 = std::min<std::int64_t>(static_cast<std::int64_t>(voi_labels->ny),
                                           ex.y1 + ctx_.manifest.params.margin);
            ex.x1 = std::min<std::int64_t>(static_cast<std::int64_t>(voi_labels->nx),
                                           ex.x1 + ctx_.manifest.params.margin);
            for (std::size_t z = 0; z < voi_labels->nz; ++z)
                for (std::size_t y = 0; y < voi_labels->ny; ++y)
                    for (std::size_t x = 0; x < voi_labels->nx; ++x)
                        if (static_cast<int>(voi_labels->at(z, y, x)) == v) {
                            ++total;
                            inside += ex.contains(static_cast<std::int64_t>(z),
                                                  static_cast<std::int64_t>(y),
                                                  static_cast<std::int64_t>(x));
                        }
            containment[key] =
                total == 0 ? 1.0
                           : static_cast<double>(inside) / static_cast<double>(total);
        }
    }
    metrics["boxes"] = boxes;
    if (voi_labels) metrics["label_containment"] = containment;
}

void Runner::stage_stacks(std::vector<StageArtifact>& arts, nlohmann::json&, bool&) {
    std::vector<std::vector<std::string>> names(kCervicalCount);
    for_each_vertebra([&](int v) {
        const fs::path vert_path =
            ctx_.artifact("extract", "vert_c" + std::to_string(v) + ".vvol");
        if (!fs::exists(vert_path)) return;  // excluded vertebra
        const VoxelGrid vert = load_vvol(vert_path.string());
        for (StackVariant variant : {StackVariant::raw, StackVariant::mip}) {
            StackSet set = variant == StackVariant::raw
                               ? build_raw_stacks(vert, ctx_.manifest.params.window)
                               : build_mip_stacks(vert, ctx_.manifest.params.window);
            for (auto& st : set.stacks) st.vertebra = v;
            const std::string name = "vert_c" + std::to_string(v) + "_" +
                                     stack_variant_name(variant) + ".vvol";
            save_stackset(set, ctx_.artifact("stacks", name).string());
            names[static_cast<std::size_t>(v - 1)].push_back(name);
        }
    });
    for (const auto& per_vert : names)
        for (const auto& name : per_vert) {
            arts.push_back({name, ""});
            arts.push_back({name + ".json", ""});
        }
}

void Runner::stage_aggregate(std::vector<StageArtifact>& arts, nlohmann::json& metrics,
                             bool& skipped) {
    const auto& m = ctx_.manifest;
    if (!m.predictions_csv) {
        skipped = true;
        metrics["reason"] = "no predictions CSV in the manifest";
        return;
    }
    const PredictionTable table = load_predictions_csv(*m.predictions_csv);
    std::vector<PatientDecision> decisions;
    for (const auto& patient : table.patients())
        decisions.push_back(aggregate_patient(table, patient, m.params.vote_thr,
                                              m.params.fuse_weight, m.params.adaptive));
    save_decisions_jsonl(decisions, ctx_.artifact("aggregate", "decisions.jsonl").string());
    arts.push_back({"decisions.jsonl", ""});
    metrics["patients"] = decisions.size();
}

void Runner::stage_evaluate(std::vector<StageArtifact>& arts, nlohmann::json& metrics,
                            bool& skipped) {
    if (!have_labels()) {
        skipped = true;
        metrics["reason"] = "no ground truth labels";
        return;
    }
    const Box3D voi = load_voi();
    const VoxelGrid labels = interpolated_labels();
    const VoxelGrid voi_labels =
        crop(labels, static_cast<std::size_t>(voi.z0), static_cast<std::size_t>(voi.z1),
             static_cast<std::size_t>(voi.y0), static_cast<std::size_t>(voi.y1),
             static_cast<std::size_t>(voi.x0), static_cast<std::size_t>(voi.x1));

    nlohmann::json views = nlohmann::json::object();
    for (Axis axis : {Axis::sagittal, Axis::coronal}) {
        const std::string file =
            axis == Axis::sagittal ? "mask_sagittal.vvol" : "mask_coronal.vvol";
        const MultiLabelMask pred = load_multilabel(ctx_.artifact("segment", file).string());
        const MultiLabelMask gt = multilabel_project(voi_labels, axis);

        nlohmann::json per_vert = nlohmann::json::object();
        for (int v = 1; v <= kCervicalCount; ++v) {
            const Mask2D& pm = pred.channels[static_cast<std::size_t>(v - 1)];
            const Mask2D& gm = gt.channels[static_cast<std::size_t>(v - 1)];
            VoxelGrid pg = make_grid(1, pm.h, pm.w, GridKind::label);
            VoxelGrid gg = make_grid(1, gm.h, gm.w, GridKind::label);
            for (std::size_t i = 0; i < pm.pixels.size(); ++i) pg.voxels[i] = pm.pixels[i];
            for (std::size_t i = 0; i < gm.pixels.size(); ++i) gg.voxels[i] = gm.pixels[i];

            const OverlapResult ov = overlap_metrics(pg, gg);
            nlohmann::json entry{{"iou", ov.iou}, {"dice", ov.dice}};
            const bool pred_any = pm.count() > 0, gt_any = gm.count() > 0;
            if (pred_any && gt_any) {
                const double sy = labels.spacing[axis == Axis::sagittal ? 1 : 2];
                entry["hd95"] = hd95(pg, gg, {1.0, labels.spacing[0], sy});
            }
            per_vert["C" + std::to_string(v)] = entry;
        }
        views[axis_name(axis)] = per_vert;
    }
    metrics["mask_metrics"] = views;
    std::ofstream os(ctx_.artifact("evaluate", "metrics.json"), std::ios::trunc);
    os << metrics.dump(2) << "\n";
    arts.push_back({"metrics.json", ""});
}

RunReport Runner::run() {
    RunReport report;
    report.patient_id = ctx_.manifest.patient_id;
    report.run_dir = ctx_.run_dir.string();
    fs::create_directories(ctx_.run_dir);

    const std::pair<std::string, StageFn> stages[] = {
        {"interpolate", [this](auto& a, auto& m, auto& s) { stage_interpolate(a, m, s); }},
        {"project", [this](auto& a, auto& m, auto& s) { stage_project(a, m, s); }},
        {"detect", [this](auto& a, auto& m, auto& s) { stage_detect(a, m, s); }},
        {"fuse", [this](auto& a, auto& m, auto& s) { stage_fuse(a, m, s); }},
        {"segment", [this](auto& a, auto& m, auto& s) { stage_segment(a, m, s); }},
        {"approximate", [this](auto& a, auto& m, auto& s) { stage_approximate(a, m, s); }},
        {"extract", [this](auto& a, auto& m, auto& s) { stage_extract(a, m, s); }},
        {"stacks", [this](auto& a, auto& m, auto& s) { stage_stacks(a, m, s); }},
        {"aggregate", [this](auto& a, auto& m, auto& s) { stage_aggregate(a, m, s); }},
        {"evaluate", [this](auto& a, auto& m, auto& s) { stage_evaluate(a, m, s); }},
    };
    for (const auto& [name, fn] : stages) report.stages.push_back(run_stage(name, fn));

    std::ofstream os(ctx_.run_dir / "report.json", std::ios::trunc);
    os << report.to_json().dump(2) << "\n";
    return report;
}

}  // namespace

const std::vector<std::string>& pipeline_stage_names() { return kStages; }

std::string fnv1a_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::io, "cannot hash " + path);
    std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return fnv1a_bytes(content.data(), content.size());
}

unsigned pipeline_thread_cap() {
    if (const char* env = std::getenv("SPINEVOX_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

nlohmann::json RunReport::to_json() const {
    nlohmann::json stages_json = nlohmann::json::array();
    for (const auto& s : stages) {
        nlohmann::json arts = nlohmann::json::array();
        for (const auto& a : s.artifacts) arts.push_back({{"name", a.name}, {"hash", a.hash}});
        stages_json.push_back({{"name", s.name},
                               {"millis", s.millis},
                               {"cached", s.cached},
                               {"skipped", s.skipped},
                               {"artifacts", arts},
                               {"metrics", s.metrics}});
    }
    return {{"patient_id", patient_id}, {"run_dir", run_dir}, {"stages", stages_json}};
}

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::io, "cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(is);

    Manifest m;
    m.patient_id = j.at("patient_id").get<std::string>();
    m.volume = j.at("volume").get<std::string>();
    m.label_volume = opt_string(j, "label_volume");
    m.boxes_jsonl = opt_string(j, "boxes_jsonl");
    m.masks_sagittal = opt_string(j, "masks_sagittal");
    m.masks_coronal = opt_string(j, "masks_coronal");
    m.predictions_csv = opt_string(j, "predictions_csv");

    if (j.contains("params")) {
        const auto& p = j.at("params");
        m.params.window.width = p.value("window_width", m.params.window.width);
        m.params.window.level = p.value("window_level", m.params.window.level);
        m.params.min_slices = p.value("min_slices", m.params.min_slices);
        m.params.t = p.value("t", m.params.t);
        m.params.margin = p.value("margin", m.params.margin);
        m.params.vote_thr = p.value("vote_thr", m.params.vote_thr);
        m.params.fuse_weight = p.value("fuse_weight", m.params.fuse_weight);
        m.params.adaptive.thr_low = p.value("thr_low", m.params.adaptive.thr_low);
        m.params.adaptive.thr_high = p.value("thr_high", m.params.adaptive.thr_high);
        m.params.adaptive.d_ref = p.value("d_ref", m.params.adaptive.d_ref);
    }
    if (m.patient_id.empty()) throw Error(Errc::format, "manifest patient_id is empty");
    return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
    nlohmann::json j{{"patient_id", m.patient_id}, {"volume", m.volume}};
    if (m.label_volume) j["label_volume"] = *m.label_volume;
    if (m.boxes_jsonl) j["boxes_jsonl"] = *m.boxes_jsonl;
    if (m.masks_sagittal) j["masks_sagittal"] = *m.masks_sagittal;
    if (m.masks_coronal) j["masks_coronal"] = *m.masks_coronal;
    if (m.predictions_csv) j["predictions_csv"] = *m.predictions_csv;
    j["params"] = {{"window_width", m.params.window.width},
                   {"window_level", m.params.window.level},
                   {"min_slices", m.params.min_slices},
                   {"t", m.params.t},
                   {"margin", m.params.margin},
                   {"vote_thr", m.params.vote_thr},
                   {"fuse_weight", m.params.fuse_weight},
                   {"thr_low", m.params.adaptive.thr_low},
                   {"thr_high", m.params.adaptive.thr_high},
                   {"d_ref", m.params.adaptive.d_ref}};
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(Errc::io, "cannot write " + path);
    os << j.dump(2) << "\n";
}

RunReport run_pipeline(const Manifest& manifest, const std::string& out_root,
                       LogFormat log_format, std::ostream* log) {
    Runner runner(manifest, out_root, log_format, log);
    return runner.run();
}

}  // namespace spinevox
