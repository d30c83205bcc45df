#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spinevox/aggregate.hpp"
#include "spinevox/metrics.hpp"
#include "spinevox/pipeline.hpp"
#include "spinevox/projection.hpp"
#include "spinevox/roivoi.hpp"
#include "spinevox/stacks.hpp"
#include "spinevox/vertmask.hpp"
#include "spinevox/voxgrid.hpp"

namespace {

using namespace spinevox;

std::array<std::size_t, 3> parse_dims(const std::string& s) {
    std::array<std::size_t, 3> dims{};
    if (std::sscanf(s.c_str(), "%zu,%zu,%zu", &dims[0], &dims[1], &dims[2]) != 3)
        throw Error(Errc::argument, "dims must be Z,Y,X");
    return dims;
}

std::array<double, 3> parse_spacing(const std::string& s) {
    std::array<double, 3> sp{};
    if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &sp[0], &sp[1], &sp[2]) != 3)
        throw Error(Errc::argument, "spacing must be sz,sy,sx");
    return sp;
}

int cmd_phantom(std::uint64_t seed, const std::string& dims_str, int n_vertebrae,
                const std::string& out_intensity, const std::string& out_label) {
    const auto dims = parse_dims(dims_str);
    const Phantom ph = make_phantom(seed, n_vertebrae, dims[0], dims[1], dims[2]);
    save_vvol(ph.intensity, out_intensity);
    save_vvol(ph.labels, out_label);
    std::cout << "phantom: " << dims[0] << "x" << dims[1] << "x" << dims[2] << ", "
              << n_vertebrae << " vertebrae -> " << out_intensity << ", " << out_label << "\n";
    return 0;
}

int cmd_project(const std::string& in, const std::string& axis, const std::string& op,
                const std::string& out) {
    const VoxelGrid grid = load_vvol(in);
    const ProjImage img = project(grid, axis_from_name(axis), projection_op_from_name(op));
    save_proj(img, out);
    std::cout << "project: " << op << " along " << axis << " -> " << out << " (" << img.h
              << "x" << img.w << ")\n";
    return 0;
}

int cmd_voi_fuse(const std::string& boxes_path, const std::string& dims_str, std::int64_t t,
                 const std::string& out) {
    const auto dims = parse_dims(dims_str);
    const auto boxes = load_boxes_jsonl(boxes_path);
    std::optional<Box2D> sag, cor, axi;
    for (const auto& vb : boxes) {
        if (vb.view == "sagittal") sag = vb.box;
        if (vb.view == "coronal") cor = vb.box;
        if (vb.view == "axial") axi = vb.box;
    }
    if (!sag || !cor || !axi)
        throw Error(Errc::argument, "boxes file must provide sagittal, coronal and axial boxes");
    const Box3D voi = fuse_voi(*cor, *sag, *axi, t, dims);
    nlohmann::json j{{"voi",
                      {{"z0", voi.z0}, {"z1", voi.z1}, {"y0", voi.y0},
                       {"y1", voi.y1}, {"x0", voi.x0}, {"x1", voi.x1}}},
                     {"t", t}};
    std::ofstream os(out, std::ios::trunc);
    if (!os) throw Error(Errc::io, "cannot write " + out);
    os << j.dump(2) << "\n";
    std::cout << "voi: z[" << voi.z0 << "," << voi.z1 << ") y[" << voi.y0 << "," << voi.y1
              << ") x[" << voi.x0 << "," << voi.x1 << ") -> " << out << "\n";
    return 0;
}

Box3D read_voi(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::io, "cannot open " + path);
    const nlohmann::json j = nlohmann::json::parse(is);
    const auto& v = j.at("voi");
    return Box3D{v.at("z0").get<std::int64_t>(), v.at("z1").get<std::int64_t>(),
                 v.at("y0").get<std::int64_t>(), v.at("y1").get<std::int64_t>(),
                 v.at("x0").get<std::int64_t>(), v.at("x1").get<std::int64_t>()};
}

int cmd_mask3d(const std::string& sag_path, const std::string& cor_path,
               const std::string& voi_path, const std::string& out_dir) {
    const MultiLabelMask sag = load_multilabel(sag_path);
    const MultiLabelMask cor = load_multilabel(cor_path);
    const Box3D voi = read_voi(voi_path);
    const ApproxMask3D approx = approximate_mask3d(
        sag, cor,
        {static_cast<std::size_t>(voi.z1 - voi.z0), static_cast<std::size_t>(voi.y1 - voi.y0),
         static_cast<std::size_t>(voi.x1 - voi.x0)});
    std::filesystem::create_directories(out_dir);
    for (int v = 1; v <= kCervicalCount; ++v) {
        const std::string path = out_dir + "/approx_c" + std::to_string(v) + ".vvol";
        save_vvol(approx.per_vertebra[static_cast<std::size_t>(v - 1)], path);
    }
    std::cout << "mask3d: wrote 7 approximated masks under " << out_dir << "\n";
    return 0;
}

int cmd_extract(const std::string& vol_path, const std::string& masks_dir,
                const std::string& voi_path, std::int64_t margin, const std::string& out_dir) {
    VoxelGrid vol = load_vvol(vol_path);
    if (!voi_path.empty()) {
        // Masks live in VOI coordinates; crop the volume to match.
        const Box3D voi = read_voi(voi_path);
        vol = crop(vol, static_cast<std::size_t>(voi.z0), static_cast<std::size_t>(voi.z1),
                   static_cast<std::size_t>(voi.y0), static_cast<std::size_t>(voi.y1),
                   static_cast<std::size_t>(voi.x0), static_cast<std::size_t>(voi.x1));
    }
    ApproxMask3D approx;
    for (int v = 1; v <= kCervicalCount; ++v)
        approx.per_vertebra[static_cast<std::size_t>(v - 1)] =
            load_vvol(masks_dir + "/approx_c" + std::to_string(v) + ".vvol");
    std::filesystem::create_directories(out_dir);
    int written = 0;
    for (int v = 1; v <= kCervicalCount; ++v) {
        try {
            const VoxelGrid vert = extract_vertebra(vol, approx, v, margin);
            save_vvol(vert, out_dir + "/vert_c" + std::to_string(v) + ".vvol");
            ++written;
        } catch (const Error& e) {
            if (e.code() != Errc::empty_mask) throw;
            std::cerr << "extract: C" << v << " excluded (empty mask)\n";
        }
    }
    std::cout << "extract: wrote " << written << " vertebra volumes under " << out_dir << "\n";
    return 0;
}

int cmd_stacks(const std::string& vert_path, const std::string& variant, double width,
               double level, const std::string& out) {
    const VoxelGrid vert = load_vvol(vert_path);
    const WindowSpec window{width, level};
    const StackSet set = stack_variant_from_name(variant) == StackVariant::raw
                             ? build_raw_stacks(vert, window)
                             : build_mip_stacks(vert, window);
    save_stackset(set, out);
    std::cout << "stacks: " << variant << " -> " << out << " (15x5x256x256)\n";
    return 0;
}

int cmd_aggregate(const std::string& pred_path, const std::string& mode, double thr_low,
                  double thr_high, double d_ref, double vote_thr, const std::string& out) {
    const PredictionTable table = load_predictions_csv(pred_path);
    AdaptiveParams params;
    params.thr_low = thr_low;
    params.thr_high = thr_high;
    params.d_ref = d_ref;
    if (mode != "adaptive" && mode != "if-any")
        throw Error(Errc::argument, "mode must be adaptive or if-any");

    std::vector<PatientDecision> decisions;
    for (const auto& patient : table.patients())
        decisions.push_back(aggregate_patient(table, patient, vote_thr, 0.5, params));
    save_decisions_jsonl(decisions, out);

    for (const auto& d : decisions) {
        const bool flagged = (mode == "adaptive") ? d.adaptive.fractured : d.if_any;
        std::cout << d.patient_id << ": " << (flagged ? "fractured" : "intact")
                  << " (score " << d.adaptive.score << ", threshold " << d.adaptive.threshold
                  << ")\n";
    }
    return 0;
}

int cmd_evaluate(const std::string& pred_path, const std::string& gt_path,
                 const std::string& spacing_str, const std::string& json_out) {
    const VoxelGrid pred = load_vvol(pred_path);
    const VoxelGrid gt = load_vvol(gt_path);
    const auto spacing = parse_spacing(spacing_str);
    const OverlapResult ov = overlap_metrics(pred, gt);
    nlohmann::json j{{"iou", ov.iou}, {"dice", ov.dice}};
    bool pred_any = false, gt_any = false;
    for (float v : pred.voxels) pred_any |= v != 0.0f;
    for (float v : gt.voxels) gt_any |= v != 0.0f;
    if (pred_any && gt_any) j["hd95"] = hd95(pred, gt, spacing);
    if (!json_out.empty()) {
        std::ofstream os(json_out, std::ios::trunc);
        if (!os) throw Error(Errc::io, "cannot write " + json_out);
        os << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_kappa(const std::string& ratings_path, const std::string& mode) {
    const RatingTable table = load_ratings_csv(ratings_path);
    if (mode == "fleiss") {
        const KappaResult r =
            fleiss_kappa(table.counts, static_cast<int>(table.raters.size()));
        std::cout << "fleiss_kappa: " << r.kappa << (r.degenerate ? " (degenerate)" : "")
                  << "\n";
        return 0;
    }
    if (mode == "cohen") {
        if (table.raters.size() != 2)
            throw Error(Errc::argument, "cohen mode needs exactly 2 raters");
        const KappaResult r = cohen_kappa(table.by_rater[0], table.by_rater[1]);
        std::cout << "cohen_kappa: " << r.kappa << (r.degenerate ? " (degenerate)" : "") << "\n";
        return 0;
    }
    throw Error(Errc::argument, "mode must be fleiss or cohen");
}

int cmd_run(const std::string& manifest_path, const std::string& out_root,
            const std::string& log_format) {
    const Manifest manifest = load_manifest(manifest_path);
    const LogFormat fmt = log_format == "json" ? LogFormat::json : LogFormat::text;
    try {
        const RunReport report = run_pipeline(manifest, out_root, fmt, &std::cerr);
        std::cout << report.to_json().dump(2) << "\n";
        return 0;
    } catch (const Error& e) {
        // Stage-specific exit codes: 10 + index of the stage named in the
        // message, 1 otherwise.
        std::cerr << "error: " << e.what() << "\n";
        const auto& names = pipeline_stage_names();
        for (std::size_t i = 0; i < names.size(); ++i)
            if (std::string(e.what()).find(names[i] + ":") != std::string::npos)
                return static_cast<int>(10 + i);
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spinevox - projection-driven cervical spine volume pipeline"};
    app.require_subcommand(1);

    // phantom
    std::uint64_t seed = 0;
    std::string dims = "160,96,96";
    int n_vertebrae = 7;
    std::string out_intensity, out_label;
    auto* phantom = app.add_subcommand("phantom", "generate a synthetic spine volume pair");
    phantom->add_option("--seed", seed, "RNG seed")->required();
    phantom->add_option("--dims", dims, "Z,Y,X");
    phantom->add_option("--n", n_vertebrae, "number of vertebrae");
    phantom->add_option("--out-intensity", out_intensity)->required();
    phantom->add_option("--out-label", out_label)->required();

    // project
    std::string proj_in, proj_axis = "sagittal", proj_op = "variance", proj_out;
    auto* proj = app.add_subcommand("project", "reduce a volume to a 2D projection");
    proj->add_option("--in", proj_in)->required();
    proj->add_option("--axis", proj_axis, "axial|sagittal|coronal");
    proj->add_option("--op", proj_op, "one of the 27 operators");
    proj->add_option("--out", proj_out)->required();

    // voi-fuse
    std::string boxes_path, fuse_dims, voi_out;
    std::int64_t t = 20;
    auto* fuse = app.add_subcommand("voi-fuse", "fuse per-view boxes into a 3D VOI");
    fuse->add_option("--boxes", boxes_path)->required();
    fuse->add_option("--dims", fuse_dims, "Z,Y,X")->required();
    fuse->add_option("--t", t, "tolerance per side");
    fuse->add_option("--out", voi_out)->required();

    // mask3d
    std::string sag_path, cor_path, voi_path, mask_out_dir;
    auto* mask3d = app.add_subcommand("mask3d", "approximate per-vertebra 3D masks");
    mask3d->add_option("--sag", sag_path)->required();
    mask3d->add_option("--cor", cor_path)->required();
    mask3d->add_option("--voi", voi_path)->required();
    mask3d->add_option("--out-dir", mask_out_dir)->required();

    // extract
    std::string vol_path, masks_dir, extract_voi, extract_out;
    std::int64_t margin = 0;
    auto* extract = app.add_subcommand("extract", "crop vertebra volumes by mask bbox");
    extract->add_option("--vol", vol_path)->required();
    extract->add_option("--masks", masks_dir)->required();
    extract->add_option("--voi", extract_voi, "crop the volume to this VOI first");
    extract->add_option("--margin", margin);
    extract->add_option("--out-dir", extract_out)->required();

    // stacks
    std::string vert_path, variant = "raw", stacks_out;
    double win_width = 400.0, win_level = 1400.0;
    auto* stacks = app.add_subcommand("stacks", "build 2.5D classifier inputs");
    stacks->add_option("--vert", vert_path)->required();
    stacks->add_option("--variant", variant, "raw|mip");
    stacks->add_option("--window-width", win_width);
    stacks->add_option("--window-level", win_level);
    stacks->add_option("--out", stacks_out)->required();

    // aggregate
    std::string pred_path, agg_mode = "adaptive", agg_out;
    double thr_low = 0.4, thr_high = 0.6, d_ref = 0.2, vote_thr = 0.5;
    auto* agg = app.add_subcommand("aggregate", "patient-level decisions from predictions");
    agg->add_option("--pred", pred_path)->required();
    agg->add_option("--mode", agg_mode, "adaptive|if-any");
    agg->add_option("--thr-low", thr_low);
    agg->add_option("--thr-high", thr_high);
    agg->add_option("--d-ref", d_ref);
    agg->add_option("--vote-thr", vote_thr);
    agg->add_option("--out", agg_out)->required();

    // evaluate
    std::string eval_pred, eval_gt, eval_spacing = "1,1,1", eval_json;
    auto* eval = app.add_subcommand("evaluate", "overlap metrics between two masks");
    eval->add_option("--pred-mask", eval_pred)->required();
    eval->add_option("--gt-mask", eval_gt)->required();
    eval->add_option("--spacing", eval_spacing, "sz,sy,sx");
    eval->add_option("--json", eval_json);

    // kappa
    std::string ratings_path, kappa_mode = "fleiss";
    auto* kappa = app.add_subcommand("kappa", "inter-rater agreement from a ratings CSV");
    kappa->add_option("--ratings", ratings_path)->required();
    kappa->add_option("--mode", kappa_mode, "fleiss|cohen");

    // run
    std::string manifest_path, run_out = "runs", log_format = "text";
    auto* run = app.add_subcommand("run", "execute the full pipeline for a manifest");
    run->add_option("--manifest", manifest_path)->required();
    run->add_option("--out", run_out);
    run->add_option("--log-format", log_format, "text|json");

    CLI11_PARSE(app, argc, argv);

    try {
        if (phantom->parsed())
            return cmd_phantom(seed, dims, n_vertebrae, out_intensity, out_label);
        if (proj->parsed()) return cmd_project(proj_in, proj_axis, proj_op, proj_out);
        if (fuse->parsed()) return cmd_voi_fuse(boxes_path, fuse_dims, t, voi_out);
        if (mask3d->parsed()) return cmd_mask3d(sag_path, cor_path, voi_path, mask_out_dir);
        if (extract->parsed())
            return cmd_extract(vol_path, masks_dir, extract_voi, margin, extract_out);
        if (stacks->parsed())
            return cmd_stacks(vert_path, variant, win_width, win_level, stacks_out);
        if (agg->parsed())
            return cmd_aggregate(pred_path, agg_mode, thr_low, thr_high, d_ref, vote_thr,
                                 agg_out);
        if (eval->parsed()) return cmd_evaluate(eval_pred, eval_gt, eval_spacing, eval_json);
        if (kappa->parsed()) return cmd_kappa(ratings_path, kappa_mode);
        if (run->parsed()) return cmd_run(manifest_path, run_out, log_format);
    } catch (const spinevox::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
