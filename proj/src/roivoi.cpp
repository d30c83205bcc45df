#include "spinevox/roivoi.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

#include <json.hpp>

namespace spinevox {

namespace {

std::int64_t avg_round(std::int64_t a, std::int64_t b) {
    return std::llround((static_cast<double>(a) + static_cast<double>(b)) / 2.0);
}

// Crops the grid to a half-open range along one volume axis (0=z, 1=y, 2=x).
VoxelGrid crop_axis_range(const VoxelGrid& g, int vol_axis, std::int64_t lo, std::int64_t hi) {
    const std::int64_t dims[3] = {static_cast<std::int64_t>(g.nz),
                                  static_cast<std::int64_t>(g.ny),
                                  static_cast<std::int64_t>(g.nx)};
    lo = std::clamp<std::int64_t>(lo, 0, dims[vol_axis]);
    hi = std::clamp<std::int64_t>(hi, 0, dims[vol_axis]);
    if (lo >= hi) throw Error(Errc::geometry, "empty slice range after clamping");
    std::size_t b[3][2] = {{0, g.nz}, {0, g.ny}, {0, g.nx}};
    b[vol_axis][0] = static_cast<std::size_t>(lo);
    b[vol_axis][1] = static_cast<std::size_t>(hi);
    return crop(g, b[0][0], b[0][1], b[1][0], b[1][1], b[2][0], b[2][1]);
}

}  // namespace

ProjImage largest_component(const ProjImage& binary) {
    const std::size_t h = binary.h, w = binary.w;
    if (h == 0 || w == 0 || binary.pixels.size() != h * w)
        throw Error(Errc::shape, "inconsistent image");
    for (double v : binary.pixels)
        if (v != 0.0 && v != 1.0)
            throw Error(Errc::argument, "largest_component expects a 0/1 image");

    std::vector<std::int32_t> label(h * w, -1);
    std::int32_t next = 0;
    std::size_t best_size = 0;
    std::int32_t best_label = -1;
    std::deque<std::size_t> queue;

    for (std::size_t start = 0; start < h * w; ++start) {
        if (binary.pixels[start] != 1.0 || label[start] >= 0) continue;
        const std::int32_t id = next++;
        std::size_t count = 0;
        label[start] = id;
        queue.push_back(start);
        while (!queue.empty()) {
            const std::size_t i = queue.front();
            queue.pop_front();
            ++count;
            const std::int64_t r = static_cast<std::int64_t>(i / w);
            const std::int64_t c = static_cast<std::int64_t>(i % w);
            for (std::int64_t dr = -1; dr <= 1; ++dr)
                for (std::int64_t dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const std::int64_t rr = r + dr, cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= static_cast<std::int64_t>(h) ||
                        cc >= static_cast<std::int64_t>(w))
                        continue;
                    const std::size_t j =
                        static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
                    if (binary.pixels[j] == 1.0 && label[j] < 0) {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
        }
        // Raster-scan discovery order makes "first strictly larger" the
        // required tie rule: earlier component wins ties.
        if (count > best_size) {
            best_size = count;
            best_label = id;
        }
    }
    if (best_label < 0) throw Error(Errc::empty_mask, "no foreground pixels");

    ProjImage out = binary;
    for (std::size_t i = 0; i < h * w; ++i)
        out.pixels[i] = (label[i] == best_label) ? 1.0 : 0.0;
    return out;
}

Box2D bbox_from_mask(const VoxelGrid& mask3d, Axis axis, const std::set<int>& labels) {
    if (mask3d.kind != GridKind::label)
        throw Error(Errc::kind, "bbox_from_mask expects a label grid");
    VoxelGrid bin = mask3d;
    bool any = false;
    for (double& v : bin.voxels) {
        const bool hit = labels.count(static_cast<int>(v)) > 0 && v != 0.0;
        v = hit ? 1.0 : 0.0;
        any = any || hit;
    }
    if (!any) throw Error(Errc::empty_mask, "no voxels carry the requested labels");

    ProjImage proj = project(bin, axis, ProjectionOp::max);
    ProjImage comp = largest_component(proj);

    Box2D box{static_cast<std::int64_t>(comp.w), static_cast<std::int64_t>(comp.h), 0, 0};
    for (std::size_t r = 0; r < comp.h; ++r)
        for (std::size_t c = 0; c < comp.w; ++c)
            if (comp.at(r, c) == 1.0) {
                box.x0 = std::min(box.x0, static_cast<std::int64_t>(c));
                box.y0 = std::min(box.y0, static_cast<std::int64_t>(r));
                box.x1 = std::max(box.x1, static_cast<std::int64_t>(c) + 1);
                box.y1 = std::max(box.y1, static_cast<std::int64_t>(r) + 1);
            }
    return box;
}

SliceRanges sequential_slice_select(const VoxelGrid& grid, const DetectorFn& detector,
                                    std::pair<std::int64_t, std::int64_t> base_sagittal,
                                    const ProjParams& params) {
    grid.validate();
    if (base_sagittal.first < 0 || base_sagittal.first >= static_cast<std::int64_t>(grid.nx))
        throw Error(Errc::argument, "base sagittal range starts outside the grid");

    SliceRanges out;
    out.sagittal = {base_sagittal.first,
                    std::min<std::int64_t>(base_sagittal.second, static_cast<std::int64_t>(grid.nx))};

    VoxelGrid sag_sub = crop_axis_range(grid, 2, out.sagittal.first, out.sagittal.second);
    const Box2D sag_box = detector(project(sag_sub, Axis::sagittal, ProjectionOp::variance, params));
    if (!sag_box.valid())
        throw Error(Errc::geometry, "detector returned a degenerate box at the sagittal stage");

    // The sagittal box's horizontal extent indexes volume-y: the coronal range.
    out.coronal = {std::clamp<std::int64_t>(sag_box.x0, 0, static_cast<std::int64_t>(grid.ny)),
                   std::clamp<std::int64_t>(sag_box.x1, 0, static_cast<std::int64_t>(grid.ny))};
    if (out.coronal.first >= out.coronal.second)
        throw Error(Errc::geometry, "coronal slice range collapsed at the coronal stage");

    VoxelGrid cor_sub = crop_axis_range(grid, 1, out.coronal.first, out.coronal.second);
    const Box2D cor_box = detector(project(cor_sub, Axis::coronal, ProjectionOp::variance, params));
    if (!cor_box.valid())
        throw Error(Errc::geometry, "detector returned a degenerate box at the coronal stage");

    out.axial = {avg_round(sag_box.y0, cor_box.y0), avg_round(sag_box.y1, cor_box.y1)};
    out.axial.first = std::clamp<std::int64_t>(out.axial.first, 0, static_cast<std::int64_t>(grid.nz));
    out.axial.second = std::clamp<std::int64_t>(out.axial.second, 0, static_cast<std::int64_t>(grid.nz));
    if (out.axial.first >= out.axial.second)
        throw Error(Errc::geometry, "axial slice range collapsed at the axial stage");
    return out;
}

Box3D fuse_voi(const Box2D& coronal, const Box2D& sagittal, const Box2D& axial, std::int64_t t,
               std::array<std::size_t, 3> grid_dims) {
    if (!coronal.valid() || !sagittal.valid() || !axial.valid())
        throw Error(Errc::geometry, "fuse_voi requires valid boxes");
    if (t < 0) throw Error(Errc::argument, "tolerance must be >= 0");

    Box3D voi;
    // Height (z): coronal and sagittal vertical extents.
    voi.z0 = avg_round(coronal.y0, sagittal.y0) - t;
    voi.z1 = avg_round(coronal.y1, sagittal.y1) + t;
    // Width (x): coronal and axial horizontal extents.
    voi.x0 = avg_round(coronal.x0, axial.x0) - t;
    voi.x1 = avg_round(coronal.x1, axial.x1) + t;
    // Depth (y): sagittal horizontal and axial vertical extents.
    voi.y0 = avg_round(sagittal.x0, axial.y0) - t;
    voi.y1 = avg_round(sagittal.x1, axial.y1) + t;

    voi.z0 = std::clamp<std::int64_t>(voi.z0, 0, static_cast<std::int64_t>(grid_dims[0]));
    voi.z1 = std::clamp<std::int64_t>(voi.z1, 0, static_cast<std::int64_t>(grid_dims[0]));
    voi.y0 = std::clamp<std::int64_t>(voi.y0, 0, static_cast<std::int64_t>(grid_dims[1]));
    voi.y1 = std::clamp<std::int64_t>(voi.y1, 0, static_cast<std::int64_t>(grid_dims[1]));
    voi.x0 = std::clamp<std::int64_t>(voi.x0, 0, static_cast<std::int64_t>(grid_dims[2]));
    voi.x1 = std::clamp<std::int64_t>(voi.x1, 0, static_cast<std::int64_t>(grid_dims[2]));
    if (!voi.valid())
        throw Error(Errc::geometry, "fused VOI is empty after clamping to the grid");
    return voi;
}

double box_iou(const Box2D& a, const Box2D& b) {
    if (!a.valid() || !b.valid()) throw Error(Errc::geometry, "invalid box");
    const std::int64_t ix = std::max<std::int64_t>(
        0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const std::int64_t iy = std::max<std::int64_t>(
        0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const std::int64_t inter = ix * iy;
    const std::int64_t uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double box_iou(const Box3D& a, const Box3D& b) {
    if (!a.valid() || !b.valid()) throw Error(Errc::geometry, "invalid box");
    const std::int64_t iz = std::max<std::int64_t>(
        0, std::min(a.z1, b.z1) - std::max(a.z0, b.z0));
    const std::int64_t iy = std::max<std::int64_t>(
        0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const std::int64_t ix = std::max<std::int64_t>(
        0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const std::int64_t inter = iz * iy * ix;
    const std::int64_t uni = a.volume() + b.volume() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

template <typename BoxT>
double miou_impl(const std::vector<std::pair<BoxT, BoxT>>& pairs) {
    if (pairs.empty()) throw Error(Errc::empty_input, "miou over an empty sequence");
    double s = 0.0;
    for (const auto& [a, b] : pairs) s += box_iou(a, b);
    return s / static_cast<double>(pairs.size());
}

}  // namespace

double miou(const std::vector<std::pair<Box2D, Box2D>>& pairs) { return miou_impl(pairs); }
double miou(const std::vector<std::pair<Box3D, Box3D>>& pairs) { return miou_impl(pairs); }

std::vector<ViewBox> load_boxes_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::io, "cannot open " + path);
    std::vector<ViewBox> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ViewBox vb;
        vb.view = j.at("view").get<std::string>();
        vb.box = {j.at("x0").get<std::int64_t>(), j.at("y0").get<std::int64_t>(),
                  j.at("x1").get<std::int64_t>(), j.at("y1").get<std::int64_t>()};
        vb.score = j.value("score", 0.0);
        out.push_back(vb);
    }
    return out;
}

void save_boxes_jsonl(const std::vector<ViewBox>& boxes, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(Errc::io, "cannot write " + path);
    for (const auto& vb : boxes) {
        nlohmann::json j{{"view", vb.view}, {"x0", vb.box.x0}, {"y0", vb.box.y0},
                         {"x1", vb.box.x1}, {"y1", vb.box.y1}, {"score", vb.score}};
        os << j.dump() << "\n";
    }
}

}  // namespace spinevox
