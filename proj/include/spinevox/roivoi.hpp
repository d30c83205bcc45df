#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "spinevox/projection.hpp"
#include "spinevox/voxgrid.hpp"

namespace spinevox {

// Half-open pixel box. x runs along image columns (horizontal), y along rows
// (vertical), so under the projection convention a sagittal box has
// x = volume-y and y = volume-z, a coronal box x = volume-x, y = volume-z and
// an axial box x = volume-x, y = volume-y.
struct Box2D {
    std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool valid() const { return x0 < x1 && y0 < y1; }
    std::int64_t area() const { return (x1 - x0) * (y1 - y0); }
};

struct Box3D {
    std::int64_t z0 = 0, z1 = 0, y0 = 0, y1 = 0, x0 = 0, x1 = 0;

    bool valid() const { return z0 < z1 && y0 < y1 && x0 < x1; }
    std::int64_t volume() const { return (z1 - z0) * (y1 - y0) * (x1 - x0); }
    bool contains(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return z >= z0 && z < z1 && y >= y0 && y < y1 && x >= x0 && x < x1;
    }
};

// Half-open slice index ranges per view (sagittal: x indices, coronal: y,
// axial: z).
struct SliceRanges {
    std::pair<std::int64_t, std::int64_t> sagittal;
    std::pair<std::int64_t, std::int64_t> coronal;
    std::pair<std::int64_t, std::int64_t> axial;
};

// Keeps only the largest 8-connected component of a binary image; ties break
// toward the component whose first pixel comes first in raster order.
// Pixels must be exactly 0 or 1; an all-zero image is an error.
ProjImage largest_component(const ProjImage& binary);

// Binarizes the selected labels, max-projects along `axis`, keeps the largest
// 8-connected component and returns its tight bounding box.
Box2D bbox_from_mask(const VoxelGrid& mask3d, Axis axis, const std::set<int>& labels);

using DetectorFn = std::function<Box2D(const ProjImage&)>;

// Three-stage slice refinement: a variance projection over the clamped base
// sagittal range yields the sagittal box; its horizontal extent becomes the
// coronal slice range; the axial range is the rounded endpoint average of the
// two boxes' vertical (z) extents.
SliceRanges sequential_slice_select(const VoxelGrid& grid, const DetectorFn& detector,
                                    std::pair<std::int64_t, std::int64_t> base_sagittal = {100, 420},
                                    const ProjParams& params = {});

// Fuses the three per-view boxes into a 3D box: each volume extent is the
// endpoint-wise average of the two views that observe it, expanded outward by
// t per side and clamped to the grid. Endpoint averages round half away from
// zero.
Box3D fuse_voi(const Box2D& coronal, const Box2D& sagittal, const Box2D& axial,
               std::int64_t t, std::array<std::size_t, 3> grid_dims);

double box_iou(const Box2D& a, const Box2D& b);
double box_iou(const Box3D& a, const Box3D& b);

double miou(const std::vector<std::pair<Box2D, Box2D>>& pairs);
double miou(const std::vector<std::pair<Box3D, Box3D>>& pairs);

// Boxes JSONL: one object per line with keys view, x0, y0, x1, y1, score.
struct ViewBox {
    std::string view;
    Box2D box;
    double score = 0.0;
};

std::vector<ViewBox> load_boxes_jsonl(const std::string& path);
void save_boxes_jsonl(const std::vector<ViewBox>& boxes, const std::string& path);

}  // namespace spinevox
