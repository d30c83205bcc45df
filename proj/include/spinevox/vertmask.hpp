#pragma once

#include <array>
#include <string>

#include "spinevox/roivoi.hpp"
#include "spinevox/voxgrid.hpp"

namespace spinevox {

constexpr int kCervicalCount = 7;

struct Mask2D {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> pixels;  // 0/1, row-major

    std::size_t index(std::size_t r, std::size_t c) const { return r * w + c; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return pixels[index(r, c)]; }
    std::uint8_t& at(std::size_t r, std::size_t c) { return pixels[index(r, c)]; }
    std::size_t count() const;
};

Mask2D make_mask2d(std::size_t h, std::size_t w);

// Per-vertebra binary channels over one projection plane. Channels may
// overlap: distinct vertebrae can project onto the same pixel.
struct MultiLabelMask {
    Axis axis = Axis::sagittal;
    std::array<Mask2D, kCervicalCount> channels;  // C1..C7

    std::size_t h() const { return channels[0].h; }
    std::size_t w() const { return channels[0].w; }
};

// Channel v = max projection of (mask3d == v) along `axis`; axis must be
// sagittal or coronal.
MultiLabelMask multilabel_project(const VoxelGrid& mask3d, Axis axis);

// Per-vertebra approximated 3D masks: binary label grids aligned to the
// source VOI.
struct ApproxMask3D {
    std::array<VoxelGrid, kCervicalCount> per_vertebra;
};

// Shape-from-silhouette on two views: voxel (z,y,x) belongs to vertebra v iff
// sag_v(z,y) and cor_v(z,x). The true mask is always a subset of the result.
ApproxMask3D approximate_mask3d(const MultiLabelMask& sag, const MultiLabelMask& cor,
                                std::array<std::size_t, 3> voi_dims);

// Forward transform used by the segmentation input path: centre the mask in a
// square canvas and nearest-neighbour-resize to side x side.
Mask2D square_pad_resize(const Mask2D& mask, std::size_t side);

// Inverse of square-pad-then-resize: nearest-neighbour resize back to the
// padded square and crop the centred (H, W) window.
MultiLabelMask unpad_resize_mask(const MultiLabelMask& pred, std::size_t orig_h,
                                 std::size_t orig_w);

// Crops the tight bounding box of vertebra `v` (1-based) from `vol`, expanded
// by `margin` voxels per side and clamped; intensities are returned unmasked.
VoxelGrid extract_vertebra(const VoxelGrid& vol, const ApproxMask3D& approx, int vertebra,
                           std::int64_t margin = 0);

// Tight 3D box of the approximated mask for vertebra `v` (1-based).
Box3D approx_bbox(const ApproxMask3D& approx, int vertebra);

// Multi-label mask container: a VVOL label grid with Z=7 planes (channel
// order C1..C7) plus a JSON sidecar recording the projection axis.
void save_multilabel(const MultiLabelMask& mask, const std::string& path);
MultiLabelMask load_multilabel(const std::string& path);

}  // namespace spinevox
