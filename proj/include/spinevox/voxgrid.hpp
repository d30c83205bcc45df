#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spinevox/error.hpp"

namespace spinevox {

enum class GridKind : std::uint8_t { intensity = 0, label = 1 };

// Axis order is fixed project-wide: z = axial slice index, y = rows
// (anterior-posterior), x = cols (left-right). Voxels are stored z-major:
// index = (z * ny + y) * nx + x.
struct VoxelGrid {
    std::size_t nz = 0, ny = 0, nx = 0;
    // Millimetres per voxel along (z, y, x).
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    GridKind kind = GridKind::intensity;
    // HU for intensity grids; integer codes 0-19 for label grids
    // (0 background, 1-7 cervical C1-C7, 8-19 thoracic). Held as double in
    // memory; the VVOL container stores f32 / u8.
    std::vector<double> voxels;

    std::size_t size() const { return nz * ny * nx; }
    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
        return (z * ny + y) * nx + x;
    }
    double at(std::size_t z, std::size_t y, std::size_t x) const {
        return voxels[index(z, y, x)];
    }
    double& at(std::size_t z, std::size_t y, std::size_t x) {
        return voxels[index(z, y, x)];
    }

    // Throws Errc::geometry / Errc::value / Errc::argument on a violated invariant.
    void validate() const;
};

VoxelGrid make_grid(std::size_t nz, std::size_t ny, std::size_t nx,
                    GridKind kind = GridKind::intensity, double fill = 0.0);

// VVOL binary container, little-endian:
//   magic "VVOL" | version u32=1 | kind u8 | pad[3] | Z u32 | Y u32 | X u32 |
//   sz f32 | sy f32 | sx f32 | voxels (f32 for intensity, u8 for label), z-major.
VoxelGrid load_vvol(const std::string& path);
void save_vvol(const VoxelGrid& grid, const std::string& path);

struct WindowSpec {
    double width = 400.0;   // HU, > 0
    double level = 1400.0;  // HU
};

// Linear HU window: v -> clamp((v - (level - width/2)) / width, 0, 1).
// Output is normalized to [0,1]; monotone non-decreasing in v. Re-windowing an
// already windowed grid is only the identity for width=1, level=0.5.
VoxelGrid apply_window(const VoxelGrid& grid, const WindowSpec& w);

// Resamples along z to exactly max(Z, min_slices) slices. Intensity grids use
// a natural cubic spline per (y,x) column; label grids use nearest-neighbour
// so no new label codes appear. Spacing sz is rescaled to preserve the
// physical extent Z*sz.
VoxelGrid interpolate_slices(const VoxelGrid& grid, std::size_t min_slices = 400);

// Copies the half-open sub-box [z0,z1) x [y0,y1) x [x0,x1); bounds must lie
// inside the grid and be non-empty.
VoxelGrid crop(const VoxelGrid& grid, std::size_t z0, std::size_t z1, std::size_t y0,
               std::size_t y1, std::size_t x0, std::size_t x1);

struct Phantom {
    VoxelGrid intensity;
    VoxelGrid labels;
};

// Deterministic synthetic cervical spine: n_vertebrae disjoint superellipsoid
// bodies (labels 1..n) stacked along z with a seed-dependent sinusoidal
// lateral offset, bone ~1200 HU inside, soft tissue ~40 HU + bounded noise
// outside. Consecutive bodies stay laterally close enough that every
// orthogonal projection of the union is 8-connected.
Phantom make_phantom(std::uint64_t seed, int n_vertebrae, std::size_t nz,
                     std::size_t ny, std::size_t nx);

}  // namespace spinevox
