#pragma once

#include <array>
#include <string>
#include <vector>

#include "spinevox/voxgrid.hpp"

namespace spinevox {

constexpr std::size_t kStackCount = 15;
constexpr std::size_t kPlanesPerStack = 5;
constexpr std::size_t kStackSide = 256;

enum class StackVariant { raw, mip };

const char* stack_variant_name(StackVariant v);
StackVariant stack_variant_from_name(const std::string& name);

struct Plane {
    std::size_t h = 0, w = 0;
    std::vector<float> pixels;

    float at(std::size_t r, std::size_t c) const { return pixels[r * w + c]; }
    float& at(std::size_t r, std::size_t c) { return pixels[r * w + c]; }
};

struct SliceStack {
    std::array<Plane, kPlanesPerStack> planes;  // 256x256 each, values in [0,1]
    int index = 0;                              // 0..14
    int vertebra = 0;                           // 1..7, 0 when unknown
    StackVariant variant = StackVariant::raw;
    std::size_t center = 0;                     // source slice index of the middle plane
};

struct StackSet {
    std::array<SliceStack, kStackCount> stacks;
    StackVariant variant = StackVariant::raw;
};

// Endpoint-inclusive linspace rounded half up: k evenly spaced slice indices
// covering [0, z-1].
std::vector<std::size_t> even_centers(std::size_t z, std::size_t k);

// Windowed axial plane at index `z` clamped to [0, Z-1] (border replication).
Plane windowed_slice(const VoxelGrid& windowed_vert, std::ptrdiff_t z);

// Pixel-wise maximum of the five windowed slices centred at `center`.
Plane mini_stack_mip(const VoxelGrid& windowed_vert, std::ptrdiff_t center);

// Zero-pads to a centred square and bilinearly resizes to side x side.
Plane square_pad_resize_bilinear(const Plane& plane, std::size_t side);

// 15 five-slice stacks: bone window, centres at even_centers(Z, 15), each
// stack the centre slice with its two neighbours either side (replicated at
// the ends), every plane square-padded and resized to 256x256.
StackSet build_raw_stacks(const VoxelGrid& vert, const WindowSpec& window);

// MIP variant: 75 even centres, a five-slice MIP per centre, grouped in order
// into 15 stacks of 5 MIPs; same padding and resize.
StackSet build_mip_stacks(const VoxelGrid& vert, const WindowSpec& window);

// Stacks persist as one VVOL intensity grid of 75 planes in stack-major order
// plus a JSON index (variant, vertebra, centres).
void save_stackset(const StackSet& set, const std::string& path);
StackSet load_stackset(const std::string& path);

}  // namespace spinevox
