#include "spinevox/stacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace spinevox {

const char* stack_variant_name(StackVariant v) {
    return v == StackVariant::raw ? "raw" : "mip";
}

StackVariant stack_variant_from_name(const std::string& name) {
    if (name == "raw") return StackVariant::raw;
    if (name == "mip") return StackVariant::mip;
    throw Error(Errc::argument, "unknown stack variant '" + name + "'");
}

std::vector<std::size_t> even_centers(std::size_t z, std::size_t k) {
    if (z == 0 || k == 0) throw Error(Errc::argument, "empty volume or zero centres");
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double t = (k == 1) ? 0.0
                                  : static_cast<double>(i) * static_cast<double>(z - 1) /
                                        static_cast<double>(k - 1);
        out[i] = static_cast<std::size_t>(std::floor(t + 0.5));
    }
    return out;
}

Plane windowed_slice(const VoxelGrid& vert, std::ptrdiff_t z) {
    const auto zi = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(z, 0, static_cast<std::ptrdiff_t>(vert.nz) - 1));
    Plane p;
    p.h = vert.ny;
    p.w = vert.nx;
    p.pixels.assign(vert.voxels.begin() + static_cast<std::ptrdiff_t>(zi * vert.ny * vert.nx),
                    vert.voxels.begin() + static_cast<std::ptrdiff_t>((zi + 1) * vert.ny * vert.nx));
    return p;
}

Plane mini_stack_mip(const VoxelGrid& vert, std::ptrdiff_t center) {
    Plane out = windowed_slice(vert, center - 2);
    for (std::ptrdiff_t dz = -1; dz <= 2; ++dz) {
        const Plane p = windowed_slice(vert, center + dz);
        for (std::size_t i = 0; i < out.pixels.size(); ++i)
            out.pixels[i] = std::max(out.pixels[i], p.pixels[i]);
    }
    return out;
}

Plane square_pad_resize_bilinear(const Plane& plane, std::size_t side) {
    if (plane.h == 0 || plane.w == 0) throw Error(Errc::shape, "empty plane");
    const std::size_t s = std::max(plane.h, plane.w);
    const std::size_t r0 = (s - plane.h) / 2;
    const std::size_t c0 = (s - plane.w) / 2;

    // Sample the padded square directly; out-of-window taps are the zero pad.
    auto padded = [&](std::ptrdiff_t r, std::ptrdiff_t c) -> double {
        r -= static_cast<std::ptrdiff_t>(r0);
        c -= static_cast<std::ptrdiff_t>(c0);
        if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(plane.h) ||
            c >= static_cast<std::ptrdiff_t>(plane.w))
            return 0.0;
        return plane.pixels[static_cast<std::size_t>(r) * plane.w + static_cast<std::size_t>(c)];
    };

    Plane out;
    out.h = side;
    out.w = side;
    out.pixels.assign(side * side, 0.0f);
    const double scale = static_cast<double>(s) / static_cast<double>(side);
    for (std::size_t r = 0; r < side; ++r) {
        const double sr = (static_cast<double>(r) + 0.5) * scale - 0.5;
        const double fr = std::clamp(sr, 0.0, static_cast<double>(s - 1));
        const auto r1 = static_cast<std::ptrdiff_t>(fr);
        const auto r2 = std::min<std::ptrdiff_t>(r1 + 1, static_cast<std::ptrdiff_t>(s) - 1);
        const double ar = fr - static_cast<double>(r1);
        for (std::size_t c = 0; c < side; ++c) {
            const double sc = (static_cast<double>(c) + 0.5) * scale - 0.5;
            const double fc = std::clamp(sc, 0.0, static_cast<double>(s - 1));
            const auto c1 = static_cast<std::ptrdiff_t>(fc);
            const auto c2 = std::min<std::ptrdiff_t>(c1 + 1, static_cast<std::ptrdiff_t>(s) - 1);
            const double ac = fc - static_cast<double>(c1);
            const double v = (1.0 - ar) * ((1.0 - ac) * padded(r1, c1) + ac * padded(r1, c2)) +
                             ar * ((1.0 - ac) * padded(r2, c1) + ac * padded(r2, c2));
            out.pixels[r * side + c] = static_cast<float>(v);
        }
    }
    return out;
}

namespace {

StackSet build_stacks(const VoxelGrid& vert, const WindowSpec& window, StackVariant variant) {
    if (vert.size() == 0 || vert.nz == 0) throw Error(Errc::empty_input, "empty vertebra volume");
    const VoxelGrid win = apply_window(vert, window);

    StackSet set;
    set.variant = variant;
    if (variant == StackVariant::raw) {
        const auto centers = even_centers(win.nz, kStackCount);
        for (std::size_t i = 0; i < kStackCount; ++i) {
            SliceStack& st = set.stacks[i];
            st.index = static_cast<int>(i);
            st.variant = variant;
            st.center = centers[i];
            for (std::ptrdiff_t dz = -2; dz <= 2; ++dz) {
                const Plane p = windowed_slice(win, static_cast<std::ptrdiff_t>(centers[i]) + dz);
                st.planes[static_cast<std::size_t>(dz + 2)] =
                    square_pad_resize_bilinear(p, kStackSide);
            }
        }
    } else {
        const auto centers = even_centers(win.nz, kStackCount * kPlanesPerStack);
        for (std::size_t i = 0; i < kStackCount; ++i) {
            SliceStack& st = set.stacks[i];
            st.index = static_cast<int>(i);
            st.variant = variant;
            st.center = centers[i * kPlanesPerStack + kPlanesPerStack / 2];
            for (std::size_t j = 0; j < kPlanesPerStack; ++j) {
                const Plane mip = mini_stack_mip(
                    win, static_cast<std::ptrdiff_t>(centers[i * kPlanesPerStack + j]));
                st.planes[j] = square_pad_resize_bilinear(mip, kStackSide);
            }
        }
    }
    return set;
}

}  // namespace

StackSet build_raw_stacks(const VoxelGrid& vert, const WindowSpec& window) {
    return build_stacks(vert, window, StackVariant::raw);
}

StackSet build_mip_stacks(const VoxelGrid& vert, const WindowSpec& window) {
    return build_stacks(vert, window, StackVariant::mip);
}

void save_stackset(const StackSet& set, const std::string& path) {
    VoxelGrid g = make_grid(kStackCount * kPlanesPerStack, kStackSide, kStackSide,
                            GridKind::intensity);
    nlohmann::json centers = nlohmann::json::array();
    int vertebra = 0;
    for (std::size_t i = 0; i < kStackCount; ++i) {
        const SliceStack& st = set.stacks[i];
        vertebra = st.vertebra;
        centers.push_back(st.center);
        for (std::size_t j = 0; j < kPlanesPerStack; ++j) {
            const Plane& p = st.planes[j];
            if (p.h != kStackSide || p.w != kStackSide)
                throw Error(Errc::shape, "stack planes must be 256x256");
            std::copy(p.pixels.begin(), p.pixels.end(),
                      g.voxels.begin() + static_cast<std::ptrdiff_t>(
                                             (i * kPlanesPerStack + j) * kStackSide * kStackSide));
        }
    }
    save_vvol(g, path);
    nlohmann::json meta{{"variant", stack_variant_name(set.variant)},
                        {"vertebra", vertebra},
                        {"centers", centers}};
    std::ofstream ms(path + ".json", std::ios::trunc);
    if (!ms) throw Error(Errc::io, "cannot write " + path + ".json");
    ms << meta.dump(2) << "\n";
}

StackSet load_stackset(const std::string& path) {
    VoxelGrid g = load_vvol(path);
    if (g.nz != kStackCount * kPlanesPerStack || g.ny != kStackSide || g.nx != kStackSide)
        throw Error(Errc::format, "stack file must hold 75 planes of 256x256");
    std::ifstream ms(path + ".json");
    if (!ms) throw Error(Errc::io, "missing sidecar " + path + ".json");
    nlohmann::json meta = nlohmann::json::parse(ms);

    StackSet set;
    set.variant = stack_variant_from_name(meta.at("variant").get<std::string>());
    const int vertebra = meta.value("vertebra", 0);
    const auto& centers = meta.at("centers");
    for (std::size_t i = 0; i < kStackCount; ++i) {
        SliceStack& st = set.stacks[i];
        st.index = static_cast<int>(i);
        st.variant = set.variant;
        st.vertebra = vertebra;
        st.center = centers.at(i).get<std::size_t>();
        for (std::size_t j = 0; j < kPlanesPerStack; ++j) {
            Plane& p = st.planes[j];
            p.h = kStackSide;
            p.w = kStackSide;
            const auto off = static_cast<std::ptrdiff_t>(
                (i * kPlanesPerStack + j) * kStackSide * kStackSide);
            p.pixels.assign(g.voxels.begin() + off,
                            g.voxels.begin() + off + kStackSide * kStackSide);
        }
    }
    return set;
}

}  // namespace spinevox
