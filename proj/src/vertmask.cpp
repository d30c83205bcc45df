#include "spinevox/vertmask.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace spinevox {

std::size_t Mask2D::count() const {
    return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
}

Mask2D make_mask2d(std::size_t h, std::size_t w) {
    if (h == 0 || w == 0) throw Error(Errc::geometry, "mask dims must be positive");
    Mask2D m;
    m.h = h;
    m.w = w;
    m.pixels.assign(h * w, 0);
    return m;
}

MultiLabelMask multilabel_project(const VoxelGrid& mask3d, Axis axis) {
    if (mask3d.kind != GridKind::label)
        throw Error(Errc::kind, "multilabel_project expects a label grid");
    if (axis == Axis::axial)
        throw Error(Errc::argument, "vertebra channels are sagittal or coronal only");
    mask3d.validate();

    MultiLabelMask out;
    out.axis = axis;
    const std::size_t h = mask3d.nz;
    const std::size_t w = (axis == Axis::sagittal) ? mask3d.ny : mask3d.nx;
    for (auto& ch : out.channels) ch = make_mask2d(h, w);

    for (std::size_t z = 0; z < mask3d.nz; ++z)
        for (std::size_t y = 0; y < mask3d.ny; ++y)
            for (std::size_t x = 0; x < mask3d.nx; ++x) {
                const int v = static_cast<int>(mask3d.at(z, y, x));
                if (v < 1 || v > kCervicalCount) continue;
                const std::size_t col = (axis == Axis::sagittal) ? y : x;
                out.channels[static_cast<std::size_t>(v - 1)].at(z, col) = 1;
            }
    return out;
}

ApproxMask3D approximate_mask3d(const MultiLabelMask& sag, const MultiLabelMask& cor,
                                std::array<std::size_t, 3> voi_dims) {
    const auto [nz, ny, nx] = voi_dims;
    if (sag.axis != Axis::sagittal || cor.axis != Axis::coronal)
        throw Error(Errc::argument, "expected one sagittal and one coronal mask");
    if (sag.h() != nz || sag.w() != ny || cor.h() != nz || cor.w() != nx)
        throw Error(Errc::shape, "mask dims inconsistent with the VOI dims");

    ApproxMask3D out;
    for (int v = 0; v < kCervicalCount; ++v) {
        const Mask2D& s = sag.channels[static_cast<std::size_t>(v)];
        const Mask2D& c = cor.channels[static_cast<std::size_t>(v)];
        VoxelGrid g = make_grid(nz, ny, nx, GridKind::label);
        for (std::size_t z = 0; z < nz; ++z)
            for (std::size_t y = 0; y < ny; ++y) {
                if (!s.at(z, y)) continue;
                double* row = g.voxels.data() + (z * ny + y) * nx;
                const std::uint8_t* crow = c.pixels.data() + z * nx;
                for (std::size_t x = 0; x < nx; ++x)
                    if (crow[x]) row[x] = 1.0;
            }
        out.per_vertebra[static_cast<std::size_t>(v)] = std::move(g);
    }
    return out;
}

namespace {

// Nearest-neighbour sampling with the half-pixel centre convention.
Mask2D resize_nearest(const Mask2D& in, std::size_t oh, std::size_t ow) {
    Mask2D out = make_mask2d(oh, ow);
    const double sr = static_cast<double>(in.h) / static_cast<double>(oh);
    const double sc = static_cast<double>(in.w) / static_cast<double>(ow);
    for (std::size_t r = 0; r < oh; ++r) {
        const auto ir = std::min<std::size_t>(
            in.h - 1, static_cast<std::size_t>((static_cast<double>(r) + 0.5) * sr));
        for (std::size_t c = 0; c < ow; ++c) {
            const auto ic = std::min<std::size_t>(
                in.w - 1, static_cast<std::size_t>((static_cast<double>(c) + 0.5) * sc));
            out.at(r, c) = in.at(ir, ic);
        }
    }
    return out;
}

}  // namespace

Mask2D square_pad_resize(const Mask2D& mask, std::size_t side) {
    if (mask.h == 0 || mask.w == 0) throw Error(Errc::shape, "empty mask");
    const std::size_t s = std::max(mask.h, mask.w);
    Mask2D padded = make_mask2d(s, s);
    const std::size_t r0 = (s - mask.h) / 2;
    const std::size_t c0 = (s - mask.w) / 2;
    for (std::size_t r = 0; r < mask.h; ++r)
        std::copy_n(mask.pixels.data() + r * mask.w, mask.w,
                    padded.pixels.data() + (r + r0) * s + c0);
    return resize_nearest(padded, side, side);
}

MultiLabelMask unpad_resize_mask(const MultiLabelMask& pred, std::size_t orig_h,
                                 std::size_t orig_w) {
    if (orig_h == 0 || orig_w == 0) throw Error(Errc::argument, "original dims must be positive");
    MultiLabelMask out;
    out.axis = pred.axis;
    const std::size_t s = std::max(orig_h, orig_w);
    const std::size_t r0 = (s - orig_h) / 2;
    const std::size_t c0 = (s - orig_w) / 2;
    for (int v = 0; v < kCervicalCount; ++v) {
        const Mask2D square = resize_nearest(pred.channels[static_cast<std::size_t>(v)], s, s);
        Mask2D ch = make_mask2d(orig_h, orig_w);
        for (std::size_t r = 0; r < orig_h; ++r)
            std::copy_n(square.pixels.data() + (r + r0) * s + c0, orig_w,
                        ch.pixels.data() + r * orig_w);
        out.channels[static_cast<std::size_t>(v)] = std::move(ch);
    }
    return out;
}

Box3D approx_bbox(const ApproxMask3D& approx, int vertebra) {
    if (vertebra < 1 || vertebra > kCervicalCount)
        throw Error(Errc::argument, "vertebra index must be in 1..7");
    const VoxelGrid& g = approx.per_vertebra[static_cast<std::size_t>(vertebra - 1)];
    Box3D box{static_cast<std::int64_t>(g.nz), 0, static_cast<std::int64_t>(g.ny), 0,
              static_cast<std::int64_t>(g.nx), 0};
    bool any = false;
    for (std::size_t z = 0; z < g.nz; ++z)
        for (std::size_t y = 0; y < g.ny; ++y)
            for (std::size_t x = 0; x < g.nx; ++x)
                if (g.at(z, y, x) != 0.0) {
                    any = true;
                    box.z0 = std::min<std::int64_t>(box.z0, static_cast<std::int64_t>(z));
                    box.z1 = std::max<std::int64_t>(box.z1, static_cast<std::int64_t>(z) + 1);
                    box.y0 = std::min<std::int64_t>(box.y0, static_cast<std::int64_t>(y));
                    box.y1 = std::max<std::int64_t>(box.y1, static_cast<std::int64_t>(y) + 1);
                    box.x0 = std::min<std::int64_t>(box.x0, static_cast<std::int64_t>(x));
                    box.x1 = std::max<std::int64_t>(box.x1, static_cast<std::int64_t>(x) + 1);
                }
    if (!any)
        throw Error(Errc::empty_mask,
                    "approximated mask for C" + std::to_string(vertebra) + " is empty");
    return box;
}

VoxelGrid extract_vertebra(const VoxelGrid& vol, const ApproxMask3D& approx, int vertebra,
                           std::int64_t margin) {
    if (margin < 0) throw Error(Errc::argument, "margin must be >= 0");
    const VoxelGrid& mask = approx.per_vertebra[static_cast<std::size_t>(vertebra - 1)];
    if (mask.nz != vol.nz || mask.ny != vol.ny || mask.nx != vol.nx)
        throw Error(Errc::shape, "mask dims differ from the volume dims");
    Box3D box = approx_bbox(approx, vertebra);
    box.z0 = std::max<std::int64_t>(0, box.z0 - margin);
    box.y0 = std::max<std::int64_t>(0, box.y0 - margin);
    box.x0 = std::max<std::int64_t>(0, box.x0 - margin);
    box.z1 = std::min<std::int64_t>(static_cast<std::int64_t>(vol.nz), box.z1 + margin);
    box.y1 = std::min<std::int64_t>(static_cast<std::int64_t>(vol.ny), box.y1 + margin);
    box.x1 = std::min<std::int64_t>(static_cast<std::int64_t>(vol.nx), box.x1 + margin);
    return crop(vol, static_cast<std::size_t>(box.z0), static_cast<std::size_t>(box.z1),
                static_cast<std::size_t>(box.y0), static_cast<std::size_t>(box.y1),
                static_cast<std::size_t>(box.x0), static_cast<std::size_t>(box.x1));
}

void save_multilabel(const MultiLabelMask& mask, const std::string& path) {
    VoxelGrid g = make_grid(kCervicalCount, mask.h(), mask.w(), GridKind::label);
    for (int v = 0; v < kCervicalCount; ++v) {
        const Mask2D& ch = mask.channels[static_cast<std::size_t>(v)];
        if (ch.h != mask.h() || ch.w != mask.w())
            throw Error(Errc::shape, "channel dims differ");
        for (std::size_t i = 0; i < ch.pixels.size(); ++i)
            g.voxels[static_cast<std::size_t>(v) * ch.pixels.size() + i] = ch.pixels[i];
    }
    save_vvol(g, path);
    nlohmann::json meta{{"axis", axis_name(mask.axis)}, {"channels", kCervicalCount}};
    std::ofstream ms(path + ".json", std::ios::trunc);
    if (!ms) throw Error(Errc::io, "cannot write " + path + ".json");
    ms << meta.dump(2) << "\n";
}

MultiLabelMask load_multilabel(const std::string& path) {
    // Ground-truth channels arrive as label-kind planes; external segmenters
    // may hand back intensity-kind probability planes, binarized at 0.5.
    VoxelGrid g = load_vvol(path);
    if (g.nz != kCervicalCount)
        throw Error(Errc::format, "multi-label file must hold exactly 7 planes");
    std::ifstream ms(path + ".json");
    if (!ms) throw Error(Errc::io, "missing sidecar " + path + ".json");
    nlohmann::json meta = nlohmann::json::parse(ms);

    MultiLabelMask out;
    out.axis = axis_from_name(meta.at("axis").get<std::string>());
    for (int v = 0; v < kCervicalCount; ++v) {
        Mask2D ch = make_mask2d(g.ny, g.nx);
        for (std::size_t i = 0; i < ch.pixels.size(); ++i) {
            const double raw = g.voxels[static_cast<std::size_t>(v) * ch.pixels.size() + i];
            ch.pixels[i] = (g.kind == GridKind::label ? raw != 0.0 : raw >= 0.5) ? 1 : 0;
        }
        out.channels[static_cast<std::size_t>(v)] = std::move(ch);
    }
    return out;
}

}  // namespace spinevox
