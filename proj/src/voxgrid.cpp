#include "spinevox/voxgrid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace spinevox {

namespace {

constexpr char kMagic[4] = {'V', 'V', 'O', 'L'};
constexpr std::uint32_t kVersion = 1;
constexpr double kMaxLabelCode = 19.0;

// Raw reads/writes assume a little-endian host.
template <typename T>
void write_le(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_le(std::ifstream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return static_cast<bool>(is);
}

}  // namespace

void VoxelGrid::validate() const {
    if (nz == 0 || ny == 0 || nx == 0)
        throw Error(Errc::geometry, "grid has a zero dimension");
    if (voxels.size() != size())
        throw Error(Errc::truncation, "voxel buffer length does not match dims");
    for (double s : spacing)
        if (!(s > 0.0)) throw Error(Errc::argument, "spacing must be strictly positive");
    if (kind == GridKind::label) {
        for (double v : voxels) {
            if (v != std::floor(v) || v < 0.0f || v > kMaxLabelCode)
                throw Error(Errc::value, "label grid contains a code outside 0-19");
        }
    }
}

VoxelGrid make_grid(std::size_t nz, std::size_t ny, std::size_t nx, GridKind kind, double fill) {
    if (nz == 0 || ny == 0 || nx == 0)
        throw Error(Errc::geometry, "grid dims must be positive");
    VoxelGrid g;
    g.nz = nz;
    g.ny = ny;
    g.nx = nx;
    g.kind = kind;
    g.voxels.assign(nz * ny * nx, fill);
    return g;
}

VoxelGrid load_vvol(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::io, "cannot open " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw Error(Errc::format, "bad magic in " + path);

    std::uint32_t version = 0;
    if (!read_le(is, version) || version != kVersion)
        throw Error(Errc::format, "unsupported VVOL version in " + path);

    std::uint8_t kind_byte = 0;
    if (!read_le(is, kind_byte) || kind_byte > 1)
        throw Error(Errc::format, "bad kind byte in " + path);
    char pad[3];
    is.read(pad, 3);

    std::uint32_t z = 0, y = 0, x = 0;
    float sz = 0, sy = 0, sx = 0;
    if (!read_le(is, z) || !read_le(is, y) || !read_le(is, x) ||
        !read_le(is, sz) || !read_le(is, sy) || !read_le(is, sx))
        throw Error(Errc::truncation, "header ends early in " + path);
    if (z == 0 || y == 0 || x == 0)
        throw Error(Errc::format, "degenerate dims in header of " + path);
    if (!(sz > 0.0f && sy > 0.0f && sx > 0.0f))
        throw Error(Errc::format, "non-positive spacing in header of " + path);

    VoxelGrid g;
    g.nz = z;
    g.ny = y;
    g.nx = x;
    g.spacing = {sz, sy, sx};
    g.kind = static_cast<GridKind>(kind_byte);
    const std::size_t n = g.size();
    g.voxels.resize(n);

    if (g.kind == GridKind::intensity) {
        std::vector<float> raw(n);
        is.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (static_cast<std::size_t>(is.gcount()) != n * sizeof(float))
            throw Error(Errc::truncation, "intensity payload short in " + path);
        for (std::size_t i = 0; i < n; ++i) g.voxels[i] = raw[i];
    } else {
        std::vector<std::uint8_t> raw(n);
        is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is.gcount()) != n)
            throw Error(Errc::truncation, "label payload short in " + path);
        for (std::size_t i = 0; i < n; ++i) g.voxels[i] = raw[i];
    }
    g.validate();
    return g;
}

void save_vvol(const VoxelGrid& grid, const std::string& path) {
    grid.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(Errc::io, "cannot write " + path);

    os.write(kMagic, 4);
    write_le(os, kVersion);
    write_le(os, static_cast<std::uint8_t>(grid.kind));
    const char pad[3] = {0, 0, 0};
    os.write(pad, 3);
    write_le(os, static_cast<std::uint32_t>(grid.nz));
    write_le(os, static_cast<std::uint32_t>(grid.ny));
    write_le(os, static_cast<std::uint32_t>(grid.nx));
    write_le(os, static_cast<float>(grid.spacing[0]));
    write_le(os, static_cast<float>(grid.spacing[1]));
    write_le(os, static_cast<float>(grid.spacing[2]));

    if (grid.kind == GridKind::intensity) {
        std::vector<float> raw(grid.voxels.size());
        for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(grid.voxels[i]);
        os.write(reinterpret_cast<const char*>(raw.data()),
                 static_cast<std::streamsize>(raw.size() * sizeof(float)));
    } else {
        std::vector<std::uint8_t> raw(grid.voxels.size());
        for (std::size_t i = 0; i < raw.size(); ++i)
            raw[i] = static_cast<std::uint8_t>(grid.voxels[i]);
        os.write(reinterpret_cast<const char*>(raw.data()),
                 static_cast<std::streamsize>(raw.size()));
    }
    if (!os) throw Error(Errc::io, "write failed for " + path);
}

VoxelGrid apply_window(const VoxelGrid& grid, const WindowSpec& w) {
    if (grid.kind != GridKind::intensity)
        throw Error(Errc::kind, "windowing requires an intensity grid");
    if (!(w.width > 0.0)) throw Error(Errc::argument, "window width must be > 0");
    VoxelGrid out = grid;
    const double lo = w.level - w.width / 2.0;
    for (double& v : out.voxels) v = std::clamp((v - lo) / w.width, 0.0, 1.0);
    return out;
}

namespace {

// Natural cubic spline through (0, f0), (1, f1), ..., (n-1, f_{n-1}):
// second derivatives solve a tridiagonal system with M0 = M_{n-1} = 0.
// `samples` holds the column, `m` receives the second derivatives.
void spline_second_derivatives(const std::vector<double>& f, std::vector<double>& m,
                               std::vector<double>& scratch) {
    const std::size_t n = f.size();
    m.assign(n, 0.0);
    if (n < 3) return;  // two points: the spline is the straight line, M = 0
    scratch.assign(n, 0.0);
    // Thomas algorithm on the interior rows; unit knot spacing simplifies
    // the coefficients to (1, 4, 1) with rhs 6*(f[i+1] - 2 f[i] + f[i-1]).
    std::vector<double>& c = scratch;
    double beta = 4.0;
    m[1] = 6.0 * (f[2] - 2.0 * f[1] + f[0]) / beta;
    for (std::size_t i = 2; i + 1 < n; ++i) {
        c[i] = 1.0 / beta;
        beta = 4.0 - c[i];
        m[i] = (6.0 * (f[i + 1] - 2.0 * f[i] + f[i - 1]) - m[i - 1]) / beta;
    }
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(n) - 3; i >= 1; --i)
        m[i] -= c[i + 1] * m[i + 1];
}

double spline_eval(const std::vector<double>& f, const std::vector<double>& m, double t) {
    const std::size_t n = f.size();
    if (t <= 0.0) return f.front();
    if (t >= static_cast<double>(n - 1)) return f.back();
    const std::size_t i = static_cast<std::size_t>(t);
    const double a = t - static_cast<double>(i);
    const double b = 1.0 - a;
    return b * f[i] + a * f[i + 1] +
           ((b * b * b - b) * m[i] + (a * a * a - a) * m[i + 1]) / 6.0;
}

}  // namespace

VoxelGrid interpolate_slices(const VoxelGrid& grid, std::size_t min_slices) {
    grid.validate();
    if (min_slices < 1) throw Error(Errc::argument, "min_slices must be >= 1");
    if (grid.nz >= min_slices) return grid;
    if (grid.kind == GridKind::intensity && grid.nz < 2)
        throw Error(Errc::insufficient_samples, "cubic spline needs at least 2 slices");

    const std::size_t zn = grid.nz;
    const std::size_t zt = min_slices;
    VoxelGrid out = make_grid(zt, grid.ny, grid.nx, grid.kind);
    out.spacing = grid.spacing;
    out.spacing[0] = grid.spacing[0] * static_cast<double>(zn) / static_cast<double>(zt);

    // New slice z' samples the old index coordinate t = z' * (zn-1)/(zt-1).
    std::vector<double> coord(zt);
    for (std::size_t z = 0; z < zt; ++z)
        coord[z] = (zt == 1) ? 0.0
                             : static_cast<double>(z) * static_cast<double>(zn - 1) /
                                   static_cast<double>(zt - 1);

    if (grid.kind == GridKind::label) {
        for (std::size_t z = 0; z < zt; ++z) {
            const std::size_t src = static_cast<std::size_t>(std::llround(coord[z]));
            std::copy_n(grid.voxels.begin() + static_cast<std::ptrdiff_t>(src * grid.ny * grid.nx),
                        grid.ny * grid.nx,
                        out.voxels.begin() + static_cast<std::ptrdiff_t>(z * grid.ny * grid.nx));
        }
        return out;
    }

    std::vector<double> column(zn), m, scratch;
    for (std::size_t y = 0; y < grid.ny; ++y) {
        for (std::size_t x = 0; x < grid.nx; ++x) {
            for (std::size_t z = 0; z < zn; ++z) column[z] = grid.at(z, y, x);
            spline_second_derivatives(column, m, scratch);
            for (std::size_t z = 0; z < zt; ++z)
                out.at(z, y, x) = spline_eval(column, m, coord[z]);
        }
    }
    return out;
}

VoxelGrid crop(const VoxelGrid& grid, std::size_t z0, std::size_t z1, std::size_t y0,
               std::size_t y1, std::size_t x0, std::size_t x1) {
    if (z0 >= z1 || y0 >= y1 || x0 >= x1 || z1 > grid.nz || y1 > grid.ny || x1 > grid.nx)
        throw Error(Errc::geometry, "crop box empty or outside the grid");
    VoxelGrid out = make_grid(z1 - z0, y1 - y0, x1 - x0, grid.kind);
    out.spacing = grid.spacing;
    for (std::size_t z = z0; z < z1; ++z)
        for (std::size_t y = y0; y < y1; ++y) {
            const double* src = grid.voxels.data() + (z * grid.ny + y) * grid.nx + x0;
            double* dst = out.voxels.data() + ((z - z0) * out.ny + (y - y0)) * out.nx;
            std::copy_n(src, x1 - x0, dst);
        }
    return out;
}

Phantom make_phantom(std::uint64_t seed, int n_vertebrae, std::size_t nz,
                     std::size_t ny, std::size_t nx) {
    if (n_vertebrae < 1 || n_vertebrae > 19)
        throw Error(Errc::argument, "n_vertebrae must be in 1..19");
    const std::size_t n = static_cast<std::size_t>(n_vertebrae);
    if (nz < 8 * n || ny < 16 || nx < 16)
        throw Error(Errc::geometry, "dims too small to hold the vertebra stack");

    Phantom ph;
    ph.intensity = make_grid(nz, ny, nx, GridKind::intensity, 40.0f);
    ph.labels = make_grid(nz, ny, nx, GridKind::label, 0.0f);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Bounded soft-tissue noise so no background voxel approaches bone HU.
    for (double& v : ph.intensity.voxels) v = 40.0 + (unit(rng) * 2.0 - 1.0) * 30.0;

    // One superellipsoid body per vertebra. z-ranges tile [margin, nz-margin)
    // with a slight overlap (later labels win the seam voxels); the z^6
    // profile keeps end slices wide, so the projected union is 8-connected
    // in every view. Labels stay voxel-disjoint because assignment is
    // exclusive per voxel.
    const double zmargin = static_cast<double>(nz) * 0.05;
    const double span = (static_cast<double>(nz) - 2.0 * zmargin) / static_cast<double>(n);
    const double rz = span / 2.0 + 0.6;
    const double ry = std::min<double>(static_cast<double>(ny) / 5.0, 14.0);
    const double rx = std::min<double>(static_cast<double>(nx) / 5.0, 14.0);
    // Keep step between consecutive centres below half the body width.
    const double amp_y = std::min(2.5, ry / 3.0);
    const double amp_x = std::min(1.5, rx / 4.0);
    const double phase = unit(rng) * 6.28318530717958647692;

    for (std::size_t k = 0; k < n; ++k) {
        const double cz = zmargin + (static_cast<double>(k) + 0.5) * span;
        const double arg = phase + 2.0 * 3.14159265358979323846 *
                           static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(n, 2));
        const double cy = static_cast<double>(ny) / 2.0 + amp_y * std::sin(arg);
        const double cx = static_cast<double>(nx) / 2.0 + amp_x * std::cos(arg);

        const std::size_t z0 = static_cast<std::size_t>(std::max(0.0, std::floor(cz - rz)));
        const std::size_t z1 = std::min(nz, static_cast<std::size_t>(std::ceil(cz + rz)) + 1);
        for (std::size_t z = z0; z < z1; ++z) {
            const double uz = (static_cast<double>(z) - cz) / rz;
            const double uz6 = uz * uz * uz * uz * uz * uz;
            if (uz6 >= 1.0) continue;
            for (std::size_t y = 0; y < ny; ++y) {
                const double uy = (static_cast<double>(y) - cy) / ry;
                for (std::size_t x = 0; x < nx; ++x) {
                    const double ux = (static_cast<double>(x) - cx) / rx;
                    if (uz6 + uy * uy + ux * ux <= 1.0) {
                        ph.labels.at(z, y, x) = static_cast<double>(k + 1);
                        ph.intensity.at(z, y, x) = 1200.0 + (unit(rng) * 2.0 - 1.0) * 100.0;
                    }
                }
            }
        }
    }
    return ph;
}

}  // namespace spinevox
