#include "spinevox/projection.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>

namespace spinevox {

namespace {

struct OpName {
    ProjectionOp op;
    const char* name;
};

constexpr OpName kOpNames[] = {
    {ProjectionOp::max, "max"},
    {ProjectionOp::mean, "mean"},
    {ProjectionOp::sum, "sum"},
    {ProjectionOp::gradient_max, "gradient_max"},
    {ProjectionOp::variance, "variance"},
    {ProjectionOp::difference, "difference"},
    {ProjectionOp::energy, "energy"},
    {ProjectionOp::gradient_magnitude, "gradient_magnitude"},
    {ProjectionOp::kurtosis, "kurtosis"},
    {ProjectionOp::median, "median"},
    {ProjectionOp::percentile_range, "percentile_range"},
    {ProjectionOp::skewness, "skewness"},
    {ProjectionOp::stddev, "stddev"},
    {ProjectionOp::edge, "edge"},
    {ProjectionOp::gabor, "gabor"},
    {ProjectionOp::frangi, "frangi"},
    {ProjectionOp::hessian, "hessian"},
    {ProjectionOp::wavelet, "wavelet"},
    {ProjectionOp::diffusion, "diffusion"},
    {ProjectionOp::nonlinear, "nonlinear"},
    {ProjectionOp::texture_energy, "texture_energy"},
    {ProjectionOp::standardized, "standardized"},
    {ProjectionOp::inversion, "inversion"},
    {ProjectionOp::sobel, "sobel"},
    {ProjectionOp::zscore, "zscore"},
    {ProjectionOp::total_variation, "total_variation"},
    {ProjectionOp::min, "min"},
};

static_assert(std::size(kOpNames) == kProjectionOpCount);

}  // namespace

const char* axis_name(Axis a) {
    switch (a) {
        case Axis::axial: return "axial";
        case Axis::sagittal: return "sagittal";
        case Axis::coronal: return "coronal";
    }
    return "?";
}

Axis axis_from_name(const std::string& name) {
    if (name == "axial") return Axis::axial;
    if (name == "sagittal") return Axis::sagittal;
    if (name == "coronal") return Axis::coronal;
    throw Error(Errc::argument, "unknown axis '" + name + "'");
}

const char* projection_op_name(ProjectionOp op) {
    for (const auto& e : kOpNames)
        if (e.op == op) return e.name;
    return "?";
}

ProjectionOp projection_op_from_name(const std::string& name) {
    for (const auto& e : kOpNames)
        if (name == e.name) return e.op;
    throw Error(Errc::argument, "unknown projection operator '" + name + "'");
}

void ProjParams::validate() const {
    if (!(percentile_low < percentile_high) || percentile_low < 0.0 || percentile_high > 100.0)
        throw Error(Errc::argument, "percentiles must satisfy 0 <= low < high <= 100");
    if (!(frangi_beta > 0.0) || !(frangi_gamma > 0.0))
        throw Error(Errc::argument, "frangi parameters must be positive");
    if (!(gabor_wavelength > 0.0) || gabor_orientations < 1)
        throw Error(Errc::argument, "gabor parameters must be positive");
    if (wavelet_level < 1) throw Error(Errc::argument, "wavelet_level must be >= 1");
    if (diffusion_iterations < 1 || !(diffusion_kappa > 0.0) || !(diffusion_dt > 0.0))
        throw Error(Errc::argument, "diffusion parameters must be positive");
    if (!(epsilon > 0.0)) throw Error(Errc::argument, "epsilon must be positive");
}

namespace {

struct ReduceGeom {
    std::size_t h, w, depth;
};

ReduceGeom reduce_geom(const VoxelGrid& g, Axis axis) {
    switch (axis) {
        case Axis::axial: return {g.ny, g.nx, g.nz};
        case Axis::sagittal: return {g.nz, g.ny, g.nx};
        case Axis::coronal: return {g.nz, g.nx, g.ny};
    }
    throw Error(Errc::argument, "bad axis");
}

// Streams the volume in memory order, mapping each voxel to its output pixel.
template <class F>
void stream(const VoxelGrid& g, Axis axis, F&& f) {
    const std::size_t nz = g.nz, ny = g.ny, nx = g.nx;
    const double* v = g.voxels.data();
    std::size_t i = 0;
    switch (axis) {
        case Axis::axial:
            for (std::size_t z = 0; z < nz; ++z)
                for (std::size_t y = 0; y < ny; ++y) {
                    const std::size_t base = y * nx;
                    for (std::size_t x = 0; x < nx; ++x, ++i) f(base + x, v[i]);
                }
            break;
        case Axis::sagittal:
            for (std::size_t z = 0; z < nz; ++z)
                for (std::size_t y = 0; y < ny; ++y) {
                    const std::size_t o = z * ny + y;
                    for (std::size_t x = 0; x < nx; ++x, ++i) f(o, v[i]);
                }
            break;
        case Axis::coronal:
            for (std::size_t z = 0; z < nz; ++z)
                for (std::size_t y = 0; y < ny; ++y) {
                    const std::size_t base = z * nx;
                    for (std::size_t x = 0; x < nx; ++x, ++i) f(base + x, v[i]);
                }
            break;
    }
}

struct Pass1 {
    std::vector<double> mn, mx, sum, sumsq, sumpow;
};

template <bool MIN, bool MAX, bool SUM, bool SQ, bool POW>
void pass1(const VoxelGrid& g, Axis axis, std::size_t npix, double p, Pass1& a) {
    if constexpr (MIN) a.mn.assign(npix, std::numeric_limits<double>::infinity());
    if constexpr (MAX) a.mx.assign(npix, -std::numeric_limits<double>::infinity());
    if constexpr (SUM) a.sum.assign(npix, 0.0);
    if constexpr (SQ) a.sumsq.assign(npix, 0.0);
    if constexpr (POW) a.sumpow.assign(npix, 0.0);
    stream(g, axis, [&](std::size_t o, double v) {
        if constexpr (MIN) a.mn[o] = std::min(a.mn[o], v);
        if constexpr (MAX) a.mx[o] = std::max(a.mx[o], v);
        if constexpr (SUM) a.sum[o] += v;
        if constexpr (SQ) a.sumsq[o] += v * v;
        if constexpr (POW) a.sumpow[o] += std::pow(v, p);
    });
}

struct Central {
    std::vector<double> c1, c2, c3, c4;
};

// Second pass over the volume: central moments about the per-pixel mean.
void pass_central(const VoxelGrid& g, Axis axis, const std::vector<double>& mean,
                  bool need3, bool need4, Central& c) {
    const std::size_t npix = mean.size();
    c.c1.assign(npix, 0.0);
    c.c2.assign(npix, 0.0);
    if (need3) c.c3.assign(npix, 0.0);
    if (need4) c.c4.assign(npix, 0.0);
    stream(g, axis, [&](std::size_t o, double v) {
        const double d = v - mean[o];
        const double d2 = d * d;
        c.c1[o] += d;
        c.c2[o] += d2;
        if (!c.c3.empty()) c.c3[o] += d2 * d;
        if (!c.c4.empty()) c.c4[o] += d2 * d2;
    });
}

// Gathers the reduced-axis column behind output pixel `o` into `col`.
void gather_column(const VoxelGrid& g, Axis axis, std::size_t o, std::vector<double>& col) {
    const std::size_t nz = g.nz, ny = g.ny, nx = g.nx;
    std::size_t start = 0, stride = 0, count = 0;
    switch (axis) {
        case Axis::axial: {
            start = o;  // o = y*nx + x
            stride = ny * nx;
            count = nz;
            break;
        }
        case Axis::sagittal: {
            start = o * nx;  // o = z*ny + y
            stride = 1;
            count = nx;
            break;
        }
        case Axis::coronal: {
            const std::size_t z = o / nx, x = o % nx;
            start = z * ny * nx + x;
            stride = nx;
            count = ny;
            break;
        }
    }
    col.resize(count);
    for (std::size_t i = 0; i < count; ++i) col[i] = g.voxels[start + i * stride];
}

double percentile_linear(std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = (static_cast<double>(n) - 1.0) * q / 100.0;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// Extracts the 2D plane perpendicular to the reduced axis at index s.
void extract_slice(const VoxelGrid& g, Axis axis, std::size_t s, std::vector<double>& plane) {
    const std::size_t nz = g.nz, ny = g.ny, nx = g.nx;
    switch (axis) {
        case Axis::axial: {  // rows y, cols x
            plane.resize(ny * nx);
            const double* src = g.voxels.data() + s * ny * nx;
            for (std::size_t i = 0; i < ny * nx; ++i) plane[i] = src[i];
            break;
        }
        case Axis::sagittal: {  // rows z, cols y
            plane.resize(nz * ny);
            for (std::size_t z = 0; z < nz; ++z)
                for (std::size_t y = 0; y < ny; ++y)
                    plane[z * ny + y] = g.voxels[(z * ny + y) * nx + s];
            break;
        }
        case Axis::coronal: {  // rows z, cols x
            plane.resize(nz * nx);
            for (std::size_t z = 0; z < nz; ++z) {
                const double* src = g.voxels.data() + (z * ny + s) * nx;
                for (std::size_t x = 0; x < nx; ++x) plane[z * nx + x] = src[x];
            }
            break;
        }
    }
}

inline std::size_t clampi(std::ptrdiff_t v, std::size_t n) {
    if (v < 0) return 0;
    if (v >= static_cast<std::ptrdiff_t>(n)) return n - 1;
    return static_cast<std::size_t>(v);
}

inline double px(const double* in, std::size_t h, std::size_t w, std::ptrdiff_t r,
                 std::ptrdiff_t c) {
    return in[clampi(r, h) * w + clampi(c, w)];
}

void sobel_xy(const double* in, std::size_t h, std::size_t w, double* gx, double* gy) {
    for (std::size_t r = 0; r < h; ++r) {
        const auto ri = static_cast<std::ptrdiff_t>(r);
        for (std::size_t c = 0; c < w; ++c) {
            const auto ci = static_cast<std::ptrdiff_t>(c);
            const double a = px(in, h, w, ri - 1, ci - 1), b = px(in, h, w, ri - 1, ci),
                         d = px(in, h, w, ri - 1, ci + 1), e = px(in, h, w, ri, ci - 1),
                         f = px(in, h, w, ri, ci + 1), g2 = px(in, h, w, ri + 1, ci - 1),
                         i2 = px(in, h, w, ri + 1, ci), j = px(in, h, w, ri + 1, ci + 1);
            gx[r * w + c] = (d + 2.0 * f + j) - (a + 2.0 * e + g2);
            gy[r * w + c] = (g2 + 2.0 * i2 + j) - (a + 2.0 * b + d);
        }
    }
}

}  // namespace

void sobel_magnitude(const double* in, std::size_t h, std::size_t w, double* out) {
    std::vector<double> gx(h * w), gy(h * w);
    sobel_xy(in, h, w, gx.data(), gy.data());
    for (std::size_t i = 0; i < h * w; ++i) out[i] = std::hypot(gx[i], gy[i]);
}

namespace {

// Canny with thresholds at fractions (0.1, 0.3) of the slice's peak gradient
// magnitude; non-max suppression over 4 quantized directions, hysteresis by
// 8-connected flood from strong pixels. Out-of-bounds NMS neighbours read 0.
void canny_edges(const double* in, std::size_t h, std::size_t w, double* out) {
    const std::size_t n = h * w;
    std::vector<double> gx(n), gy(n), mag(n);
    sobel_xy(in, h, w, gx.data(), gy.data());
    double gmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mag[i] = std::hypot(gx[i], gy[i]);
        gmax = std::max(gmax, mag[i]);
    }
    std::fill(out, out + n, 0.0);
    if (gmax <= 0.0) return;
    const double lo = 0.1 * gmax, hi = 0.3 * gmax;

    auto mag_at = [&](std::ptrdiff_t r, std::ptrdiff_t c) -> double {
        if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(h) ||
            c >= static_cast<std::ptrdiff_t>(w))
            return 0.0;
        return mag[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
    };

    std::vector<std::uint8_t> cls(n, 0);  // 0 none, 1 weak, 2 strong
    std::deque<std::size_t> strong;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t i = r * w + c;
            if (mag[i] < lo) continue;
            // Quantize gradient direction into 0/45/90/135 degree bins.
            double ang = std::atan2(gy[i], gx[i]) * 180.0 / std::numbers::pi;
            if (ang < 0.0) ang += 180.0;
            std::ptrdiff_t dr1, dc1;
            if (ang < 22.5 || ang >= 157.5) {
                dr1 = 0; dc1 = 1;
            } else if (ang < 67.5) {
                dr1 = 1; dc1 = 1;
            } else if (ang < 112.5) {
                dr1 = 1; dc1 = 0;
            } else {
                dr1 = 1; dc1 = -1;
            }
            const auto ri = static_cast<std::ptrdiff_t>(r);
            const auto ci = static_cast<std::ptrdiff_t>(c);
            if (mag[i] < mag_at(ri + dr1, ci + dc1) || mag[i] < mag_at(ri - dr1, ci - dc1))
                continue;
            if (mag[i] >= hi) {
                cls[i] = 2;
                strong.push_back(i);
            } else {
                cls[i] = 1;
            }
        }
    }
    while (!strong.empty()) {
        const std::size_t i = strong.front();
        strong.pop_front();
        out[i] = 1.0;
        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i / w);
        const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(i % w);
        for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
            for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                const std::ptrdiff_t rr = r + dr, cc = c + dc;
                if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) ||
                    cc >= static_cast<std::ptrdiff_t>(w))
                    continue;
                const std::size_t j = static_cast<std::size_t>(rr) * w +
                                      static_cast<std::size_t>(cc);
                if (cls[j] == 1) {
                    cls[j] = 2;
                    strong.push_back(j);
                }
            }
    }
}

// Bank of real Gabor kernels: sigma = 0.56*lambda, aspect 0.5, orientations
// theta_k = k*pi/count; the response is the mean over the bank.
void gabor_response(const double* in, std::size_t h, std::size_t w, double lambda,
                    int orientations, double* out) {
    const double sigma = 0.56 * lambda;
    const double gamma = 0.5;
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    const std::size_t n = h * w;
    std::fill(out, out + n, 0.0);
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1) *
                               static_cast<std::size_t>(2 * radius + 1));
    for (int k = 0; k < orientations; ++k) {
        const double theta = std::numbers::pi * static_cast<double>(k) /
                             static_cast<double>(orientations);
        const double ct = std::cos(theta), st = std::sin(theta);
        std::size_t ki = 0;
        for (std::ptrdiff_t dr = -radius; dr <= radius; ++dr) {
            for (std::ptrdiff_t dc = -radius; dc <= radius; ++dc, ++ki) {
                const double u = static_cast<double>(dc) * ct + static_cast<double>(dr) * st;
                const double v = -static_cast<double>(dc) * st + static_cast<double>(dr) * ct;
                kernel[ki] = std::exp(-(u * u + gamma * gamma * v * v) / (2.0 * sigma * sigma)) *
                             std::cos(2.0 * std::numbers::pi * u / lambda);
            }
        }
        for (std::size_t r = 0; r < h; ++r) {
            const auto ri = static_cast<std::ptrdiff_t>(r);
            for (std::size_t c = 0; c < w; ++c) {
                const auto ci = static_cast<std::ptrdiff_t>(c);
                double acc = 0.0;
                ki = 0;
                for (std::ptrdiff_t dr = -radius; dr <= radius; ++dr)
                    for (std::ptrdiff_t dc = -radius; dc <= radius; ++dc, ++ki)
                        acc += kernel[ki] * px(in, h, w, ri + dr, ci + dc);
                out[r * w + c] += acc / static_cast<double>(orientations);
            }
        }
    }
}

// 3-point second derivatives and the mixed derivative, replicate borders.
void hessian_entries(const double* in, std::size_t h, std::size_t w, double* irr, double* icc,
                     double* irc) {
    for (std::size_t r = 0; r < h; ++r) {
        const auto ri = static_cast<std::ptrdiff_t>(r);
        for (std::size_t c = 0; c < w; ++c) {
            const auto ci = static_cast<std::ptrdiff_t>(c);
            const double center = px(in, h, w, ri, ci);
            irr[r * w + c] = px(in, h, w, ri - 1, ci) - 2.0 * center + px(in, h, w, ri + 1, ci);
            icc[r * w + c] = px(in, h, w, ri, ci - 1) - 2.0 * center + px(in, h, w, ri, ci + 1);
            irc[r * w + c] = (px(in, h, w, ri + 1, ci + 1) - px(in, h, w, ri + 1, ci - 1) -
                              px(in, h, w, ri - 1, ci + 1) + px(in, h, w, ri - 1, ci - 1)) /
                             4.0;
        }
    }
}

void frangi_vesselness(const double* in, std::size_t h, std::size_t w, double beta, double gamma,
                       double* out) {
    std::vector<double> irr(h * w), icc(h * w), irc(h * w);
    hessian_entries(in, h, w, irr.data(), icc.data(), irc.data());
    for (std::size_t i = 0; i < h * w; ++i) {
        const double tr = irr[i] + icc[i];
        const double disc = std::sqrt((irr[i] - icc[i]) * (irr[i] - icc[i]) +
                                      4.0 * irc[i] * irc[i]);
        double l1 = (tr - disc) / 2.0, l2 = (tr + disc) / 2.0;
        if (std::abs(l1) > std::abs(l2)) std::swap(l1, l2);  // |l1| <= |l2|
        out[i] = std::exp(-(l1 * l1) / (2.0 * beta * beta) -
                          (l2 * l2) / (2.0 * gamma * gamma));
    }
}

void hessian_determinant(const double* in, std::size_t h, std::size_t w, double* out) {
    std::vector<double> irr(h * w), icc(h * w), irc(h * w);
    hessian_entries(in, h, w, irr.data(), icc.data(), irc.data());
    for (std::size_t i = 0; i < h * w; ++i) out[i] = irr[i] * icc[i] - irc[i] * irc[i];
}

// A-trous Haar details: at level l the 2x2 taps sit at offsets {0, 2^(l-1)};
// the response is |LH| + |HL| + |HH| accumulated over levels.
void haar_detail(const double* in, std::size_t h, std::size_t w, int levels, double* out) {
    std::fill(out, out + h * w, 0.0);
    for (int l = 0; l < levels; ++l) {
        const auto d = static_cast<std::ptrdiff_t>(1) << l;
        for (std::size_t r = 0; r < h; ++r) {
            const auto ri = static_cast<std::ptrdiff_t>(r);
            for (std::size_t c = 0; c < w; ++c) {
                const auto ci = static_cast<std::ptrdiff_t>(c);
                const double a = px(in, h, w, ri, ci), b = px(in, h, w, ri, ci + d),
                             e = px(in, h, w, ri + d, ci), f = px(in, h, w, ri + d, ci + d);
                const double lh = (a + b - e - f) / 2.0;
                const double hl = (a - b + e - f) / 2.0;
                const double hh = (a - b - e + f) / 2.0;
                out[r * w + c] += std::abs(lh) + std::abs(hl) + std::abs(hh);
            }
        }
    }
}

// Perona-Malik with exponential conductance on the 4-neighbourhood;
// border gradients are zero (replicate).
void perona_malik(const double* in, std::size_t h, std::size_t w, int iterations, double kappa,
                  double dt, double* out) {
    std::vector<double> cur(in, in + h * w), next(h * w);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t r = 0; r < h; ++r) {
            const auto ri = static_cast<std::ptrdiff_t>(r);
            for (std::size_t c = 0; c < w; ++c) {
                const auto ci = static_cast<std::ptrdiff_t>(c);
                const double center = cur[r * w + c];
                const double gn = px(cur.data(), h, w, ri - 1, ci) - center;
                const double gs = px(cur.data(), h, w, ri + 1, ci) - center;
                const double ge = px(cur.data(), h, w, ri, ci + 1) - center;
                const double gw = px(cur.data(), h, w, ri, ci - 1) - center;
                auto cond = [kappa](double g) {
                    const double t = g / kappa;
                    return std::exp(-t * t);
                };
                next[r * w + c] = center + dt * (cond(gn) * gn + cond(gs) * gs +
                                                 cond(ge) * ge + cond(gw) * gw);
            }
        }
        cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), out);
}

void second_derivative_energy(const double* in, std::size_t h, std::size_t w, double* out) {
    std::vector<double> irr(h * w), icc(h * w), irc(h * w);
    hessian_entries(in, h, w, irr.data(), icc.data(), irc.data());
    for (std::size_t i = 0; i < h * w; ++i) out[i] = std::hypot(icc[i], irr[i]);
}

void central_gradient_magnitude(const double* in, std::size_t h, std::size_t w, double* out) {
    for (std::size_t r = 0; r < h; ++r) {
        const auto ri = static_cast<std::ptrdiff_t>(r);
        for (std::size_t c = 0; c < w; ++c) {
            const auto ci = static_cast<std::ptrdiff_t>(c);
            const double ix = (px(in, h, w, ri, ci + 1) - px(in, h, w, ri, ci - 1)) / 2.0;
            const double iy = (px(in, h, w, ri + 1, ci) - px(in, h, w, ri - 1, ci)) / 2.0;
            out[r * w + c] = std::hypot(ix, iy);
        }
    }
}

bool is_filter_op(ProjectionOp op) {
    switch (op) {
        case ProjectionOp::gradient_max:
        case ProjectionOp::gradient_magnitude:
        case ProjectionOp::sobel:
        case ProjectionOp::edge:
        case ProjectionOp::gabor:
        case ProjectionOp::frangi:
        case ProjectionOp::hessian:
        case ProjectionOp::wavelet:
        case ProjectionOp::diffusion:
        case ProjectionOp::texture_energy:
        case ProjectionOp::total_variation:
            return true;
        default:
            return false;
    }
}

bool needs_depth2(ProjectionOp op) {
    switch (op) {
        case ProjectionOp::difference:
        case ProjectionOp::variance:
        case ProjectionOp::stddev:
        case ProjectionOp::skewness:
        case ProjectionOp::kurtosis:
        case ProjectionOp::standardized:
        case ProjectionOp::zscore:
            return true;
        default:
            return false;
    }
}

}  // namespace

ProjImage project(const VoxelGrid& grid, Axis axis, ProjectionOp op, const ProjParams& params) {
    grid.validate();
    params.validate();
    if (grid.kind == GridKind::label && op != ProjectionOp::max && op != ProjectionOp::min)
        throw Error(Errc::kind, std::string("label grids admit only max/min, got ") +
                                    projection_op_name(op));

    const ReduceGeom geom = reduce_geom(grid, axis);
    if (geom.depth < 2 && needs_depth2(op))
        throw Error(Errc::insufficient_depth,
                    std::string(projection_op_name(op)) + " needs at least 2 slices along " +
                        axis_name(axis));

    ProjImage img;
    img.h = geom.h;
    img.w = geom.w;
    img.axis = axis;
    img.op = op;
    img.source_dims = {grid.nz, grid.ny, grid.nx};
    const std::size_t npix = geom.h * geom.w;
    img.pixels.assign(npix, 0.0);
    const double invn = 1.0 / static_cast<double>(geom.depth);

    Pass1 acc;
    switch (op) {
        case ProjectionOp::max: {
            pass1<false, true, false, false, false>(grid, axis, npix, 0, acc);
            img.pixels = std::move(acc.mx);
            return img;
        }
        case ProjectionOp::min: {
            pass1<true, false, false, false, false>(grid, axis, npix, 0, acc);
            img.pixels = std::move(acc.mn);
            return img;
        }
        case ProjectionOp::sum: {
            pass1<false, false, true, false, false>(grid, axis, npix, 0, acc);
            img.pixels = std::move(acc.sum);
            return img;
        }
        case ProjectionOp::mean: {
            pass1<false, false, true, false, false>(grid, axis, npix, 0, acc);
            for (std::size_t i = 0; i < npix; ++i) img.pixels[i] = acc.sum[i] * invn;
            return img;
        }
        case ProjectionOp::energy: {
            pass1<false, false, false, true, false>(grid, axis, npix, 0, acc);
            img.pixels = std::move(acc.sumsq);
            return img;
        }
        case ProjectionOp::nonlinear: {
            pass1<false, false, false, false, true>(grid, axis, npix, params.p, acc);
            for (std::size_t i = 0; i < npix; ++i) img.pixels[i] = acc.sumpow[i] * invn;
            return img;
        }
        case ProjectionOp::inversion: {
            pass1<false, true, true, false, false>(grid, axis, npix, 0, acc);
            for (std::size_t i = 0; i < npix; ++i)
                img.pixels[i] = acc.mx[i] - acc.sum[i] * invn;
            return img;
        }
        case ProjectionOp::variance:
        case ProjectionOp::stddev:
        case ProjectionOp::skewness:
        case ProjectionOp::kurtosis:
        case ProjectionOp::standardized:
        case ProjectionOp::zscore: {
            pass1<false, false, true, false, false>(grid, axis, npix, 0, acc);
            std::vector<double> mean(npix);
            for (std::size_t i = 0; i < npix; ++i) mean[i] = acc.sum[i] * invn;
            Central c;
            pass_central(grid, axis, mean, op == ProjectionOp::skewness,
                         op == ProjectionOp::kurtosis, c);
            for (std::size_t i = 0; i < npix; ++i) {
                const double m2 = c.c2[i] * invn;
                const double sigma = std::sqrt(std::max(m2, 0.0));
                switch (op) {
                    case ProjectionOp::variance: img.pixels[i] = m2; break;
                    case ProjectionOp::stddev: img.pixels[i] = sigma; break;
                    case ProjectionOp::skewness:
                        img.pixels[i] = sigma < params.epsilon
                                            ? 0.0
                                            : (c.c3[i] * invn) / (sigma * sigma * sigma);
                        break;
                    case ProjectionOp::kurtosis:
                        img.pixels[i] =
                            sigma < params.epsilon ? 0.0 : (c.c4[i] * invn) / (m2 * m2);
                        break;
                    case ProjectionOp::standardized:
                    case ProjectionOp::zscore:
                        img.pixels[i] =
                            sigma < params.epsilon ? 0.0 : (c.c1[i] * invn) / sigma;
                        break;
                    default: break;
                }
            }
            return img;
        }
        case ProjectionOp::median:
        case ProjectionOp::percentile_range:
        case ProjectionOp::difference: {
            std::vector<double> col;
            for (std::size_t o = 0; o < npix; ++o) {
                gather_column(grid, axis, o, col);
                if (op == ProjectionOp::difference) {
                    double s = 0.0;
                    for (std::size_t i = 0; i + 1 < col.size(); ++i)
                        s += std::abs(col[i + 1] - col[i]);
                    img.pixels[o] = s;
                } else {
                    std::sort(col.begin(), col.end());
                    if (op == ProjectionOp::median) {
                        const std::size_t n = col.size();
                        img.pixels[o] = (n % 2 == 1)
                                            ? col[n / 2]
                                            : 0.5 * (col[n / 2 - 1] + col[n / 2]);
                    } else {
                        img.pixels[o] = percentile_linear(col, params.percentile_high) -
                                        percentile_linear(col, params.percentile_low);
                    }
                }
            }
            return img;
        }
        default: break;
    }

    // Per-slice 2D filter operators.
    if (!is_filter_op(op)) throw Error(Errc::argument, "unhandled operator");
    std::vector<double> plane, filtered(npix);
    if (op == ProjectionOp::gradient_max)
        img.pixels.assign(npix, -std::numeric_limits<double>::infinity());
    for (std::size_t s = 0; s < geom.depth; ++s) {
        extract_slice(grid, axis, s, plane);
        switch (op) {
            case ProjectionOp::gradient_max:
            case ProjectionOp::gradient_magnitude:
            case ProjectionOp::sobel:
                sobel_magnitude(plane.data(), geom.h, geom.w, filtered.data());
                break;
            case ProjectionOp::edge:
                canny_edges(plane.data(), geom.h, geom.w, filtered.data());
                break;
            case ProjectionOp::gabor:
                gabor_response(plane.data(), geom.h, geom.w, params.gabor_wavelength,
                               params.gabor_orientations, filtered.data());
                break;
            case ProjectionOp::frangi:
                frangi_vesselness(plane.data(), geom.h, geom.w, params.frangi_beta,
                                  params.frangi_gamma, filtered.data());
                break;
            case ProjectionOp::hessian:
                hessian_determinant(plane.data(), geom.h, geom.w, filtered.data());
                break;
            case ProjectionOp::wavelet:
                haar_detail(plane.data(), geom.h, geom.w, params.wavelet_level, filtered.data());
                break;
            case ProjectionOp::diffusion:
                perona_malik(plane.data(), geom.h, geom.w, params.diffusion_iterations,
                             params.diffusion_kappa, params.diffusion_dt, filtered.data());
                break;
            case ProjectionOp::texture_energy:
                second_derivative_energy(plane.data(), geom.h, geom.w, filtered.data());
                break;
            case ProjectionOp::total_variation:
                central_gradient_magnitude(plane.data(), geom.h, geom.w, filtered.data());
                break;
            default: break;
        }
        if (op == ProjectionOp::gradient_max) {
            for (std::size_t i = 0; i < npix; ++i)
                img.pixels[i] = std::max(img.pixels[i], filtered[i]);
        } else {
            for (std::size_t i = 0; i < npix; ++i) img.pixels[i] += filtered[i];
        }
    }
    return img;
}

void save_proj(const ProjImage& img, const std::string& path) {
    if (img.h == 0 || img.w == 0 || img.pixels.size() != img.h * img.w)
        throw Error(Errc::shape, "projection image is empty or inconsistent");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : img.pixels) {
        if (!std::isfinite(v)) throw Error(Errc::value, "non-finite pixel value");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi - lo;

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(Errc::io, "cannot write " + path);
    os << "P5\n" << img.w << " " << img.h << "\n65535\n";
    for (double v : img.pixels) {
        const double t = range > 0.0 ? (v - lo) / range : 0.0;
        const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
        const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
        os.write(bytes, 2);
    }
    if (!os) throw Error(Errc::io, "write failed for " + path);

    nlohmann::json meta{
        {"min", lo},
        {"max", hi},
        {"axis", axis_name(img.axis)},
        {"operator", projection_op_name(img.op)},
        {"source_dims", {img.source_dims[0], img.source_dims[1], img.source_dims[2]}},
    };
    std::ofstream ms(path + ".json", std::ios::trunc);
    if (!ms) throw Error(Errc::io, "cannot write " + path + ".json");
    ms << meta.dump(2) << "\n";
}

ProjImage load_proj(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::io, "cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw Error(Errc::format, "not a P5 PGM: " + path);
    std::size_t w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w == 0 || h == 0 || maxval != 65535)
        throw Error(Errc::format, "bad PGM header in " + path);
    is.get();  // single whitespace after maxval

    std::ifstream ms(path + ".json");
    if (!ms) throw Error(Errc::io, "missing sidecar " + path + ".json");
    nlohmann::json meta = nlohmann::json::parse(ms);

    ProjImage img;
    img.h = h;
    img.w = w;
    img.axis = axis_from_name(meta.at("axis").get<std::string>());
    img.op = projection_op_from_name(meta.at("operator").get<std::string>());
    const auto& sd = meta.at("source_dims");
    img.source_dims = {sd.at(0).get<std::size_t>(), sd.at(1).get<std::size_t>(),
                       sd.at(2).get<std::size_t>()};
    const double lo = meta.at("min").get<double>();
    const double hi = meta.at("max").get<double>();
    const double range = hi - lo;

    img.pixels.resize(h * w);
    std::vector<unsigned char> raw(h * w * 2);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        throw Error(Errc::truncation, "PGM payload short in " + path);
    for (std::size_t i = 0; i < h * w; ++i) {
        const std::uint16_t q = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
        img.pixels[i] = range > 0.0 ? lo + static_cast<double>(q) / 65535.0 * range : lo;
    }
    return img;
}

}  // namespace spinevox
