#pragma once

#include <string>
#include <vector>

#include "spinevox/voxgrid.hpp"

namespace spinevox {

// Reduction axes under the project-wide convention:
//   axial    reduces z -> image rows = y, cols = x
//   sagittal reduces x -> image rows = z, cols = y
//   coronal  reduces y -> image rows = z, cols = x
enum class Axis { axial, sagittal, coronal };

const char* axis_name(Axis a);
Axis axis_from_name(const std::string& name);

// The 27 reduction operators. Names match the CLI surface.
enum class ProjectionOp {
    max,
    mean,
    sum,
    gradient_max,
    variance,
    difference,
    energy,
    gradient_magnitude,
    kurtosis,
    median,
    percentile_range,
    skewness,
    stddev,
    edge,
    gabor,
    frangi,
    hessian,
    wavelet,
    diffusion,
    nonlinear,
    texture_energy,
    standardized,
    inversion,
    sobel,
    zscore,
    total_variation,
    min,
};

constexpr int kProjectionOpCount = 27;

const char* projection_op_name(ProjectionOp op);
ProjectionOp projection_op_from_name(const std::string& name);

struct ProjParams {
    double p = 2.0;                    // nonlinear enhancement power
    double percentile_low = 5.0;       // percentile-range bounds
    double percentile_high = 95.0;
    double frangi_beta = 0.5;          // vesselness tuning
    double frangi_gamma = 15.0;
    double gabor_wavelength = 8.0;     // Gabor bank: wavelength and bank size
    int gabor_orientations = 4;
    int wavelet_level = 1;             // Haar detail levels (a-trous dilation)
    int diffusion_iterations = 10;     // Perona-Malik steps
    double diffusion_kappa = 30.0;
    double diffusion_dt = 0.15;
    double epsilon = 1e-8;             // degenerate-denominator guard

    void validate() const;
};

struct ProjImage {
    std::size_t h = 0, w = 0;
    std::vector<double> pixels;  // row-major
    Axis axis = Axis::axial;
    ProjectionOp op = ProjectionOp::max;
    std::array<std::size_t, 3> source_dims{0, 0, 0};  // (Z, Y, X) of the grid

    std::size_t index(std::size_t r, std::size_t c) const { return r * w + c; }
    double at(std::size_t r, std::size_t c) const { return pixels[index(r, c)]; }
    double& at(std::size_t r, std::size_t c) { return pixels[index(r, c)]; }
};

// Reduce `grid` along `axis` with `op`. Column statistics use population
// moments and linear-interpolated percentiles;
// degenerate denominators (sigma below params.epsilon) yield 0 at that pixel.
// Filter-based operators apply their 2D filter per slice in the output plane
// and reduce across slices (sum, except gradient_max which takes the max).
// Label grids admit only max and min.
ProjImage project(const VoxelGrid& grid, Axis axis, ProjectionOp op,
                  const ProjParams& params = {});

// 16-bit binary PGM (P5, maxval 65535, big-endian samples) after linear
// min-max quantization, plus a JSON sidecar at <path>.json holding
// min/max/axis/operator/source_dims so load_proj can undo the quantization.
// A constant image round-trips exactly; otherwise values come back within
// (max-min)/65535 of the originals.
void save_proj(const ProjImage& img, const std::string& path);
ProjImage load_proj(const std::string& path);

// --- 2D filter primitives shared with the stack builder -------------------

// Sobel gradient magnitude with replicate borders; kernels are the classic
// unnormalized 3x3 pair.
void sobel_magnitude(const double* in, std::size_t h, std::size_t w, double* out);

}  // namespace spinevox
