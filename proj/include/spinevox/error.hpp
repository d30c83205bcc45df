#pragma once

#include <stdexcept>
#include <string>

namespace spinevox {

// Error categories surfaced by the library. Each maps to the failure mode
// named in the operation contracts; the CLI turns them into exit codes.
enum class Errc {
    format,                // bad magic / version / header field
    truncation,            // payload shorter than the header claims
    kind,                  // wrong grid kind for the operation
    insufficient_samples,  // too few slices for spline interpolation
    insufficient_depth,    // reduction axis too shallow for the operator
    geometry,              // degenerate or out-of-bounds geometry
    empty_mask,            // operation requires at least one foreground voxel
    arity,                 // wrong element count
    completeness,          // missing rows in a prediction table
    value,                 // non-finite or out-of-range value
    undefined_distance,    // distance between empty point sets
    empty_input,           // empty sequence where at least one element required
    shape,                 // mismatched dimensions between inputs
    stage_dependency,      // pipeline stage missing a required input
    io,                    // filesystem / stream failure
    argument,              // invalid parameter
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace spinevox
