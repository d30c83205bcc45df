#include "spinevox/error.hpp"

namespace spinevox {

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::format: return "format error";
        case Errc::truncation: return "truncation error";
        case Errc::kind: return "kind error";
        case Errc::insufficient_samples: return "insufficient-samples error";
        case Errc::insufficient_depth: return "insufficient-depth error";
        case Errc::geometry: return "geometry error";
        case Errc::empty_mask: return "empty-mask error";
        case Errc::arity: return "arity error";
        case Errc::completeness: return "completeness error";
        case Errc::value: return "value error";
        case Errc::undefined_distance: return "undefined-distance error";
        case Errc::empty_input: return "empty-input error";
        case Errc::shape: return "shape error";
        case Errc::stage_dependency: return "stage-dependency error";
        case Errc::io: return "io error";
        case Errc::argument: return "argument error";
    }
    return "error";
}

}  // namespace spinevox
