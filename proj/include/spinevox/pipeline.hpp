#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "spinevox/aggregate.hpp"
#include "spinevox/roivoi.hpp"
#include "spinevox/stacks.hpp"
#include "spinevox/voxgrid.hpp"

#include <json.hpp>

namespace spinevox {

struct ManifestParams {
    WindowSpec window{400.0, 1400.0};
    std::size_t min_slices = 400;
    std::int64_t t = 20;
    std::int64_t margin = 0;
    double vote_thr = 0.5;
    double fuse_weight = 0.5;
    AdaptiveParams adaptive;
};

// Inputs for one patient run. The label volume enables the oracle fallback:
// ground-truth boxes and masks substitute for missing model predictions, so
// the full pipeline runs with zero trained models.
struct Manifest {
    std::string patient_id;
    std::string volume;                       // required VVOL intensity path
    std::optional<std::string> label_volume;  // VVOL label path
    std::optional<std::string> boxes_jsonl;   // detector predictions
    std::optional<std::string> masks_sagittal;  // 7-channel mask files
    std::optional<std::string> masks_coronal;
    std::optional<std::string> predictions_csv;  // per-stack probabilities
    ManifestParams params;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

enum class LogFormat { text, json };

struct StageArtifact {
    std::string name;  // file name within the stage directory
    std::string hash;  // fnv1a-64 of the content, hex
};

struct StageReport {
    std::string name;
    double millis = 0.0;
    bool cached = false;   // outputs were already valid, stage skipped
    bool skipped = false;  // stage not applicable for this manifest
    std::vector<StageArtifact> artifacts;
    nlohmann::json metrics;  // stage-specific numbers, may be empty
};

struct RunReport {
    std::string patient_id;
    std::string run_dir;
    std::vector<StageReport> stages;

    nlohmann::json to_json() const;
};

// The ordered stage names; exit codes in the CLI are 10 + stage index.
const std::vector<std::string>& pipeline_stage_names();

// Executes interpolate, project, detect, fuse, segment, approximate,
// extract, stacks, aggregate and evaluate for one patient under
// out_root/<patient>/<stage>/. Stages whose recorded artifacts still match
// their hashes are not recomputed, so deleting downstream artifacts resumes
// from the last valid stage. Throws Error(Errc::stage_dependency) when a
// stage lacks both its ingested prediction and the oracle fallback.
RunReport run_pipeline(const Manifest& manifest, const std::string& out_root,
                       LogFormat log_format = LogFormat::text, std::ostream* log = nullptr);

// FNV-1a 64-bit content hash, hex-encoded; used for artifact identity.
std::string fnv1a_file(const std::string& path);

// Worker cap for per-vertebra fan-out: SPINEVOX_THREADS when set, otherwise
// the hardware concurrency (at least 1).
unsigned pipeline_thread_cap();

}  // namespace spinevox
