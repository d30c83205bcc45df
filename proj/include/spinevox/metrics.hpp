#pragma once

#include <array>
#include <string>
#include <vector>

#include "spinevox/error.hpp"
#include "spinevox/voxgrid.hpp"

namespace spinevox {

struct OverlapResult {
    double iou = 0.0;
    double dice = 0.0;
};

// IoU = TP/(TP+FP+FN), Dice = 2TP/(2TP+FP+FN) over binary voxel grids.
// Two empty masks score (1, 1) by convention.
OverlapResult overlap_metrics(const VoxelGrid& pred, const VoxelGrid& gt);

struct SegLosses {
    double dice = 0.0;
    double jaccard = 0.0;
    double combined = 0.0;  // always the mean of the two
};

// Soft Dice / Jaccard losses with additive smoothing eps; pred may hold
// probabilities in [0,1], gt must be binary.
SegLosses seg_losses(const VoxelGrid& pred, const VoxelGrid& gt, double eps = 1e-6);

// Symmetric 95th-percentile Hausdorff distance in millimetres over all
// foreground voxels, exact nearest neighbours via a separable Euclidean
// distance transform; percentiles are linearly interpolated.
double hd95(const VoxelGrid& a, const VoxelGrid& b, std::array<double, 3> spacing);

struct SegEntry {
    double iou = 0.0;
    double dsc = 0.0;
    double hd95 = 0.0;
};

// Per entry: IoU/max(IoU) + DSC/max(DSC) - HD95/max(HD95), maxima over the
// input set. A column whose maximum is 0 contributes 0 for every entry.
std::vector<double> composite_score(const std::vector<SegEntry>& entries);

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
};

struct ClsMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;
    // Set when the corresponding ratio collapsed to 0/0 and was defined as 0.
    bool precision_degenerate = false;
    bool sensitivity_degenerate = false;
    bool specificity_degenerate = false;
    bool f1_degenerate = false;
};

ClsMetrics cls_metrics(const ConfusionCounts& counts);

// Mann-Whitney AUC with midranks for ties. Requires at least one positive
// and one negative label.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct KappaResult {
    double kappa = 0.0;
    bool degenerate = false;  // chance agreement was exactly 1
};

// Cohen's kappa for two binary raters; expected agreement from the marginal
// products.
KappaResult cohen_kappa(const std::vector<int>& labels_a, const std::vector<int>& labels_b);

// Fleiss' kappa over a subjects x categories count matrix where each row
// sums to the common rater count n.
KappaResult fleiss_kappa(const std::vector<std::vector<int>>& counts, int n_raters);

// Ratings CSV (subject_id,rater_id,label) folded into Fleiss count form.
struct RatingTable {
    std::vector<std::string> subjects;
    std::vector<std::string> raters;
    std::vector<std::vector<int>> counts;  // subjects x categories
    std::vector<int> categories;           // sorted distinct labels
    // Per-rater label sequences aligned on subjects (for pairwise Cohen).
    std::vector<std::vector<int>> by_rater;
};

RatingTable load_ratings_csv(const std::string& path);

}  // namespace spinevox
