#include "spinevox/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace spinevox {

namespace {

void check_same_dims(const VoxelGrid& a, const VoxelGrid& b) {
    if (a.nz != b.nz || a.ny != b.ny || a.nx != b.nx)
        throw Error(Errc::shape, "mask dims differ");
}

bool foreground(double v) { return v != 0.0; }

}  // namespace

OverlapResult overlap_metrics(const VoxelGrid& pred, const VoxelGrid& gt) {
    check_same_dims(pred, gt);
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
        const bool p = foreground(pred.voxels[i]);
        const bool g = foreground(gt.voxels[i]);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    OverlapResult r;
    if (tp + fp + fn == 0) {
        r.iou = 1.0;
        r.dice = 1.0;
    } else {
        r.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        r.dice = static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
    }
    return r;
}

SegLosses seg_losses(const VoxelGrid& pred, const VoxelGrid& gt, double eps) {
    check_same_dims(pred, gt);
    double inter = 0.0, total = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
        const double p = pred.voxels[i];
        const double y = gt.voxels[i] != 0.0 ? 1.0 : 0.0;
        if (!(p >= 0.0 && p <= 1.0))
            throw Error(Errc::value, "prediction probabilities must lie in [0,1]");
        inter += y * p;
        total += y + p;
        uni += y + p - y * p;
    }
    SegLosses l;
    l.dice = 1.0 - (2.0 * inter + eps) / (total + eps);
    l.jaccard = 1.0 - (inter + eps) / (uni + eps);
    l.combined = (l.dice + l.jaccard) / 2.0;
    return l;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D lower envelope of parabolas (squared-distance transform) with physical
// sample positions pos[i] = i * step.
void edt_1d(const std::vector<double>& f, double step, std::vector<double>& d,
            std::vector<double>& zbuf, std::vector<int>& vbuf) {
    const int n = static_cast<int>(f.size());
    d.assign(f.size(), kInf);
    vbuf.assign(f.size(), 0);
    zbuf.assign(f.size() + 1, 0.0);
    int k = 0;
    vbuf[0] = 0;
    zbuf[0] = -kInf;
    zbuf[1] = kInf;
    auto pos = [step](int i) { return static_cast<double>(i) * step; };
    for (int q = 1; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (f[vbuf[k]] == kInf) {
            vbuf[k] = q;
            continue;
        }
        double s;
        while (true) {
            const int p = vbuf[k];
            s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) /
                (2.0 * pos(q) - 2.0 * pos(p));
            if (s <= zbuf[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        vbuf[k] = q;
        zbuf[k] = s;
        zbuf[k + 1] = kInf;
    }
    if (f[vbuf[0]] == kInf) return;  // the whole scanline is empty
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (zbuf[k + 1] < pos(q)) ++k;
        const double dx = pos(q) - pos(vbuf[k]);
        d[q] = dx * dx + f[vbuf[k]];
    }
}

// Exact squared Euclidean distance (mm^2) from every voxel to the foreground
// of `mask`, by separable passes along x, y, z.
std::vector<double> squared_edt(const VoxelGrid& mask, std::array<double, 3> spacing) {
    const std::size_t nz = mask.nz, ny = mask.ny, nx = mask.nx;
    std::vector<double> dist(mask.voxels.size());
    for (std::size_t i = 0; i < dist.size(); ++i)
        dist[i] = foreground(mask.voxels[i]) ? 0.0 : kInf;

    std::vector<double> line, out, zbuf;
    std::vector<int> vbuf;

    // x pass
    line.resize(nx);
    for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t y = 0; y < ny; ++y) {
            double* row = dist.data() + (z * ny + y) * nx;
            std::copy(row, row + nx, line.begin());
            edt_1d(line, spacing[2], out, zbuf, vbuf);
            std::copy(out.begin(), out.end(), row);
        }
    // y pass
    line.resize(ny);
    for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t x = 0; x < nx; ++x) {
            for (std::size_t y = 0; y < ny; ++y) line[y] = dist[(z * ny + y) * nx + x];
            edt_1d(line, spacing[1], out, zbuf, vbuf);
            for (std::size_t y = 0; y < ny; ++y) dist[(z * ny + y) * nx + x] = out[y];
        }
    // z pass
    line.resize(nz);
    for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
            for (std::size_t z = 0; z < nz; ++z) line[z] = dist[(z * ny + y) * nx + x];
            edt_1d(line, spacing[0], out, zbuf, vbuf);
            for (std::size_t z = 0; z < nz; ++z) dist[(z * ny + y) * nx + x] = out[z];
        }
    return dist;
}

double percentile_linear(std::vector<double>& v, double q) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 1) return v[0];
    const double h = (static_cast<double>(n) - 1.0) * q / 100.0;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= n) return v[n - 1];
    return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

std::vector<double> directed_distances(const VoxelGrid& from, const std::vector<double>& sq_to) {
    std::vector<double> d;
    for (std::size_t i = 0; i < from.voxels.size(); ++i)
        if (foreground(from.voxels[i])) d.push_back(std::sqrt(sq_to[i]));
    return d;
}

}  // namespace

double hd95(const VoxelGrid& a, const VoxelGrid& b, std::array<double, 3> spacing) {
    check_same_dims(a, b);
    for (double s : spacing)
        if (!(s > 0.0)) throw Error(Errc::argument, "spacing must be positive");

    const std::vector<double> sq_a = squared_edt(a, spacing);
    const std::vector<double> sq_b = squared_edt(b, spacing);
    std::vector<double> ab = directed_distances(a, sq_b);
    std::vector<double> ba = directed_distances(b, sq_a);
    if (ab.empty() || ba.empty())
        throw Error(Errc::undefined_distance, "hd95 needs two non-empty masks");
    return std::max(percentile_linear(ab, 95.0), percentile_linear(ba, 95.0));
}

std::vector<double> composite_score(const std::vector<SegEntry>& entries) {
    if (entries.empty()) throw Error(Errc::empty_input, "composite_score over empty input");
    double mi = 0.0, md = 0.0, mh = 0.0;
    for (const auto& e : entries) {
        mi = std::max(mi, e.iou);
        md = std::max(md, e.dsc);
        mh = std::max(mh, e.hd95);
    }
    std::vector<double> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        const double ti = mi > 0.0 ? e.iou / mi : 0.0;
        const double td = md > 0.0 ? e.dsc / md : 0.0;
        const double th = mh > 0.0 ? e.hd95 / mh : 0.0;
        out.push_back(ti + td - th);
    }
    return out;
}

ClsMetrics cls_metrics(const ConfusionCounts& c) {
    if (c.total() == 0) throw Error(Errc::empty_input, "all-zero confusion counts");
    ClsMetrics m;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());

    auto ratio = [](std::uint64_t num, std::uint64_t den, bool& flag) {
        if (den == 0) {
            flag = true;
            return 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.precision = ratio(c.tp, c.tp + c.fp, m.precision_degenerate);
    m.sensitivity = ratio(c.tp, c.tp + c.fn, m.sensitivity_degenerate);
    m.specificity = ratio(c.tn, c.tn + c.fp, m.specificity_degenerate);
    if (m.precision + m.sensitivity == 0.0) {
        m.f1_degenerate = true;
        m.f1 = 0.0;
    } else {
        m.f1 = 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity);
    }
    return m;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw Error(Errc::arity, "scores and labels differ in length");
    std::size_t npos = 0, nneg = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw Error(Errc::value, "labels must be 0 or 1");
        (l == 1 ? npos : nneg) += 1;
    }
    if (npos == 0 || nneg == 0)
        throw Error(Errc::value, "roc_auc needs both classes present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Midranks for tied scores.
    std::vector<double> rank(scores.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum = 0.0;
    for (std::size_t k = 0; k < labels.size(); ++k)
        if (labels[k] == 1) rank_sum += rank[k];
    const double np = static_cast<double>(npos), nn = static_cast<double>(nneg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

KappaResult cohen_kappa(const std::vector<int>& labels_a, const std::vector<int>& labels_b) {
    if (labels_a.size() != labels_b.size())
        throw Error(Errc::arity, "rater sequences differ in length");
    if (labels_a.empty()) throw Error(Errc::empty_input, "empty rater sequences");
    const double n = static_cast<double>(labels_a.size());
    std::size_t agree = 0, a1 = 0, b1 = 0;
    for (std::size_t i = 0; i < labels_a.size(); ++i) {
        if ((labels_a[i] != 0 && labels_a[i] != 1) || (labels_b[i] != 0 && labels_b[i] != 1))
            throw Error(Errc::value, "labels must be 0 or 1");
        agree += labels_a[i] == labels_b[i];
        a1 += labels_a[i];
        b1 += labels_b[i];
    }
    const double po = static_cast<double>(agree) / n;
    const double pa1 = static_cast<double>(a1) / n, pb1 = static_cast<double>(b1) / n;
    const double pe = pa1 * pb1 + (1.0 - pa1) * (1.0 - pb1);

    KappaResult r;
    if (pe >= 1.0) {
        r.degenerate = true;
        r.kappa = (po >= 1.0) ? 1.0 : 0.0;
        return r;
    }
    r.kappa = (po - pe) / (1.0 - pe);
    return r;
}

KappaResult fleiss_kappa(const std::vector<std::vector<int>>& counts, int n_raters) {
    if (counts.empty()) throw Error(Errc::empty_input, "no subjects");
    if (n_raters < 2) throw Error(Errc::argument, "fleiss_kappa needs n >= 2 raters");
    const std::size_t cats = counts.front().size();
    if (cats < 1) throw Error(Errc::argument, "at least one category required");

    const double n = static_cast<double>(n_raters);
    const double nsub = static_cast<double>(counts.size());
    std::vector<double> pj(cats, 0.0);
    double pbar = 0.0;
    for (const auto& row : counts) {
        if (row.size() != cats) throw Error(Errc::shape, "ragged count matrix");
        long long rowsum = 0;
        double sq = 0.0;
        for (std::size_t j = 0; j < cats; ++j) {
            if (row[j] < 0) throw Error(Errc::value, "negative count");
            rowsum += row[j];
            sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
            pj[j] += static_cast<double>(row[j]);
        }
        if (rowsum != n_raters)
            throw Error(Errc::value, "row sum differs from the rater count");
        pbar += (sq - n) / (n * (n - 1.0));
    }
    pbar /= nsub;
    double pe = 0.0;
    for (double& p : pj) {
        p /= nsub * n;
        pe += p * p;
    }

    KappaResult r;
    if (pe >= 1.0) {
        r.degenerate = true;
        r.kappa = (pbar >= 1.0) ? 1.0 : 0.0;
        return r;
    }
    r.kappa = (pbar - pe) / (1.0 - pe);
    return r;
}

RatingTable load_ratings_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::io, "cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw Error(Errc::format, "empty ratings file " + path);
    if (line.find("subject_id") == std::string::npos)
        throw Error(Errc::format, "missing header in " + path);

    std::map<std::string, std::map<std::string, int>> grid;  // subject -> rater -> label
    std::vector<int> label_set;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        std::string subject, rater, label;
        if (!std::getline(ss, subject, ',') || !std::getline(ss, rater, ',') ||
            !std::getline(ss, label))
            throw Error(Errc::format, "bad row: " + line);
        const int lab = std::stoi(label);
        if (!grid[subject].emplace(rater, lab).second)
            throw Error(Errc::value, "duplicate rating for subject " + subject);
        if (std::find(label_set.begin(), label_set.end(), lab) == label_set.end())
            label_set.push_back(lab);
    }
    if (grid.empty()) throw Error(Errc::empty_input, "no ratings in " + path);
    std::sort(label_set.begin(), label_set.end());

    RatingTable table;
    table.categories = label_set;
    const std::size_t n_raters = grid.begin()->second.size();
    for (const auto& [rater, _] : grid.begin()->second) table.raters.push_back(rater);
    table.by_rater.assign(n_raters, {});

    for (const auto& [subject, ratings] : grid) {
        if (ratings.size() != n_raters)
            throw Error(Errc::value, "subject " + subject + " has a different rater count");
        table.subjects.push_back(subject);
        std::vector<int> row(label_set.size(), 0);
        std::size_t ri = 0;
        for (const auto& [rater, lab] : ratings) {
            if (rater != table.raters[ri])
                throw Error(Errc::value, "rater set differs for subject " + subject);
            const auto it = std::find(label_set.begin(), label_set.end(), lab);
            row[static_cast<std::size_t>(it - label_set.begin())] += 1;
            table.by_rater[ri].push_back(lab);
            ++ri;
        }
        table.counts.push_back(std::move(row));
    }
    return table;
}

}  // namespace spinevox
