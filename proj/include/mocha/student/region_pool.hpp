#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mocha/error.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/numerics/tensor.hpp"
#include "mocha/teacher/world.hpp"

namespace mocha {

/// One level of a feature pyramid, stored as (height*width) x channels.
struct FeatureMap {
    std::size_t height = 0;
    std::size_t width = 0;
    Tensor data;

    std::size_t channels() const { return data.cols(); }
};

using MultiscaleFeatures = std::vector<FeatureMap>;

/// Common-grid extent: the finest level's spatial size.
inline std::pair<std::size_t, std::size_t> common_grid(std::span<const std::size_t> heights,
                                                       std::span<const std::size_t> widths) {
    return {*std::max_element(heights.begin(), heights.end()), *std::max_element(widths.begin(), widths.end())};
}

struct CellRange {
    std::size_t begin = 0;
    std::size_t end = 1;
};

/// floor(start * grid) .. ceil(end * grid), clamped, at least one cell.
inline CellRange crop_range(double start, double end, std::size_t grid) {
    const double g = static_cast<double>(grid);
    auto lo = static_cast<long>(std::floor(start * g));
    auto hi = static_cast<long>(std::ceil(end * g));
    lo = std::clamp(lo, 0L, static_cast<long>(grid) - 1);
    hi = std::clamp(hi, 0L, static_cast<long>(grid));
    if (hi <= lo) hi = lo + 1;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

/// Averaging weights over the cells of one level (height x width) for a box
/// cropped on the common grid after nearest-neighbour upsampling.
inline std::vector<double> pooling_weights(const BBox& box, std::size_t height, std::size_t width,
                                           std::size_t grid_h, std::size_t grid_w) {
    const CellRange rows = crop_range(box.y1, box.y2, grid_h);
    const CellRange cols = crop_range(box.x1, box.x2, grid_w);
    std::vector<double> w(height * width, 0.0);
    const double count = static_cast<double>((rows.end - rows.begin) * (cols.end - cols.begin));
    for (std::size_t r = rows.begin; r < rows.end; ++r)
        for (std::size_t c = cols.begin; c < cols.end; ++c) {
            const std::size_t sr = r * height / grid_h;
            const std::size_t sc = c * width / grid_w;
            w[sr * width + sc] += 1.0 / count;
        }
    return w;
}

inline void validate_features(const MultiscaleFeatures& feats) {
    require(!feats.empty(), ErrorKind::DimensionMismatch, "feature pyramid has no levels");
    for (const auto& f : feats)
        require(f.height > 0 && f.width > 0 && f.data.rank() == 2 && f.data.rows() == f.height * f.width &&
                    f.data.cols() > 0,
                ErrorKind::DimensionMismatch, "malformed feature map " + shape_string(f.data.shape()));
}

/// Region descriptor: per level, average of the box's cells on the common
/// grid; concatenated over levels (length = sum of level channels).
inline std::vector<double> region_pool(const MultiscaleFeatures& feats, const BBox& box) {
    validate_features(feats);
    require(box.valid(), ErrorKind::DimensionMismatch, "invalid bbox");
    std::vector<std::size_t> hs, ws;
    for (const auto& f : feats) {
        hs.push_back(f.height);
        ws.push_back(f.width);
    }
    const auto [gh, gw] = common_grid(hs, ws);
    std::vector<double> out;
    for (const auto& f : feats) {
        const auto w = pooling_weights(box, f.height, f.width, gh, gw);
        const std::size_t base = out.size();
        out.resize(base + f.channels(), 0.0);
        for (std::size_t cell = 0; cell < w.size(); ++cell) {
            if (w[cell] == 0.0) continue;
            for (std::size_t c = 0; c < f.channels(); ++c) out[base + c] += w[cell] * f.data(cell, c);
        }
    }
    return out;
}

namespace ad {

/// A differentiable pyramid level.
struct LevelVar {
    Var map;
    std::size_t height = 0;
    std::size_t width = 0;
};

/// Pools every box from every level; returns n_boxes x d_s.
inline Var region_pool(const std::vector<LevelVar>& levels, std::span<const BBox> boxes) {
    require(!levels.empty() && !boxes.empty(), ErrorKind::DimensionMismatch, "region_pool needs levels and boxes");
    std::vector<std::size_t> hs, ws;
    for (const auto& l : levels) {
        hs.push_back(l.height);
        ws.push_back(l.width);
    }
    const auto [gh, gw] = common_grid(hs, ws);
    Tape& tape = levels.front().map.tape();
    std::vector<Var> parts;
    for (const auto& l : levels) {
        Tensor weights({boxes.size(), l.height * l.width});
        for (std::size_t b = 0; b < boxes.size(); ++b) {
            require(boxes[b].valid(), ErrorKind::DimensionMismatch, "invalid bbox");
            const auto w = pooling_weights(boxes[b], l.height, l.width, gh, gw);
            std::copy(w.begin(), w.end(), weights.row(b).begin());
        }
        parts.push_back(matmul(tape.constant(std::move(weights)), l.map));
    }
    return parts.size() == 1 ? parts.front() : concat_cols(parts);
}

/// Dense per-cell features on the common grid: (grid_h*grid_w) x d_s.
inline Var dense_features(const std::vector<LevelVar>& levels) {
    std::vector<std::size_t> hs, ws;
    for (const auto& l : levels) {
        hs.push_back(l.height);
        ws.push_back(l.width);
    }
    const auto [gh, gw] = common_grid(hs, ws);
    Tape& tape = levels.front().map.tape();
    std::vector<Var> parts;
    for (const auto& l : levels) {
        Tensor upsample({gh * gw, l.height * l.width});
        for (std::size_t r = 0; r < gh; ++r)
            for (std::size_t c = 0; c < gw; ++c) upsample(r * gw + c, (r * l.height / gh) * l.width + c * l.width / gw) = 1.0;
        parts.push_back(matmul(tape.constant(std::move(upsample)), l.map));
    }
    return parts.size() == 1 ? parts.front() : concat_cols(parts);
}

} // namespace ad

} // namespace mocha
