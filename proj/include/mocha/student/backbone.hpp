#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/numerics/rng.hpp"
#include "mocha/student/params.hpp"
#include "mocha/student/region_pool.hpp"

namespace mocha {

struct BackboneConfig {
    std::size_t input_channels = 22;
    std::size_t grid = 16;
    std::vector<std::size_t> level_channels{16, 32, 64};

    std::size_t feature_dim() const {
        std::size_t d = 0;
        for (auto c : level_channels) d += c;
        return d;
    }

    void validate() const {
        require(input_channels >= 1 && !level_channels.empty(), ErrorKind::InvalidConfig, "bad backbone shape");
        require(grid % (std::size_t{1} << (level_channels.size() - 1)) == 0, ErrorKind::InvalidConfig,
                "grid must halve cleanly once per extra level");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackboneConfig, input_channels, grid, level_channels)

/// Pyramid stub: level 0 is a per-cell linear map + GELU of the pixels; each
/// further level 2x2-average-pools the previous one and applies its own
/// per-cell linear map + GELU.
class Backbone {
public:
    Backbone() = default;

    Backbone(BackboneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(derive_seed(seed, 0xBAC4));
        std::size_t fan_in = cfg_.input_channels;
        for (std::size_t j = 0; j < cfg_.level_channels.size(); ++j) {
            const std::size_t out = cfg_.level_channels[j];
            params_.add("level" + std::to_string(j) + ".weight",
                        Tensor::randn({fan_in, out}, rng, 1.0 / std::sqrt(static_cast<double>(fan_in))));
            params_.add("level" + std::to_string(j) + ".bias", Tensor({out}));
            fan_in = out;
        }
    }

    const BackboneConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// pixels: (grid*grid) x input_channels; vars from params().bind().
    std::vector<ad::LevelVar> forward(ad::Tape& tape, const std::vector<ad::Var>& vars, const Tensor& pixels) const {
        require(pixels.rank() == 2 && pixels.rows() == cfg_.grid * cfg_.grid && pixels.cols() == cfg_.input_channels,
                ErrorKind::DimensionMismatch, "backbone input has shape " + shape_string(pixels.shape()));
        std::vector<ad::LevelVar> levels;
        ad::Var x = tape.constant(pixels);
        std::size_t h = cfg_.grid, w = cfg_.grid;
        for (std::size_t j = 0; j < cfg_.level_channels.size(); ++j) {
            if (j > 0) {
                x = ad::avg_pool2x2(x, h, w);
                h /= 2;
                w /= 2;
            }
            x = ad::gelu(ad::linear(x, vars[2 * j], vars[2 * j + 1]));
            levels.push_back({x, h, w});
        }
        return levels;
    }

    MultiscaleFeatures features(const Tensor& pixels) const {
        ad::Tape tape;
        const auto levels = forward(tape, params_.bind(tape, false), pixels);
        MultiscaleFeatures out;
        for (const auto& l : levels) out.push_back({l.height, l.width, l.map.value()});
        return out;
    }

private:
    BackboneConfig cfg_;
    ParamStore params_;
};

} // namespace mocha
