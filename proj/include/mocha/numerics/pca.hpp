#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/log.hpp"
#include "mocha/numerics/hyperbolic_fit.hpp"
#include "mocha/numerics/tensor.hpp"

namespace mocha {

/// Which per-channel deviation rescales the projected channels.
enum class SigmaMode { Empirical, Fitted };

inline std::string to_string(SigmaMode m) { return m == SigmaMode::Empirical ? "empirical" : "fitted"; }

inline SigmaMode sigma_mode_from_string(const std::string& s) {
    if (s == "empirical") return SigmaMode::Empirical;
    if (s == "fitted") return SigmaMode::Fitted;
    fail(ErrorKind::InvalidConfig, "sigma_mode must be \"empirical\" or \"fitted\", got \"" + s + "\"");
}

inline void to_json(nlohmann::json& j, SigmaMode m) { j = to_string(m); }
inline void from_json(const nlohmann::json& j, SigmaMode& m) { m = sigma_mode_from_string(j.get<std::string>()); }

inline constexpr double kSigmaFloor = 1e-6;

/// Fitted principal-component projector with per-channel rescaling.
struct PcaProjector {
    std::vector<double> mean;               ///< length d
    Tensor components;                      ///< d_t x d, orthonormal rows
    std::vector<double> explained_variance; ///< length d_t, non-increasing
    std::vector<double> sigma;              ///< length d_t, sample std of projected training data
    std::optional<HyperbolicFit> curve;     ///< absent when the deviations could not be fitted

    std::size_t input_dim() const { return mean.size(); }
    std::size_t output_dim() const { return sigma.size(); }

    /// Deviation used to rescale channel c under the given mode.
    double channel_scale(std::size_t c, SigmaMode mode) const {
        if (mode == SigmaMode::Fitted) {
            require(curve.has_value(), ErrorKind::InvalidConfig, "fitted sigma mode without a fitted curve");
            return std::max((*curve)(static_cast<double>(c)), kSigmaFloor);
        }
        return sigma[c];
    }

    std::vector<double> project(std::span<const double> u, bool normalize, SigmaMode mode = SigmaMode::Empirical) const {
        require(u.size() == input_dim(), ErrorKind::DimensionMismatch,
                "projector expects " + std::to_string(input_dim()) + " values, got " + std::to_string(u.size()));
        const std::size_t dt = output_dim(), d = input_dim();
        std::vector<double> out(dt, 0.0);
        for (std::size_t c = 0; c < dt; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += components(c, k) * (u[k] - mean[k]);
            out[c] = normalize ? s / channel_scale(c, mode) : s;
        }
        return out;
    }

    /// Maps an unnormalized projection back to input space (exact when d_t == d).
    std::vector<double> reconstruct(std::span<const double> projected) const {
        require(projected.size() == output_dim(), ErrorKind::DimensionMismatch, "reconstruct length mismatch");
        std::vector<double> out = mean;
        for (std::size_t c = 0; c < output_dim(); ++c)
            for (std::size_t k = 0; k < input_dim(); ++k) out[k] += components(c, k) * projected[c];
        return out;
    }

    Tensor project_rows(const Tensor& data, bool normalize, SigmaMode mode = SigmaMode::Empirical) const {
        Tensor out({data.rows(), output_dim()});
        for (std::size_t r = 0; r < data.rows(); ++r) {
            const auto p = project(data.row(r), normalize, mode);
            std::copy(p.begin(), p.end(), out.row(r).begin());
        }
        return out;
    }
};

/// Principal components of the rows of `data` (n x d), keeping `dt` channels.
inline PcaProjector pca_fit(const Tensor& data, std::size_t dt) {
    require(data.rank() == 2, ErrorKind::DimensionMismatch, "pca_fit expects an n x d matrix");
    const std::size_t n = data.rows(), d = data.cols();
    require(n >= 2, ErrorKind::DegenerateData, "pca_fit needs at least two samples");
    require(dt >= 1 && dt <= std::min(n - 1, d), ErrorKind::BadRank,
            "requested " + std::to_string(dt) + " channels from " + std::to_string(n) + " samples of dimension " +
                std::to_string(d));

    Eigen::MatrixXd x(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) x(r, c) = data(r, c);
    const Eigen::RowVectorXd mu = x.colwise().mean();
    x.rowwise() -= mu;
    const double scale = 1.0 / static_cast<double>(n - 1);
    const double total = x.squaredNorm() * scale;
    require(total >= 1e-12, ErrorKind::DegenerateData, "total variance " + std::to_string(total) + " is below 1e-12");

    // Eigenpairs of the d x d covariance, or of the n x n Gram matrix when
    // there are fewer samples than dimensions (same nonzero spectrum).
    const bool gram = n < d;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram ? Eigen::MatrixXd(x * x.transpose() * scale)
                                                             : Eigen::MatrixXd(x.transpose() * x * scale));
    require(eig.info() == Eigen::Success, ErrorKind::DegenerateData, "eigendecomposition failed");
    // Eigenvalues come back ascending.
    const Eigen::VectorXd& values = eig.eigenvalues();
    const Eigen::Index m = values.size();

    PcaProjector p;
    p.mean.assign(mu.data(), mu.data() + d);
    p.components = Tensor({dt, d});
    p.explained_variance.resize(dt);
    for (std::size_t c = 0; c < dt; ++c) {
        const Eigen::Index src = m - 1 - static_cast<Eigen::Index>(c);
        const double lambda = values(src);
        require(lambda > 1e-12 * total, ErrorKind::BadRank,
                "data has rank " + std::to_string(c) + ", fewer than the " + std::to_string(dt) + " requested channels");
        p.explained_variance[c] = lambda;
        Eigen::VectorXd v = gram ? Eigen::VectorXd(x.transpose() * eig.eigenvectors().col(src))
                                 : Eigen::VectorXd(eig.eigenvectors().col(src));
        v.normalize();
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        for (std::size_t k = 0; k < d; ++k) p.components(c, k) = v(static_cast<Eigen::Index>(k));
    }

    Eigen::MatrixXd basis(d, dt);
    for (std::size_t c = 0; c < dt; ++c)
        for (std::size_t k = 0; k < d; ++k) basis(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = p.components(c, k);
    const Eigen::MatrixXd projected = x * basis;
    p.sigma.assign(dt, 0.0);
    for (std::size_t c = 0; c < dt; ++c) {
        const double s = std::sqrt(projected.col(static_cast<Eigen::Index>(c)).squaredNorm() * scale);
        if (s < kSigmaFloor) {
            log_event("pca.sigma_floor", {{"channel", c}, {"sigma", s}, {"floor", kSigmaFloor}});
            p.sigma[c] = kSigmaFloor;
        } else {
            p.sigma[c] = s;
        }
    }

    if (dt >= 4) {
        try {
            p.curve = fit_hyperbolic(p.sigma);
        } catch (const Error& e) {
            log_event("pca.curve_fit_failed", {{"reason", e.what()}});
        }
    }
    return p;
}

inline nlohmann::json to_json(const PcaProjector& p) {
    nlohmann::json j;
    j["d"] = p.input_dim();
    j["d_t"] = p.output_dim();
    j["mean"] = p.mean;
    j["components"] = p.components.values();
    j["explained_variance"] = p.explained_variance;
    j["sigma"] = p.sigma;
    j["curve"] = p.curve ? nlohmann::json{{"a", p.curve->a}, {"b", p.curve->b}, {"c", p.curve->c}}
                         : nlohmann::json(nullptr);
    return j;
}

inline PcaProjector pca_from_json(const nlohmann::json& j) {
    try {
        PcaProjector p;
        const auto d = j.at("d").get<std::size_t>();
        const auto dt = j.at("d_t").get<std::size_t>();
        p.mean = j.at("mean").get<std::vector<double>>();
        p.components = Tensor({dt, d}, j.at("components").get<std::vector<double>>());
        p.sigma = j.at("sigma").get<std::vector<double>>();
        p.explained_variance = j.contains("explained_variance")
                                   ? j.at("explained_variance").get<std::vector<double>>()
                                   : std::vector<double>();
        if (p.explained_variance.empty())
            for (double s : p.sigma) p.explained_variance.push_back(s * s);
        require(p.mean.size() == d && p.sigma.size() == dt && p.explained_variance.size() == dt,
                ErrorKind::DimensionMismatch, "projector document has inconsistent lengths");
        if (const auto& c = j.at("curve"); !c.is_null()) {
            HyperbolicFit fit;
            fit.a = c.at("a").get<double>();
            fit.b = c.at("b").get<double>();
            fit.c = c.at("c").get<double>();
            p.curve = fit;
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, std::string("malformed projector document: ") + e.what());
    }
}

} // namespace mocha
