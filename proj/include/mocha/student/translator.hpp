#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/numerics/rng.hpp"
#include "mocha/student/params.hpp"

namespace mocha {

struct TranslatorConfig {
    std::size_t input_dim = 112; ///< d_s
    std::size_t output_dim = 16; ///< d_t
    std::size_t tokens = 8;
    std::size_t heads = 4;
    std::size_t head_dim = 8;
    std::size_t hidden = 128;

    std::size_t token_dim() const { return input_dim / tokens; }

    void validate() const {
        require(tokens >= 1 && input_dim % tokens == 0, ErrorKind::InvalidConfig,
                "token count must divide the input dimension");
        require(output_dim >= 1 && heads >= 1 && head_dim >= 1 && hidden >= 1, ErrorKind::InvalidConfig,
                "translator dimensions must be positive");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TranslatorConfig, input_dim, output_dim, tokens, heads, head_dim,
                                                hidden)

/// Channel-wise attention + MLP map from student space (d_s) to target space (d_t).
///
/// The input vector is cut into `tokens` contiguous channel groups. A
/// multi-head self-attention block mixes the groups (residual around it),
/// then a two-layer GELU MLP maps the flattened result to d_t.
class Translator {
public:
    enum Index : std::size_t { Wq, Wk, Wv, Wo, W1, B1, W2, B2 };

    Translator() = default;

    Translator(TranslatorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(seed, 0x7A45));
        const std::size_t td = cfg_.token_dim(), inner = cfg_.heads * cfg_.head_dim;
        auto init = [&](std::size_t fan_in, std::size_t fan_out) {
            return Tensor::randn({fan_in, fan_out}, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        };
        params_.add("attn.query", init(td, inner));
        params_.add("attn.key", init(td, inner));
        params_.add("attn.value", init(td, inner));
        params_.add("attn.out", init(inner, td));
        params_.add("mlp.weight1", init(cfg_.input_dim, cfg_.hidden));
        params_.add("mlp.bias1", Tensor({cfg_.hidden}));
        params_.add("mlp.weight2", init(cfg_.hidden, cfg_.output_dim));
        params_.add("mlp.bias2", Tensor({cfg_.output_dim}));
    }

    const TranslatorConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// f: n x d_s -> n x d_t.
    ad::Var forward(const std::vector<ad::Var>& vars, const ad::Var& f) const {
        require(f.value().rank() == 2 && f.cols() == cfg_.input_dim, ErrorKind::DimensionMismatch,
                "translator expects n x " + std::to_string(cfg_.input_dim) + ", got " + shape_string(f.shape()));
        const std::size_t n = f.rows();
        const ad::Var tok = ad::reshape(f, {n * cfg_.tokens, cfg_.token_dim()});
        const ad::Var q = ad::matmul(tok, vars[Wq]);
        const ad::Var k = ad::matmul(tok, vars[Wk]);
        const ad::Var v = ad::matmul(tok, vars[Wv]);
        const ad::Var att = ad::block_attention(q, k, v, cfg_.tokens, cfg_.heads);
        const ad::Var x = ad::reshape(ad::add(tok, ad::matmul(att, vars[Wo])), {n, cfg_.input_dim});
        const ad::Var hidden = ad::gelu(ad::linear(x, vars[W1], vars[B1]));
        return ad::linear(hidden, vars[W2], vars[B2]);
    }

    std::vector<double> translate(std::span<const double> f) const {
        ad::Tape tape;
        const auto out = forward(params_.bind(tape, false), tape.constant(Tensor({1, f.size()}, {f.begin(), f.end()})));
        return out.value().values();
    }

    Tensor translate_rows(const Tensor& f) const {
        ad::Tape tape;
        return forward(params_.bind(tape, false), tape.constant(f)).value();
    }

private:
    TranslatorConfig cfg_;
    ParamStore params_;
};

} // namespace mocha
