#pragma once

#include <cmath>
#include <string>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/numerics/distances.hpp"
#include "mocha/numerics/tensor.hpp"

namespace mocha {

struct LossWeights {
    double lambda_dist = 1.0;
    double lambda_emb = 1.0;
    double tau = 1.0;

    void validate() const {
        require(lambda_dist >= 0.0 && lambda_emb >= 0.0, ErrorKind::InvalidConfig, "loss weights must be non-negative");
        require_temperature(tau);
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, lambda_dist, lambda_emb, tau)

/// Pointwise alignment: (1/n) sum_i ( |f_i - u_i|_1 + |f_i - u_i|_2 ).
inline ad::Var distill_loss(const ad::Var& student, const ad::Var& target) {
    require(student.shape() == target.shape() && student.value().rank() == 2 && student.rows() >= 1,
            ErrorKind::ShapeMismatch,
            "distill_loss: " + shape_string(student.shape()) + " vs " + shape_string(target.shape()));
    const ad::Var diff = ad::sub(student, target);
    const double n = static_cast<double>(student.rows());
    return ad::scale(ad::add(ad::sum(ad::row_l1(diff)), ad::sum(ad::row_l2(diff))), 1.0 / n);
}

/// Relational alignment: cross-entropy between the masked distance softmaxes of
/// target and student rows. Only the row counts must agree; the target side is
/// a constant.
inline ad::Var embedding_loss(const ad::Var& student, const Tensor& target, double tau) {
    require(student.value().rank() == 2 && target.rank() == 2 && student.rows() == target.rows(), ErrorKind::ShapeMismatch,
            "embedding_loss: " + shape_string(student.shape()) + " vs " + shape_string(target.shape()));
    require(target.rows() >= 2, ErrorKind::ShapeMismatch, "embedding_loss needs at least two rows");
    require_temperature(tau);
    ad::Tape& tape = student.tape();
    const ad::Var p_uu = tape.constant(masked_softmax(pairwise_distances(target), tau));
    const ad::Var log_p_ff = ad::masked_log_softmax(ad::pairwise_distances(student), tau);
    return ad::scale(ad::sum(ad::mul(p_uu, log_p_ff)), -1.0 / static_cast<double>(target.rows()));
}

inline double distill_loss(const Tensor& student, const Tensor& target) {
    ad::Tape tape;
    return distill_loss(tape.constant(student), tape.constant(target)).value().item();
}

inline double embedding_loss(const Tensor& student, const Tensor& target, double tau) {
    ad::Tape tape;
    return embedding_loss(tape.constant(student), target, tau).value().item();
}

/// Mean row entropy of the target distribution: the floor of embedding_loss.
inline double embedding_entropy_floor(const Tensor& target, double tau) {
    const Tensor p = masked_softmax(pairwise_distances(target), tau);
    double h = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t j = 0; j < p.cols(); ++j)
            if (i != j && p(i, j) > 0.0) h -= p(i, j) * std::log(p(i, j));
    return h / static_cast<double>(p.rows());
}

inline double total_loss(double det, double dist, double emb, const LossWeights& w) {
    w.validate();
    return det + w.lambda_dist * dist + w.lambda_emb * emb;
}

inline ad::Var total_loss(const ad::Var& det, const ad::Var& dist, const ad::Var& emb, const LossWeights& w) {
    w.validate();
    return ad::add(det, ad::add(ad::scale(dist, w.lambda_dist), ad::scale(emb, w.lambda_emb)));
}

} // namespace mocha
