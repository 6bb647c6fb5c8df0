#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>

namespace fdistill {

// The four f-divergences the lab works with. All logarithms are natural.
enum class DivergenceKind { KL, RKL, JS, TVD };

const char* kind_name(DivergenceKind kind);
DivergenceKind parse_kind(std::string_view name);  // "kl" / "rkl" / "js" / "tvd"

// Generator f with f(1) = 0, one per kind, evaluated at t > 0:
//   KL   f(t) = t ln t
//   RKL  f(t) = -ln t
//   JS   f(t) = (1/2) [ -(t+1) ln((t+1)/2) + t ln t ]
//   TVD  f(t) = (1/2) |t - 1|
// The JS generator carries the 1/2 so that sum_i q_i f(p_i/q_i) equals the
// half-weighted Jensen-Shannon divergence, whose maximum is ln 2.
// t <= 0 (or non-finite) throws std::domain_error; limits at zero probability
// are handled inside pointwise_divergence, not here.
double f_value(DivergenceKind kind, double t);

bool is_prob_vector(const Eigen::Ref<const Eigen::VectorXd>& p, double tol = 1e-9);
// Throws std::invalid_argument unless entries are >= 0 and sum to 1 within tol.
void validate_prob_vector(const Eigen::Ref<const Eigen::VectorXd>& p, double tol = 1e-9);

// D_f(p || q) = sum_i q_i f(p_i / q_i) with the exact limit conventions:
//   p_i = q_i = 0          contributes 0
//   q_i = 0 < p_i          KL -> +inf, RKL -> 0, JS -> (1/2) p_i ln 2, TVD -> (1/2) p_i
//   p_i = 0 < q_i          KL -> 0, RKL -> +inf, JS -> (1/2) q_i ln 2, TVD -> (1/2) q_i
// May return +inf; +inf compares greater than any finite value. No flooring
// happens here; this is the oracle path.
double pointwise_divergence(const Eigen::Ref<const Eigen::VectorXd>& p,
                            const Eigen::Ref<const Eigen::VectorXd>& q,
                            DivergenceKind kind);

// The balanced mixture (p + q) / 2.
Eigen::VectorXd mixture(const Eigen::Ref<const Eigen::VectorXd>& p,
                        const Eigen::Ref<const Eigen::VectorXd>& q);

}  // namespace fdistill
