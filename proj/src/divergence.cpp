#include "fdistill/divergence.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fdistill {

namespace {
constexpr double kLn2 = 0.6931471805599453;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

const char* kind_name(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::KL: return "kl";
    case DivergenceKind::RKL: return "rkl";
    case DivergenceKind::JS: return "js";
    case DivergenceKind::TVD: return "tvd";
  }
  throw std::invalid_argument("unknown divergence kind");
}

DivergenceKind parse_kind(std::string_view name) {
  if (name == "kl") return DivergenceKind::KL;
  if (name == "rkl") return DivergenceKind::RKL;
  if (name == "js") return DivergenceKind::JS;
  if (name == "tvd") return DivergenceKind::TVD;
  throw std::invalid_argument("unknown divergence kind: " + std::string(name));
}

double f_value(DivergenceKind kind, double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw std::domain_error("f_value requires a finite ratio t > 0");
  }
  switch (kind) {
    case DivergenceKind::KL:
      return t * std::log(t);
    case DivergenceKind::RKL:
      return -std::log(t);
    case DivergenceKind::JS:
      return 0.5 * (-(t + 1.0) * std::log(0.5 * (t + 1.0)) + t * std::log(t));
    case DivergenceKind::TVD:
      return 0.5 * std::abs(t - 1.0);
  }
  throw std::invalid_argument("unknown divergence kind");
}

bool is_prob_vector(const Eigen::Ref<const Eigen::VectorXd>& p, double tol) {
  if (p.size() == 0) return false;
  if ((p.array() < 0.0).any()) return false;
  if (!p.allFinite()) return false;
  return std::abs(p.sum() - 1.0) <= tol;
}

void validate_prob_vector(const Eigen::Ref<const Eigen::VectorXd>& p, double tol) {
  if (!is_prob_vector(p, tol)) {
    throw std::invalid_argument("not a probability vector (needs entries >= 0 summing to 1)");
  }
}

double pointwise_divergence(const Eigen::Ref<const Eigen::VectorXd>& p,
                            const Eigen::Ref<const Eigen::VectorXd>& q,
                            DivergenceKind kind) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("pointwise_divergence: dimension mismatch");
  }
  validate_prob_vector(p);
  validate_prob_vector(q);

  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    const double qi = q[i];
    if (pi == 0.0 && qi == 0.0) continue;
    if (qi == 0.0) {  // pi > 0
      switch (kind) {
        case DivergenceKind::KL: return kInf;
        case DivergenceKind::RKL: break;  // contributes 0
        case DivergenceKind::JS: total += 0.5 * pi * kLn2; break;
        case DivergenceKind::TVD: total += 0.5 * pi; break;
      }
      continue;
    }
    if (pi == 0.0) {  // qi > 0; the t -> 0+ limit of q f(t)
      switch (kind) {
        case DivergenceKind::KL: break;  // q * (t ln t -> 0)
        case DivergenceKind::RKL: return kInf;
        case DivergenceKind::JS: total += 0.5 * qi * kLn2; break;
        case DivergenceKind::TVD: total += 0.5 * qi; break;
      }
      continue;
    }
    total += qi * f_value(kind, pi / qi);
  }
  return total;
}

Eigen::VectorXd mixture(const Eigen::Ref<const Eigen::VectorXd>& p,
                        const Eigen::Ref<const Eigen::VectorXd>& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("mixture: dimension mismatch");
  }
  return 0.5 * (p + q);
}

}  // namespace fdistill
