#include "fdistill/decompose.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fdistill {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const TabularARModel& teacher, const TabularARModel& student) {
  if (teacher.vocab != student.vocab || teacher.horizon != student.horizon) {
    throw std::invalid_argument("teacher and student must share vocab and horizon");
  }
}

void check_sample(const TabularARModel& m, const Sequence& seq) {
  if (static_cast<int>(seq.size()) != m.horizon) {
    throw std::invalid_argument("sampled sequence length must equal horizon");
  }
  for (int tok : seq) {
    if (tok < 0 || tok >= m.vocab) throw std::invalid_argument("token out of range");
  }
}

double clamped_log(double prob, double floor) { return std::log(prob < floor ? floor : prob); }

// Mixture weight of the teacher side given log prefix masses, i.e.
// p(pre) / (p(pre) + q(pre)) computed stably. Callers guarantee at least one
// side has positive mass.
double teacher_mix_weight(double lp, double lq) {
  if (lp == -kInf) return 0.0;
  if (lq == -kInf) return 1.0;
  return 1.0 / (1.0 + std::exp(lq - lp));
}

}  // namespace

const char* js_mode_name(JsConditionalMode mode) {
  return mode == JsConditionalMode::EXACT_MARGINAL_RATIO ? "exact" : "mixture";
}

JsConditionalMode parse_js_mode(std::string_view name) {
  if (name == "exact") return JsConditionalMode::EXACT_MARGINAL_RATIO;
  if (name == "mixture") return JsConditionalMode::MIXTURE_OF_CONDITIONALS;
  throw std::invalid_argument("unknown js mode: " + std::string(name));
}

double brute_force_seq_divergence(const TabularARModel& teacher,
                                  const TabularARModel& student,
                                  DivergenceKind kind) {
  check_pair(teacher, student);
  return pointwise_divergence(seq_distribution(teacher), seq_distribution(student), kind);
}

double stepwise_exact(const TabularARModel& teacher, const TabularARModel& student,
                      DivergenceKind kind, JsConditionalMode js_mode) {
  check_pair(teacher, student);
  checked_sequence_count(teacher.vocab, teacher.horizon);
  const int V = teacher.vocab;
  const int T = teacher.horizon;

  // Log prefix masses under both models for every prefix of the current
  // length, in lexicographic prefix order.
  Eigen::VectorXd lp(1), lq(1);
  lp[0] = 0.0;
  lq[0] = 0.0;
  Sequence prefix(T, 0);
  double total = 0.0;

  for (int t = 0; t < T; ++t) {
    const std::int64_t n = lp.size();
    const bool extend = t + 1 < T;
    Eigen::VectorXd next_lp(extend ? n * V : 0), next_lq(extend ? n * V : 0);
    for (std::int64_t ip = 0; ip < n; ++ip) {
      std::int64_t rem = ip;
      for (int j = t - 1; j >= 0; --j) {
        prefix[j] = static_cast<int>(rem % V);
        rem /= V;
      }
      const Eigen::VectorXd plog = cond_log_dist(teacher, prefix.data(), t);
      const Eigen::VectorXd qlog = cond_log_dist(student, prefix.data(), t);
      const Eigen::VectorXd prow = exp_probs(plog);
      const Eigen::VectorXd qrow = exp_probs(qlog);
      const double wp = std::exp(lp[ip]);
      const double wq = std::exp(lq[ip]);

      switch (kind) {
        case DivergenceKind::KL:
          if (wp > 0.0) total += wp * pointwise_divergence(prow, qrow, DivergenceKind::KL);
          break;
        case DivergenceKind::RKL:
          if (wq > 0.0) total += wq * pointwise_divergence(prow, qrow, DivergenceKind::RKL);
          break;
        case DivergenceKind::TVD:
          if (wp > 0.0 || wq > 0.0) {
            total += 0.25 * (wp + wq) * (prow - qrow).lpNorm<1>();
          }
          break;
        case DivergenceKind::JS: {
          if (wp == 0.0 && wq == 0.0) break;
          const double alpha = js_mode == JsConditionalMode::MIXTURE_OF_CONDITIONALS
                                   ? 0.5
                                   : teacher_mix_weight(lp[ip], lq[ip]);
          const Eigen::VectorXd mrow = alpha * prow + (1.0 - alpha) * qrow;
          if (wp > 0.0) {
            double p_side = 0.0;
            for (int y = 0; y < V; ++y) {
              if (prow[y] > 0.0) p_side += prow[y] * (plog[y] - std::log(mrow[y]));
            }
            total += 0.5 * wp * p_side;
          }
          if (wq > 0.0) {
            double q_side = 0.0;
            for (int y = 0; y < V; ++y) {
              if (qrow[y] > 0.0) q_side += qrow[y] * (qlog[y] - std::log(mrow[y]));
            }
            total += 0.5 * wq * q_side;
          }
          break;
        }
      }
      if (extend) {
        for (int y = 0; y < V; ++y) {
          next_lp[ip * V + y] = lp[ip] + plog[y];
          next_lq[ip * V + y] = lq[ip] + qlog[y];
        }
      }
    }
    if (extend) {
      lp.swap(next_lp);
      lq.swap(next_lq);
    }
  }
  return total;
}

ObjectiveValue mc_loss(const TabularARModel& teacher, const TabularARModel& student,
                       DivergenceKind kind, JsConditionalMode js_mode,
                       const std::vector<Sequence>& teacher_seqs,
                       const std::vector<Sequence>& student_seqs,
                       double prob_floor) {
  check_pair(teacher, student);
  if (!(prob_floor > 0.0) || prob_floor > 1e-6) {
    throw std::invalid_argument("prob_floor must lie in (0, 1e-6]");
  }
  const bool needs_teacher = kind == DivergenceKind::KL || kind == DivergenceKind::JS ||
                             kind == DivergenceKind::TVD;
  const bool needs_student = kind == DivergenceKind::RKL || kind == DivergenceKind::JS ||
                             kind == DivergenceKind::TVD;
  if (needs_teacher && teacher_seqs.empty()) {
    throw std::invalid_argument("teacher-sampled sequences required for this kind");
  }
  if (needs_student && student_seqs.empty()) {
    throw std::invalid_argument("student-sampled sequences required for this kind");
  }
  const int V = teacher.vocab;
  const int T = teacher.horizon;

  // Per-step inner sums along one sampled sequence; `teacher_side` selects
  // which expectation the sequence stands in for.
  auto walk = [&](const Sequence& seq, bool teacher_side) {
    check_sample(teacher, seq);
    double acc = 0.0;
    double lp_pre = 0.0, lq_pre = 0.0;
    for (int t = 0; t < T; ++t) {
      const Eigen::VectorXd plog = cond_log_dist(teacher, seq.data(), t);
      const Eigen::VectorXd qlog = cond_log_dist(student, seq.data(), t);
      const Eigen::VectorXd prow = exp_probs(plog);
      const Eigen::VectorXd qrow = exp_probs(qlog);
      switch (kind) {
        case DivergenceKind::KL:
          for (int y = 0; y < V; ++y) acc -= prow[y] * clamped_log(qrow[y], prob_floor);
          break;
        case DivergenceKind::RKL:
          for (int y = 0; y < V; ++y) {
            acc += qrow[y] *
                   (clamped_log(qrow[y], prob_floor) - clamped_log(prow[y], prob_floor));
          }
          break;
        case DivergenceKind::JS: {
          const double alpha = js_mode == JsConditionalMode::MIXTURE_OF_CONDITIONALS
                                   ? 0.5
                                   : teacher_mix_weight(lp_pre, lq_pre);
          const Eigen::VectorXd mrow = alpha * prow + (1.0 - alpha) * qrow;
          if (teacher_side) {
            for (int y = 0; y < V; ++y) {
              acc -= 0.5 * prow[y] * clamped_log(mrow[y], prob_floor);
            }
          } else {
            for (int y = 0; y < V; ++y) {
              acc += 0.5 * qrow[y] *
                     (clamped_log(qrow[y], prob_floor) - clamped_log(mrow[y], prob_floor));
            }
          }
          break;
        }
        case DivergenceKind::TVD:
          acc += 0.25 * (prow - qrow).lpNorm<1>();
          break;
      }
      lp_pre += plog[seq[t]];
      lq_pre += qlog[seq[t]];
    }
    return acc;
  };

  double value = 0.0;
  if (needs_teacher) {
    double side = 0.0;
    for (const Sequence& seq : teacher_seqs) side += walk(seq, /*teacher_side=*/true);
    value += side / static_cast<double>(teacher_seqs.size());
  }
  if (needs_student) {
    double side = 0.0;
    for (const Sequence& seq : student_seqs) side += walk(seq, /*teacher_side=*/false);
    value += side / static_cast<double>(student_seqs.size());
  }
  return ObjectiveValue{value, /*includes_constant=*/false};
}

double seqkd_loss(const TabularARModel& student, const Sequence& hard_target) {
  return -seq_logprob(student, hard_target);
}

double engine_loss_exact(const TabularARModel& teacher, const TabularARModel& student) {
  check_pair(teacher, student);
  const std::int64_t n = checked_sequence_count(teacher.vocab, teacher.horizon);
  double total = 0.0;
  Sequence seq(teacher.horizon, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    const double lq = seq_logprob(student, seq);
    if (lq != -kInf) {
      total += std::exp(lq) * (-seq_logprob(teacher, seq));
    }
    for (int t = teacher.horizon - 1; t >= 0; --t) {
      if (++seq[t] < teacher.vocab) break;
      seq[t] = 0;
    }
  }
  return total;
}

double sequence_entropy(const TabularARModel& m) {
  const std::int64_t n = checked_sequence_count(m.vocab, m.horizon);
  double total = 0.0;
  Sequence seq(m.horizon, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    const double lq = seq_logprob(m, seq);
    if (lq != -kInf) total -= std::exp(lq) * lq;
    for (int t = m.horizon - 1; t >= 0; --t) {
      if (++seq[t] < m.vocab) break;
      seq[t] = 0;
    }
  }
  return total;
}

}  // namespace fdistill
