#include "fdistill/metrics.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_set>

namespace fdistill {

double average_nll(const TabularARModel& scorer, const std::vector<Sequence>& seqs,
                   double prob_floor) {
  if (seqs.empty()) throw std::invalid_argument("average_nll needs at least one sequence");
  if (!(prob_floor > 0.0) || prob_floor > 1e-6) {
    throw std::invalid_argument("prob_floor must lie in (0, 1e-6]");
  }
  double total = 0.0;
  for (const Sequence& seq : seqs) {
    if (static_cast<int>(seq.size()) != scorer.horizon) {
      throw std::invalid_argument("sequence length must equal horizon");
    }
    for (int t = 0; t < scorer.horizon; ++t) {
      const int tok = seq[t];
      if (tok < 0 || tok >= scorer.vocab) throw std::invalid_argument("token out of range");
      const double p = cond_dist(scorer, seq.data(), t)[tok];
      total -= std::log(p < prob_floor ? prob_floor : p);
    }
  }
  return total / static_cast<double>(seqs.size());
}

double distinct_ngram_fraction(const std::vector<Sequence>& seqs, int n, int vocab) {
  if (seqs.empty()) throw std::invalid_argument("need at least one sequence");
  if (n < 1) throw std::invalid_argument("n-gram order must be at least 1");
  if (vocab < 2) throw std::invalid_argument("vocab must be at least 2");
  std::unordered_set<std::uint64_t> seen;
  std::int64_t total = 0;
  for (const Sequence& seq : seqs) {
    if (static_cast<int>(seq.size()) < n) {
      throw std::invalid_argument("sequence shorter than n-gram order");
    }
    for (std::size_t start = 0; start + n <= seq.size(); ++start) {
      std::uint64_t key = 0;
      for (int j = 0; j < n; ++j) {
        const int tok = seq[start + j];
        if (tok < 0 || tok >= vocab) throw std::invalid_argument("token out of range");
        key = key * static_cast<std::uint64_t>(vocab) + static_cast<std::uint64_t>(tok);
      }
      seen.insert(key);
      ++total;
    }
  }
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

RiskReport evaluate_risks(const TabularARModel& teacher, const TabularARModel& student,
                          int n_samples, std::uint64_t seed, double prob_floor) {
  if (teacher.vocab != student.vocab || teacher.horizon != student.horizon) {
    throw std::invalid_argument("teacher and student must share vocab and horizon");
  }
  if (n_samples < 1) throw std::invalid_argument("n_samples must be at least 1");
  Rng student_rng(derive_seed(seed, 0));
  Rng teacher_rng(derive_seed(seed, 1));
  const std::vector<Sequence> student_samples = sample_many(student, student_rng, n_samples);
  const std::vector<Sequence> teacher_samples = sample_many(teacher, teacher_rng, n_samples);

  RiskReport report;
  report.likelihood_risk = average_nll(teacher, student_samples, prob_floor);
  report.coverage_risk = average_nll(student, teacher_samples, prob_floor);
  const int n = teacher.horizon >= 2 ? 2 : 1;
  report.distinct_student = distinct_ngram_fraction(student_samples, n, teacher.vocab);
  report.distinct_teacher = distinct_ngram_fraction(teacher_samples, n, teacher.vocab);
  return report;
}

}  // namespace fdistill
