#pragma once

#include <cstdint>
#include <vector>

#include "fdistill/model.hpp"

namespace fdistill {

// Sample-based quality probes for a trained student against its teacher.
// Both risks are average per-sequence NLLs with a probability floor applied
// per step, so a zero-probability step costs -log(floor) rather than
// infinity and sample means stay finite and comparable.
struct RiskReport {
  double likelihood_risk = 0.0;  // teacher NLL of student samples: high when
                                 // the student emits sequences the teacher
                                 // would not (mode averaging)
  double coverage_risk = 0.0;    // student NLL of teacher samples: high when
                                 // the student misses teacher modes (collapse)
  double distinct_student = 0.0; // distinct n-gram fraction of student samples
  double distinct_teacher = 0.0; // same probe on the teacher samples
};

// Average NLL of `seqs` under `scorer`, each conditional floored before the
// log (default floor 1e-12).
double average_nll(const TabularARModel& scorer, const std::vector<Sequence>& seqs,
                   double prob_floor = 1e-12);

// Fraction of distinct n-grams among all n-grams of the sample set: a cheap
// diversity probe, 1.0 when every window differs, near 0 under collapse.
// Requires 1 <= n <= horizon.
double distinct_ngram_fraction(const std::vector<Sequence>& seqs, int n, int vocab);

// Draws `n_samples` from each model with independent sub-streams of `seed`
// and fills all four fields; bigrams (or unigrams when horizon == 1) feed the
// distinct-fraction probes.
RiskReport evaluate_risks(const TabularARModel& teacher, const TabularARModel& student,
                          int n_samples, std::uint64_t seed, double prob_floor = 1e-12);

}  // namespace fdistill
