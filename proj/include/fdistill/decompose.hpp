#pragma once

#include <string_view>
#include <vector>

#include "fdistill/divergence.hpp"
#include "fdistill/model.hpp"

namespace fdistill {

// How the per-step mixture conditional m(y | prefix) is formed for JS.
//   EXACT_MARGINAL_RATIO     m(y|pre) = m(pre.y) / m(pre) with m the mixture of
//                            the two sequence distributions; this is the form
//                            under which the step-wise JS sum equals the
//                            sequence-level JS exactly.
//   MIXTURE_OF_CONDITIONALS  m(y|pre) = (p(y|pre) + q(y|pre)) / 2; cheaper, the
//                            usual training surrogate, not exactly equal at the
//                            sequence level. The gap is reported, never assumed
//                            zero.
enum class JsConditionalMode { EXACT_MARGINAL_RATIO, MIXTURE_OF_CONDITIONALS };

const char* js_mode_name(JsConditionalMode mode);  // "exact" / "mixture"
JsConditionalMode parse_js_mode(std::string_view name);

// A loss value plus whether model-independent constants are included.
// Training-path estimators (mc_loss) drop such constants and set the flag
// false; the dropped pieces are, per kind:
//   KL   the teacher's conditional entropy along the sampled sequences
//   JS   half the teacher-side sum of p ln p along the sampled sequences
//   RKL, TVD   nothing (the estimator is the full objective)
struct ObjectiveValue {
  double value = 0.0;
  bool includes_constant = false;
};

// Sequence-level divergence by full enumeration of the V^T sequence space:
// pointwise_divergence over the two sequence distributions. The independent
// oracle route; may return +inf for KL/RKL with deterministic models.
double brute_force_seq_divergence(const TabularARModel& teacher,
                                  const TabularARModel& student,
                                  DivergenceKind kind);

// Exact step-wise objective: sum over positions of exactly computed prefix
// expectations (log-domain prefix weights, every prefix enumerated).
//   KL    sum_t E_{pre~p} KL(p(.|pre) || q(.|pre))        equals sequence KL
//   RKL   sum_t E_{pre~q} KL(q(.|pre) || p(.|pre))        equals sequence RKL
//   JS    (1/2) sum_t E_{pre~p} sum_y p ln(p/m)
//       + (1/2) sum_t E_{pre~q} sum_y q ln(q/m)           equals sequence JS in
//                                                         exact-ratio mode
//   TVD   (1/4) sum_t (E_{pre~p} + E_{pre~q}) sum_y |q-p| upper bound on the
//                                                         sequence TVD
// The TVD expression averages the two one-sided prefix bounds; either side
// alone would carry weight 1/2, which is where its factor of two lives.
double stepwise_exact(const TabularARModel& teacher, const TabularARModel& student,
                      DivergenceKind kind,
                      JsConditionalMode js_mode = JsConditionalMode::EXACT_MARGINAL_RATIO);

// Monte Carlo training objective on the given sampled sequences: per-step
// sums over the whole vocabulary are explicit, only the prefix expectations
// are sampled. teacher_seqs feed the teacher-side terms (KL, JS, TVD),
// student_seqs the student-side terms (RKL, JS, TVD); each side averages over
// its list and a required empty list is an error. Conditionals are clamped
// below at prob_floor before any log. Model-independent constants are
// excluded (see ObjectiveValue).
ObjectiveValue mc_loss(const TabularARModel& teacher, const TabularARModel& student,
                       DivergenceKind kind, JsConditionalMode js_mode,
                       const std::vector<Sequence>& teacher_seqs,
                       const std::vector<Sequence>& student_seqs,
                       double prob_floor = 1e-12);

// Hard-target objective: student NLL of one fixed teacher sequence,
// exactly -seq_logprob(student, hard_target).
double seqkd_loss(const TabularARModel& student, const Sequence& hard_target);

// Student-expected teacher energy E_{Y~q}[-ln p(Y)] by exact enumeration.
double engine_loss_exact(const TabularARModel& teacher, const TabularARModel& student);

// Exact Shannon entropy of the model's sequence distribution; by the chain
// rule this equals the sum over positions of expected conditional entropies.
double sequence_entropy(const TabularARModel& m);

}  // namespace fdistill
