#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "fdistill/decompose.hpp"
#include "fdistill/model.hpp"

namespace fdistill {

// Training objectives: the four divergence estimators plus the hard-target
// baseline (SEQKD), student-expected teacher energy (ENGINE), and plain
// maximum likelihood on provided data (MLE).
enum class TrainKind { KL, RKL, JS, TVD, SEQKD, ENGINE, MLE };

const char* train_kind_name(TrainKind kind);
TrainKind parse_train_kind(std::string_view name);
bool is_divergence_train_kind(TrainKind kind);
DivergenceKind to_divergence_kind(TrainKind kind);  // KL/RKL/JS/TVD only

enum class Optimizer { ADAM, SGD };
enum class TeacherSampling { ONLINE, OFFLINE };

struct TrainConfig {
  TrainKind kind = TrainKind::KL;
  JsConditionalMode js_mode = JsConditionalMode::MIXTURE_OF_CONDITIONALS;
  int steps = 1000;
  double learning_rate = 0.05;
  Optimizer optimizer = Optimizer::ADAM;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int mc_samples_per_step = 1;
  TeacherSampling teacher_sampling = TeacherSampling::ONLINE;
  int offline_cache_size = 64;
  std::uint64_t seed = 1;
  double prob_floor = 1e-12;

  bool operator==(const TrainConfig&) const = default;
};

// Throws ConfigError on out-of-range fields or contradictions (an OFFLINE
// teacher-sample cache requested for a kind that consumes no teacher samples:
// RKL, ENGINE, SEQKD).
void validate_config(const TrainConfig& cfg);

// Teacher sequences drawn once before training; contents are fixed after
// construction and cycled through during OFFLINE training.
struct TeacherSampleCache {
  std::vector<Sequence> sequences;
  std::uint64_t origin_seed = 0;
};

// When `teacher_evals` is given, the n * horizon conditional queries spent
// sampling are added to it.
TeacherSampleCache build_offline_cache(const TabularARModel& teacher, int n,
                                       std::uint64_t seed,
                                       long long* teacher_evals = nullptr);

struct LossReport {
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> gradient;  // congruent to the student's logits
  long long teacher_eval_count = 0;       // teacher conditional queries consumed
};

// Loss and analytic gradient with respect to the student's logits on frozen
// sampled sequences. Stop-gradient contract: derivatives flow only through
// the student factors written in the per-step sums (including q inside the JS
// mixture m); the sampled prefixes and their sampling distributions are
// constants. Role of the sequence lists per kind:
//   KL, JS, TVD   teacher_seqs = teacher-sampled side; JS/TVD also use
//                 student_seqs for the student-sampled side
//   RKL, ENGINE   student_seqs only
//   SEQKD         teacher_seqs holds the fixed beam target(s)
//   MLE           teacher_seqs is the data
// The loss equals mc_loss / seqkd_loss on the same inputs (divergence kinds /
// SEQKD); gradients of floored logs are zero below the floor.
LossReport loss_and_grad(const TabularARModel& teacher, const TabularARModel& student,
                         const TrainConfig& cfg,
                         const std::vector<Sequence>& teacher_seqs,
                         const std::vector<Sequence>& student_seqs);

// Value-only path used by finite-difference checks: divergence kinds and
// SEQKD delegate to the decompose-module objectives; ENGINE and MLE are
// computed here. Independent of the gradient accumulation above.
double training_loss(const TabularARModel& teacher, const TabularARModel& student,
                     const TrainConfig& cfg,
                     const std::vector<Sequence>& teacher_seqs,
                     const std::vector<Sequence>& student_seqs);

struct AdamState {
  std::vector<Eigen::MatrixXd> m, v;
  long long t = 0;
};
AdamState make_adam_state(const std::vector<Eigen::MatrixXd>& params);

// One bias-corrected Adam update (epsilon 1e-8) / one plain SGD update.
void adam_step(std::vector<Eigen::MatrixXd>& params,
               const std::vector<Eigen::MatrixXd>& grad, AdamState& state, double lr,
               double beta1, double beta2);
void sgd_step(std::vector<Eigen::MatrixXd>& params,
              const std::vector<Eigen::MatrixXd>& grad, double lr);

// Full-batch maximum-likelihood training on fixed data. Returns whichever of
// the final or initial parameters scores the lower average NLL, so the
// returned model is never worse than the input on `data`.
TabularARModel mle_warm_start(const TabularARModel& init,
                              const std::vector<Sequence>& data, const TrainConfig& cfg);

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  long long teacher_evals = 0;  // cumulative through this step
};

struct TrainResult {
  TabularARModel student;
  std::vector<StepRecord> history;
  long long total_teacher_evals = 0;
};

// The distillation loop. Per step: draw fresh student samples where the kind
// needs them, draw teacher samples fresh (ONLINE) or cycle the prebuilt cache
// (OFFLINE), evaluate loss_and_grad, apply one optimizer update. SEQKD beam
// search runs once up front and the target is frozen. All randomness derives
// from cfg.seed, so equal configs give bit-identical histories.
TrainResult train(const TabularARModel& teacher, TabularARModel student,
                  const TrainConfig& cfg);

// One record per step as line-delimited JSON / CSV (step, loss, cumulative
// teacher evals).
void write_history_jsonl(std::ostream& out, const std::vector<StepRecord>& history);
void write_history_csv(std::ostream& out, const std::vector<StepRecord>& history);

}  // namespace fdistill
