#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

#include "fdistill/common.hpp"
#include "fdistill/rng.hpp"

namespace fdistill {

// Order-k tabular autoregressive model over tokens 0..vocab-1 with a fixed
// horizon T. Every sequence has length exactly T.
//
// Non-stationary models keep one logits table per position: at 0-based
// position t the table has vocab^min(order, t) rows (one per context, the
// last min(order, t) prefix tokens read as a base-vocab number, earliest
// token most significant) and vocab columns (next token). A stationary model
// shares a single vocab^order-row table across positions; early positions
// whose prefix is shorter than the order left-pad the context with token 0.
//
// Conditionals are softmax over a table row. Gradients and optimizer state
// elsewhere in the project are vectors of matrices congruent to `logits`.
struct TabularARModel {
  int vocab = 2;
  int horizon = 1;
  int order = 0;
  bool stationary = false;
  std::vector<Eigen::MatrixXd> logits;

  int context_len(int position) const {  // position is 0-based
    return position < order ? position : order;
  }
  int table_index(int position) const { return stationary ? 0 : position; }
};

// Throws std::invalid_argument unless shape fields and table dimensions agree.
void validate_model(const TabularARModel& m);

// Number of context rows the table serving `position` must have.
std::int64_t rows_for_position(const TabularARModel& m, int position);

// Row of the table serving this prefix (prefix length = 0-based position).
int context_row(const TabularARModel& m, const int* prefix, int len);

// Numerically stable softmax / log-softmax of a logits vector.
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& z);
Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& z);

// Elementwise std::exp. Eigen's vectorized exp clamps its result near the
// smallest normal double; std::exp underflows to exact zero. Every
// log-to-probability conversion goes through this so the zero-probability
// conventions fire identically on all evaluation routes.
Eigen::VectorXd exp_probs(const Eigen::Ref<const Eigen::VectorXd>& logp);

// Next-token distribution after `prefix`; prefix length must be < horizon.
Eigen::VectorXd cond_dist(const TabularARModel& m, const int* prefix, int len);
Eigen::VectorXd cond_dist(const TabularARModel& m, const Sequence& prefix);
Eigen::VectorXd cond_log_dist(const TabularARModel& m, const int* prefix, int len);
Eigen::VectorXd cond_log_dist(const TabularARModel& m, const Sequence& prefix);

// ln of the model's probability of a full-horizon sequence. Computed in the
// log domain, so vanishing conditionals score as large negative values (the
// logit gap) rather than underflowing to -inf.
double seq_logprob(const TabularARModel& m, const Sequence& seq);

// Ancestral sampling: one categorical draw per position.
Sequence sample(const TabularARModel& m, Rng& rng);
std::vector<Sequence> sample_many(const TabularARModel& m, Rng& rng, int n);

// Lexicographic rank of a full-horizon sequence, and its inverse.
std::int64_t seq_index(const Sequence& seq, int vocab);
Sequence index_to_sequence(std::int64_t index, int vocab, int horizon);

// All vocab^horizon sequences in lexicographic order. Throws
// EnumerationCapError when the sequence space exceeds the cap.
std::vector<Sequence> enumerate_sequences(int vocab, int horizon);

// Exact sequence-level distribution, indexed by lexicographic rank.
// Entries are >= 0 and sum to 1 (within accumulation error).
Eigen::VectorXd seq_distribution(const TabularARModel& m);

// Beam search over full sequences; ties in score break toward the
// lexicographically smaller sequence. width >= vocab^horizon is exhaustive
// and returns the exact argmax.
Sequence beam_search(const TabularARModel& m, int width);

// Builders -------------------------------------------------------------

// I.i.d. zero-mean normal logits with standard deviation `scale`.
TabularARModel random_model(int vocab, int horizon, int order, Rng& rng,
                            double scale = 1.0, bool stationary = false);

// All-zero logits: the uniform distribution over sequences (order 0).
TabularARModel uniform_model(int vocab, int horizon);

// One-hot conditionals forcing `target` at every position (order 0).
TabularARModel deterministic_model(int vocab, int horizon, const Sequence& target);

// Full-history (order horizon-1) teacher concentrating mass on two modes.
// Each mode's path gets `sharpness` added to its next-token logit at every
// position. Off-path contexts lean toward resuming the Hamming-nearer mode
// (both on ties), the way a real bimodal model re-concentrates after a
// deviation instead of turning uniform. mode_a == mode_b is an error.
//
// branch_boost > 0 adds a branch point at position horizon/2: every context
// there has `branch_boost` added to the logits of tokens outside both modes,
// so mass fans out mid-sequence before the resumption lean pulls it back.
// This is the tail structure that separates mass-covering from mass-trimming
// students: one position's worth of probability that a trained student is
// free to carry or to drop. Zero (the default) disables it.
TabularARModel bimodal_teacher(int vocab, int horizon, const Sequence& mode_a,
                               const Sequence& mode_b, double sharpness,
                               double branch_boost = 0.0);

// Serialization ---------------------------------------------------------
// Plain-text, one document per model: shape header plus every logit printed
// with 17 significant digits, so reloaded conditionals are bit-identical.
void save_model(const TabularARModel& m, std::ostream& out);
void save_model(const TabularARModel& m, const std::string& path);
TabularARModel load_model(std::istream& in);
TabularARModel load_model(const std::string& path);

}  // namespace fdistill
