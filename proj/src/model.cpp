#include "fdistill/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fdistill {

namespace {

std::int64_t ipow(int base, int exp) {
  std::int64_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

void check_token_range(const TabularARModel& m, const int* seq, int len) {
  for (int i = 0; i < len; ++i) {
    if (seq[i] < 0 || seq[i] >= m.vocab) {
      throw std::invalid_argument("token out of range [0, vocab)");
    }
  }
}

}  // namespace

void validate_model(const TabularARModel& m) {
  if (m.vocab < 2) throw std::invalid_argument("vocab must be at least 2");
  if (m.horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  if (m.order < 0 || m.order >= m.horizon) {
    throw std::invalid_argument("order must satisfy 0 <= order < horizon");
  }
  const std::size_t want_tables = m.stationary ? 1 : static_cast<std::size_t>(m.horizon);
  if (m.logits.size() != want_tables) {
    throw std::invalid_argument("wrong number of logits tables");
  }
  for (int t = 0; t < static_cast<int>(want_tables); ++t) {
    const std::int64_t rows = m.stationary ? ipow(m.vocab, m.order)
                                           : ipow(m.vocab, m.context_len(t));
    if (m.logits[t].rows() != rows || m.logits[t].cols() != m.vocab) {
      throw std::invalid_argument("logits table has wrong shape");
    }
  }
}

std::int64_t rows_for_position(const TabularARModel& m, int position) {
  return m.stationary ? ipow(m.vocab, m.order) : ipow(m.vocab, m.context_len(position));
}

int context_row(const TabularARModel& m, const int* prefix, int len) {
  check_token_range(m, prefix, len);
  int row = 0;
  if (m.stationary) {
    // Last `order` tokens of the zero-padded prefix.
    for (int i = m.order; i > 0; --i) {
      const int pos = len - i;
      row = row * m.vocab + (pos >= 0 ? prefix[pos] : 0);
    }
  } else {
    const int c = m.context_len(len);
    for (int i = c; i > 0; --i) row = row * m.vocab + prefix[len - i];
  }
  return row;
}

Eigen::VectorXd exp_probs(const Eigen::Ref<const Eigen::VectorXd>& logp) {
  return logp.unaryExpr([](double v) { return std::exp(v); });
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& z) {
  const double zmax = z.maxCoeff();
  const Eigen::VectorXd e = exp_probs((z.array() - zmax).matrix());
  return e / e.sum();
}

Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& z) {
  const double zmax = z.maxCoeff();
  const Eigen::ArrayXd shifted = z.array() - zmax;
  const double lse = std::log(exp_probs(shifted.matrix()).sum());
  return (shifted - lse).matrix();
}

namespace {

Eigen::VectorXd logits_row(const TabularARModel& m, const int* prefix, int len) {
  if (len < 0 || len >= m.horizon) {
    throw std::invalid_argument("prefix length must be in [0, horizon)");
  }
  const int row = context_row(m, prefix, len);
  return m.logits[m.table_index(len)].row(row).transpose();
}

}  // namespace

Eigen::VectorXd cond_dist(const TabularARModel& m, const int* prefix, int len) {
  return softmax(logits_row(m, prefix, len));
}

Eigen::VectorXd cond_dist(const TabularARModel& m, const Sequence& prefix) {
  return cond_dist(m, prefix.data(), static_cast<int>(prefix.size()));
}

Eigen::VectorXd cond_log_dist(const TabularARModel& m, const int* prefix, int len) {
  return log_softmax(logits_row(m, prefix, len));
}

Eigen::VectorXd cond_log_dist(const TabularARModel& m, const Sequence& prefix) {
  return cond_log_dist(m, prefix.data(), static_cast<int>(prefix.size()));
}

double seq_logprob(const TabularARModel& m, const Sequence& seq) {
  if (static_cast<int>(seq.size()) != m.horizon) {
    throw std::invalid_argument("sequence length must equal horizon");
  }
  check_token_range(m, seq.data(), m.horizon);
  double lp = 0.0;
  for (int t = 0; t < m.horizon; ++t) {
    lp += cond_log_dist(m, seq.data(), t)[seq[t]];
  }
  return lp;
}

Sequence sample(const TabularARModel& m, Rng& rng) {
  Sequence seq(m.horizon);
  for (int t = 0; t < m.horizon; ++t) {
    seq[t] = rng.categorical(cond_dist(m, seq.data(), t));
  }
  return seq;
}

std::vector<Sequence> sample_many(const TabularARModel& m, Rng& rng, int n) {
  std::vector<Sequence> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(sample(m, rng));
  return out;
}

std::int64_t seq_index(const Sequence& seq, int vocab) {
  std::int64_t idx = 0;
  for (int tok : seq) {
    if (tok < 0 || tok >= vocab) throw std::invalid_argument("token out of range");
    idx = idx * vocab + tok;
  }
  return idx;
}

Sequence index_to_sequence(std::int64_t index, int vocab, int horizon) {
  Sequence seq(horizon);
  for (int t = horizon - 1; t >= 0; --t) {
    seq[t] = static_cast<int>(index % vocab);
    index /= vocab;
  }
  return seq;
}

std::vector<Sequence> enumerate_sequences(int vocab, int horizon) {
  const std::int64_t n = checked_sequence_count(vocab, horizon);
  std::vector<Sequence> out;
  out.reserve(static_cast<std::size_t>(n));
  Sequence seq(horizon, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    out.push_back(seq);
    // Odometer increment keeps the listing lexicographic.
    for (int t = horizon - 1; t >= 0; --t) {
      if (++seq[t] < vocab) break;
      seq[t] = 0;
    }
  }
  return out;
}

Eigen::VectorXd seq_distribution(const TabularARModel& m) {
  const std::int64_t n = checked_sequence_count(m.vocab, m.horizon);
  Eigen::VectorXd probs(n);
  Sequence seq(m.horizon, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    probs[i] = std::exp(seq_logprob(m, seq));
    for (int t = m.horizon - 1; t >= 0; --t) {
      if (++seq[t] < m.vocab) break;
      seq[t] = 0;
    }
  }
  return probs;
}

Sequence beam_search(const TabularARModel& m, int width) {
  if (width < 1) throw std::invalid_argument("beam width must be positive");
  struct Item {
    double score;
    Sequence seq;
  };
  std::vector<Item> beam{{0.0, {}}};
  std::vector<Item> next;
  for (int t = 0; t < m.horizon; ++t) {
    next.clear();
    for (const Item& item : beam) {
      const Eigen::VectorXd lp = cond_log_dist(m, item.seq.data(),
                                               static_cast<int>(item.seq.size()));
      for (int v = 0; v < m.vocab; ++v) {
        Item child{item.score + lp[v], item.seq};
        child.seq.push_back(v);
        next.push_back(std::move(child));
      }
    }
    std::sort(next.begin(), next.end(), [](const Item& a, const Item& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.seq < b.seq;  // tie toward the lower token index
    });
    if (static_cast<int>(next.size()) > width) next.resize(width);
    beam.swap(next);
  }
  return beam.front().seq;
}

TabularARModel random_model(int vocab, int horizon, int order, Rng& rng,
                            double scale, bool stationary) {
  TabularARModel m;
  m.vocab = vocab;
  m.horizon = horizon;
  m.order = order;
  m.stationary = stationary;
  const int tables = stationary ? 1 : horizon;
  m.logits.resize(tables);
  for (int t = 0; t < tables; ++t) {
    const std::int64_t rows = stationary ? ipow(vocab, order) : ipow(vocab, m.context_len(t));
    m.logits[t].resize(rows, vocab);
    for (std::int64_t r = 0; r < rows; ++r) {
      for (int c = 0; c < vocab; ++c) m.logits[t](r, c) = scale * rng.normal();
    }
  }
  validate_model(m);
  return m;
}

TabularARModel uniform_model(int vocab, int horizon) {
  TabularARModel m;
  m.vocab = vocab;
  m.horizon = horizon;
  m.order = 0;
  m.logits.assign(horizon, Eigen::MatrixXd::Zero(1, vocab));
  validate_model(m);
  return m;
}

TabularARModel deterministic_model(int vocab, int horizon, const Sequence& target) {
  if (static_cast<int>(target.size()) != horizon) {
    throw std::invalid_argument("target length must equal horizon");
  }
  TabularARModel m = uniform_model(vocab, horizon);
  check_token_range(m, target.data(), horizon);
  // A 1000-nat gap underflows every non-target probability to exactly zero.
  for (int t = 0; t < horizon; ++t) m.logits[t](0, target[t]) = 1000.0;
  return m;
}

TabularARModel bimodal_teacher(int vocab, int horizon, const Sequence& mode_a,
                               const Sequence& mode_b, double sharpness,
                               double branch_boost) {
  if (static_cast<int>(mode_a.size()) != horizon ||
      static_cast<int>(mode_b.size()) != horizon) {
    throw std::invalid_argument("mode length must equal horizon");
  }
  if (mode_a == mode_b) throw std::invalid_argument("modes must differ");
  if (!(sharpness >= 0.0)) throw std::invalid_argument("sharpness must be >= 0");
  if (!(branch_boost >= 0.0)) throw std::invalid_argument("branch_boost must be >= 0");
  TabularARModel m;
  m.vocab = vocab;
  m.horizon = horizon;
  m.order = horizon - 1;
  m.logits.resize(horizon);
  for (int t = 0; t < horizon; ++t) {
    m.logits[t] = Eigen::MatrixXd::Zero(ipow(vocab, m.context_len(t)), vocab);
  }
  check_token_range(m, mode_a.data(), horizon);
  check_token_range(m, mode_b.data(), horizon);
  // Every prefix row leans toward resuming the mode it is Hamming-closer to,
  // both modes on a tie. On-mode rows reduce to the plain construction (the
  // own mode is at distance zero); rows the modes share, and the empty prefix
  // at t = 0, boost both continuations. Off-mode rows must not stay uniform:
  // a student trained on its own samples keeps visiting them, and uniform
  // rows would anchor it at the mode average no matter what it is minimizing.
  for (int t = 0; t < horizon; ++t) {
    Eigen::MatrixXd& table = m.logits[t];
    std::vector<int> prefix(std::max(t, 1));
    for (Eigen::Index row = 0; row < table.rows(); ++row) {
      Eigen::Index rem = row;
      for (int j = t - 1; j >= 0; --j) {
        prefix[j] = static_cast<int>(rem % vocab);
        rem /= vocab;
      }
      int da = 0, db = 0;
      for (int j = 0; j < t; ++j) {
        da += prefix[j] != mode_a[j] ? 1 : 0;
        db += prefix[j] != mode_b[j] ? 1 : 0;
      }
      if (da <= db) table(row, mode_a[t]) += sharpness;
      if (db <= da) table(row, mode_b[t]) += sharpness;
    }
  }
  // Branch point: one mid-sequence position where every context also leaks
  // mass to tokens outside both modes. The resumption lean above still
  // applies afterwards, so branched paths re-concentrate instead of
  // wandering; what the branch adds is off-mode probability that a student
  // can either cover or trim.
  if (branch_boost > 0.0) {
    const int tb = horizon / 2;
    Eigen::MatrixXd& table = m.logits[tb];
    for (int y = 0; y < vocab; ++y) {
      if (y == mode_a[tb] || y == mode_b[tb]) continue;
      table.col(y).array() += branch_boost;
    }
  }
  validate_model(m);
  return m;
}

void save_model(const TabularARModel& m, std::ostream& out) {
  validate_model(m);
  out << "fdistill-model v1\n";
  out << "vocab " << m.vocab << "\n";
  out << "horizon " << m.horizon << "\n";
  out << "order " << m.order << "\n";
  out << "stationary " << (m.stationary ? 1 : 0) << "\n";
  out << "tables " << m.logits.size() << "\n";
  char buf[40];
  for (std::size_t t = 0; t < m.logits.size(); ++t) {
    const Eigen::MatrixXd& tab = m.logits[t];
    out << "table " << t << " rows " << tab.rows() << " cols " << tab.cols() << "\n";
    for (Eigen::Index r = 0; r < tab.rows(); ++r) {
      for (Eigen::Index c = 0; c < tab.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", tab(r, c));
        out << buf << (c + 1 == tab.cols() ? "" : " ");
      }
      out << "\n";
    }
  }
  if (!out) throw std::runtime_error("model write failed");
}

void save_model(const TabularARModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  save_model(m, out);
}

namespace {

void expect_word(std::istream& in, const std::string& want) {
  std::string got;
  if (!(in >> got) || got != want) {
    throw std::runtime_error("model parse error: expected '" + want + "'");
  }
}

}  // namespace

TabularARModel load_model(std::istream& in) {
  expect_word(in, "fdistill-model");
  expect_word(in, "v1");
  TabularARModel m;
  int stationary_flag = 0;
  std::size_t tables = 0;
  expect_word(in, "vocab");
  if (!(in >> m.vocab)) throw std::runtime_error("model parse error: vocab");
  expect_word(in, "horizon");
  if (!(in >> m.horizon)) throw std::runtime_error("model parse error: horizon");
  expect_word(in, "order");
  if (!(in >> m.order)) throw std::runtime_error("model parse error: order");
  expect_word(in, "stationary");
  if (!(in >> stationary_flag)) throw std::runtime_error("model parse error: stationary");
  m.stationary = stationary_flag != 0;
  expect_word(in, "tables");
  if (!(in >> tables)) throw std::runtime_error("model parse error: tables");
  m.logits.resize(tables);
  for (std::size_t t = 0; t < tables; ++t) {
    std::size_t idx = 0;
    Eigen::Index rows = 0, cols = 0;
    expect_word(in, "table");
    if (!(in >> idx) || idx != t) throw std::runtime_error("model parse error: table index");
    expect_word(in, "rows");
    if (!(in >> rows)) throw std::runtime_error("model parse error: rows");
    expect_word(in, "cols");
    if (!(in >> cols)) throw std::runtime_error("model parse error: cols");
    m.logits[t].resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (!(in >> m.logits[t](r, c))) {
          throw std::runtime_error("model parse error: logit value");
        }
      }
    }
  }
  validate_model(m);
  return m;
}

TabularARModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  return load_model(in);
}

}  // namespace fdistill
