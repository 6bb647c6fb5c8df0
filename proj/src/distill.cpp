#include "fdistill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace fdistill {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kAdamEpsilon = 1e-8;

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

double teacher_mix_weight(double lp, double lq) {
  if (lp == -kInf) return 0.0;
  if (lq == -kInf) return 1.0;
  return 1.0 / (1.0 + std::exp(lq - lp));
}

bool needs_teacher_samples(TrainKind kind) {
  return kind == TrainKind::KL || kind == TrainKind::JS || kind == TrainKind::TVD;
}

bool needs_student_samples(TrainKind kind) {
  return kind == TrainKind::RKL || kind == TrainKind::JS || kind == TrainKind::TVD ||
         kind == TrainKind::ENGINE;
}

std::vector<Eigen::MatrixXd> zeros_like(const std::vector<Eigen::MatrixXd>& params) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(params.size());
  for (const Eigen::MatrixXd& p : params) out.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
  return out;
}

void check_congruent(const std::vector<Eigen::MatrixXd>& a,
                     const std::vector<Eigen::MatrixXd>& b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": table count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) {
      throw std::invalid_argument(std::string(what) + ": table shape mismatch");
    }
  }
}

}  // namespace

const char* train_kind_name(TrainKind kind) {
  switch (kind) {
    case TrainKind::KL: return "kl";
    case TrainKind::RKL: return "rkl";
    case TrainKind::JS: return "js";
    case TrainKind::TVD: return "tvd";
    case TrainKind::SEQKD: return "seqkd";
    case TrainKind::ENGINE: return "engine";
    case TrainKind::MLE: return "mle";
  }
  throw std::logic_error("unreachable");
}

TrainKind parse_train_kind(std::string_view name) {
  if (name == "kl") return TrainKind::KL;
  if (name == "rkl") return TrainKind::RKL;
  if (name == "js") return TrainKind::JS;
  if (name == "tvd") return TrainKind::TVD;
  if (name == "seqkd") return TrainKind::SEQKD;
  if (name == "engine") return TrainKind::ENGINE;
  if (name == "mle") return TrainKind::MLE;
  throw std::invalid_argument("unknown training kind: " + std::string(name));
}

bool is_divergence_train_kind(TrainKind kind) {
  return kind == TrainKind::KL || kind == TrainKind::RKL || kind == TrainKind::JS ||
         kind == TrainKind::TVD;
}

DivergenceKind to_divergence_kind(TrainKind kind) {
  switch (kind) {
    case TrainKind::KL: return DivergenceKind::KL;
    case TrainKind::RKL: return DivergenceKind::RKL;
    case TrainKind::JS: return DivergenceKind::JS;
    case TrainKind::TVD: return DivergenceKind::TVD;
    default: throw std::invalid_argument("not a divergence training kind");
  }
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.steps < 0) throw ConfigError("steps must be nonnegative");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0)) {
    throw ConfigError("adam_beta1 must lie in [0, 1)");
  }
  if (!(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0)) {
    throw ConfigError("adam_beta2 must lie in [0, 1)");
  }
  if (cfg.mc_samples_per_step < 1) throw ConfigError("mc_samples_per_step must be at least 1");
  if (cfg.offline_cache_size < 1) throw ConfigError("offline_cache_size must be at least 1");
  if (!(cfg.prob_floor > 0.0) || cfg.prob_floor > 1e-6) {
    throw ConfigError("prob_floor must lie in (0, 1e-6]");
  }
  if (cfg.teacher_sampling == TeacherSampling::OFFLINE &&
      (cfg.kind == TrainKind::RKL || cfg.kind == TrainKind::ENGINE ||
       cfg.kind == TrainKind::SEQKD)) {
    throw ConfigError(std::string("offline teacher sampling contradicts kind '") +
                      train_kind_name(cfg.kind) + "': it consumes no teacher samples");
  }
}

TeacherSampleCache build_offline_cache(const TabularARModel& teacher, int n,
                                       std::uint64_t seed, long long* teacher_evals) {
  if (n < 1) throw std::invalid_argument("cache size must be at least 1");
  Rng rng(seed);
  TeacherSampleCache cache;
  cache.origin_seed = seed;
  cache.sequences = sample_many(teacher, rng, n);
  if (teacher_evals != nullptr) {
    *teacher_evals += static_cast<long long>(n) * teacher.horizon;
  }
  return cache;
}

LossReport loss_and_grad(const TabularARModel& teacher, const TabularARModel& student,
                         const TrainConfig& cfg,
                         const std::vector<Sequence>& teacher_seqs,
                         const std::vector<Sequence>& student_seqs) {
  check_pair(teacher, student);
  if (!(cfg.prob_floor > 0.0) || cfg.prob_floor > 1e-6) {
    throw std::invalid_argument("prob_floor must lie in (0, 1e-6]");
  }
  const TrainKind kind = cfg.kind;
  const bool uses_teacher_list =
      needs_teacher_samples(kind) || kind == TrainKind::SEQKD || kind == TrainKind::MLE;
  const bool uses_student_list = needs_student_samples(kind);
  if (uses_teacher_list && teacher_seqs.empty()) {
    throw std::invalid_argument("teacher-side sequences required for this kind");
  }
  if (uses_student_list && student_seqs.empty()) {
    throw std::invalid_argument("student-side sequences required for this kind");
  }

  const int V = teacher.vocab;
  const int T = teacher.horizon;
  const double floor = cfg.prob_floor;

  LossReport report;
  report.gradient = zeros_like(student.logits);

  // Teacher conditional queries per the accounting contract: one full-row
  // query per visited step of every sequence the walk evaluates the teacher
  // on. SEQKD and MLE walks never touch the teacher.
  const bool walk_queries_teacher = kind != TrainKind::SEQKD && kind != TrainKind::MLE;

  // One sampled sequence's contribution to the loss and to the student-logit
  // gradient, weighted by `w` (1 / side sample count). Derivatives pass only
  // through the explicit student factors at the visited step; everything
  // tied to how the sequence was sampled is frozen. Per step the gradient of
  // sum_y a_y * q_y with respect to the row logits is q .* a - (a . q) q.
  auto walk = [&](const Sequence& seq, bool teacher_side, double w) {
    check_sample(teacher, seq);
    double acc = 0.0;
    double lp_pre = 0.0, lq_pre = 0.0;
    for (int t = 0; t < T; ++t) {
      const Eigen::VectorXd qlog = cond_log_dist(student, seq.data(), t);
      const Eigen::VectorXd qrow = exp_probs(qlog);
      Eigen::VectorXd plog, prow;
      if (walk_queries_teacher) {
        plog = cond_log_dist(teacher, seq.data(), t);
        prow = exp_probs(plog);
        report.teacher_eval_count += 1;
      }

      Eigen::MatrixXd& table = report.gradient[student.table_index(t)];
      const int row = context_row(student, seq.data(), t);

      if (kind == TrainKind::SEQKD || kind == TrainKind::MLE) {
        acc -= qlog[seq[t]];
        Eigen::VectorXd g = qrow;
        g[seq[t]] -= 1.0;
        table.row(row) += w * g.transpose();
        continue;
      }

      // a-vector of the step loss sum_y a-independent terms; exact gradient
      // of the floored logs is zero below the floor.
      Eigen::VectorXd a = Eigen::VectorXd::Zero(V);
      switch (kind) {
        case TrainKind::KL:
          for (int y = 0; y < V; ++y) {
            acc -= prow[y] * clamped_log(qrow[y], floor);
            if (qrow[y] >= floor) a[y] = -prow[y] / qrow[y];
          }
          break;
        case TrainKind::RKL:
          for (int y = 0; y < V; ++y) {
            const double lq_t = clamped_log(qrow[y], floor);
            const double lp_t = clamped_log(prow[y], floor);
            acc += qrow[y] * (lq_t - lp_t);
            a[y] = lq_t - lp_t + (qrow[y] >= floor ? 1.0 : 0.0);
          }
          break;
        case TrainKind::JS: {
          const double alpha = cfg.js_mode == JsConditionalMode::MIXTURE_OF_CONDITIONALS
                                   ? 0.5
                                   : teacher_mix_weight(lp_pre, lq_pre);
          const double beta = 1.0 - alpha;
          const Eigen::VectorXd mrow = alpha * prow + beta * qrow;
          if (teacher_side) {
            for (int y = 0; y < V; ++y) {
              const double lm = clamped_log(mrow[y], floor);
              acc -= 0.5 * prow[y] * lm;
              if (mrow[y] >= floor) a[y] = -0.5 * prow[y] * beta / mrow[y];
            }
          } else {
            for (int y = 0; y < V; ++y) {
              const double lq_t = clamped_log(qrow[y], floor);
              const double lm = clamped_log(mrow[y], floor);
              acc += 0.5 * qrow[y] * (lq_t - lm);
              a[y] = 0.5 * (lq_t + (qrow[y] >= floor ? 1.0 : 0.0) - lm -
                            (mrow[y] >= floor ? qrow[y] * beta / mrow[y] : 0.0));
            }
          }
          break;
        }
        case TrainKind::TVD:
          acc += 0.25 * (prow - qrow).lpNorm<1>();
          for (int y = 0; y < V; ++y) {
            const double d = qrow[y] - prow[y];
            a[y] = d > 0.0 ? 0.25 : (d < 0.0 ? -0.25 : 0.0);
          }
          break;
        case TrainKind::ENGINE:
          for (int y = 0; y < V; ++y) {
            const double lp_t = clamped_log(prow[y], floor);
            acc -= qrow[y] * lp_t;
            a[y] = -lp_t;
          }
          break;
        default:
          throw std::logic_error("unreachable");
      }
      table.row(row) += w * (qrow.cwiseProduct(a) - a.dot(qrow) * qrow).transpose();

      if (walk_queries_teacher) {
        lp_pre += plog[seq[t]];
      }
      lq_pre += qlog[seq[t]];
    }
    return acc;
  };

  if (uses_teacher_list) {
    const double w = 1.0 / static_cast<double>(teacher_seqs.size());
    double side = 0.0;
    for (const Sequence& seq : teacher_seqs) side += walk(seq, /*teacher_side=*/true, w);
    report.loss += side / static_cast<double>(teacher_seqs.size());
  }
  if (uses_student_list) {
    const double w = 1.0 / static_cast<double>(student_seqs.size());
    double side = 0.0;
    for (const Sequence& seq : student_seqs) side += walk(seq, /*teacher_side=*/false, w);
    report.loss += side / static_cast<double>(student_seqs.size());
  }
  return report;
}

double training_loss(const TabularARModel& teacher, const TabularARModel& student,
                     const TrainConfig& cfg,
                     const std::vector<Sequence>& teacher_seqs,
                     const std::vector<Sequence>& student_seqs) {
  check_pair(teacher, student);
  switch (cfg.kind) {
    case TrainKind::KL:
    case TrainKind::RKL:
    case TrainKind::JS:
    case TrainKind::TVD:
      return mc_loss(teacher, student, to_divergence_kind(cfg.kind), cfg.js_mode,
                     teacher_seqs, student_seqs, cfg.prob_floor)
          .value;
    case TrainKind::SEQKD: {
      if (teacher_seqs.empty()) throw std::invalid_argument("hard targets required");
      double total = 0.0;
      for (const Sequence& seq : teacher_seqs) total += seqkd_loss(student, seq);
      return total / static_cast<double>(teacher_seqs.size());
    }
    case TrainKind::MLE: {
      if (teacher_seqs.empty()) throw std::invalid_argument("data sequences required");
      double total = 0.0;
      for (const Sequence& seq : teacher_seqs) total -= seq_logprob(student, seq);
      return total / static_cast<double>(teacher_seqs.size());
    }
    case TrainKind::ENGINE: {
      if (student_seqs.empty()) throw std::invalid_argument("student-side sequences required");
      double total = 0.0;
      for (const Sequence& seq : student_seqs) {
        check_sample(student, seq);
        for (int t = 0; t < teacher.horizon; ++t) {
          const Eigen::VectorXd q = cond_dist(student, seq.data(), t);
          const Eigen::VectorXd p = cond_dist(teacher, seq.data(), t);
          for (int y = 0; y < teacher.vocab; ++y) {
            total -= q[y] * clamped_log(p[y], cfg.prob_floor);
          }
        }
      }
      return total / static_cast<double>(student_seqs.size());
    }
  }
  throw std::logic_error("unreachable");
}

AdamState make_adam_state(const std::vector<Eigen::MatrixXd>& params) {
  AdamState state;
  state.m = zeros_like(params);
  state.v = zeros_like(params);
  state.t = 0;
  return state;
}

void adam_step(std::vector<Eigen::MatrixXd>& params, const std::vector<Eigen::MatrixXd>& grad,
               AdamState& state, double lr, double beta1, double beta2) {
  check_congruent(params, grad, "adam_step");
  check_congruent(params, state.m, "adam_step state");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i].cwiseProduct(grad[i]);
    params[i].array() -=
        lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + kAdamEpsilon);
  }
}

void sgd_step(std::vector<Eigen::MatrixXd>& params, const std::vector<Eigen::MatrixXd>& grad,
              double lr) {
  check_congruent(params, grad, "sgd_step");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
}

TabularARModel mle_warm_start(const TabularARModel& init, const std::vector<Sequence>& data,
                              const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("warm start data must be nonempty");
  validate_model(init);
  TrainConfig c = cfg;
  c.kind = TrainKind::MLE;
  c.teacher_sampling = TeacherSampling::ONLINE;
  validate_config(c);

  auto mean_nll = [&](const TabularARModel& m) {
    double total = 0.0;
    for (const Sequence& seq : data) total -= seq_logprob(m, seq);
    return total / static_cast<double>(data.size());
  };

  const double init_nll = mean_nll(init);
  TabularARModel student = init;
  AdamState state = make_adam_state(student.logits);
  for (int step = 0; step < c.steps; ++step) {
    // MLE never evaluates the teacher; the student stands in for both slots.
    LossReport rep = loss_and_grad(student, student, c, data, {});
    if (c.optimizer == Optimizer::ADAM) {
      adam_step(student.logits, rep.gradient, state, c.learning_rate, c.adam_beta1,
                c.adam_beta2);
    } else {
      sgd_step(student.logits, rep.gradient, c.learning_rate);
    }
  }
  return mean_nll(student) <= init_nll ? student : init;
}

TrainResult train(const TabularARModel& teacher, TabularARModel student,
                  const TrainConfig& cfg) {
  validate_config(cfg);
  validate_model(teacher);
  validate_model(student);
  check_pair(teacher, student);
  const int T = teacher.horizon;
  const TrainKind kind = cfg.kind;

  long long evals = 0;
  Rng rng(derive_seed(cfg.seed, 0));

  TeacherSampleCache cache;
  std::size_t cache_pos = 0;
  if (cfg.teacher_sampling == TeacherSampling::OFFLINE) {
    cache = build_offline_cache(teacher, cfg.offline_cache_size, derive_seed(cfg.seed, 1),
                                &evals);
  }

  std::vector<Sequence> seqkd_targets;
  if (kind == TrainKind::SEQKD) {
    // Hard target decoded once and frozen; beam search queries one teacher
    // row per live beam item per position.
    const int width = teacher.vocab;
    seqkd_targets.push_back(beam_search(teacher, width));
    long long live = 1;
    for (int t = 0; t < T; ++t) {
      evals += live;
      live = std::min<long long>(live * teacher.vocab, width);
    }
  }

  const bool draws_teacher =
      needs_teacher_samples(kind) || kind == TrainKind::MLE;
  const bool draws_student = needs_student_samples(kind);

  TrainResult result;
  result.history.reserve(static_cast<std::size_t>(cfg.steps));
  AdamState state = make_adam_state(student.logits);

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<Sequence> teacher_seqs;
    std::vector<Sequence> student_seqs;
    if (kind == TrainKind::SEQKD) {
      teacher_seqs = seqkd_targets;
    } else if (draws_teacher) {
      teacher_seqs.reserve(static_cast<std::size_t>(cfg.mc_samples_per_step));
      for (int i = 0; i < cfg.mc_samples_per_step; ++i) {
        if (cfg.teacher_sampling == TeacherSampling::ONLINE) {
          teacher_seqs.push_back(sample(teacher, rng));
          evals += T;
        } else {
          teacher_seqs.push_back(cache.sequences[cache_pos]);
          cache_pos = (cache_pos + 1) % cache.sequences.size();
        }
      }
    }
    if (draws_student) {
      student_seqs.reserve(static_cast<std::size_t>(cfg.mc_samples_per_step));
      for (int i = 0; i < cfg.mc_samples_per_step; ++i) {
        student_seqs.push_back(sample(student, rng));
      }
    }

    LossReport rep = loss_and_grad(teacher, student, cfg, teacher_seqs, student_seqs);
    evals += rep.teacher_eval_count;
    if (cfg.optimizer == Optimizer::ADAM) {
      adam_step(student.logits, rep.gradient, state, cfg.learning_rate, cfg.adam_beta1,
                cfg.adam_beta2);
    } else {
      sgd_step(student.logits, rep.gradient, cfg.learning_rate);
    }
    result.history.push_back(StepRecord{step, rep.loss, evals});
  }

  result.student = std::move(student);
  result.total_teacher_evals = evals;
  return result;
}

void write_history_jsonl(std::ostream& out, const std::vector<StepRecord>& history) {
  for (const StepRecord& rec : history) {
    nlohmann::json j;
    j["step"] = rec.step;
    j["loss"] = rec.loss;
    j["teacher_evals"] = rec.teacher_evals;
    out << j.dump() << "\n";
  }
}

void write_history_csv(std::ostream& out, const std::vector<StepRecord>& history) {
  out << "step,loss,teacher_evals\n";
  for (const StepRecord& rec : history) {
    out << rec.step << "," << format_double(rec.loss) << "," << rec.teacher_evals << "\n";
  }
}

}  // namespace fdistill
