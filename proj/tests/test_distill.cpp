#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "fdistill/experiment.hpp"

using namespace fdistill;

namespace {

TabularARModel make(int vocab, int horizon, int order, bool stationary, std::uint64_t seed) {
  Rng rng(seed);
  return random_model(vocab, horizon, order, rng, 1.0, stationary);
}

std::vector<Sequence> draw(const TabularARModel& m, std::uint64_t seed, int n) {
  Rng rng(seed);
  return sample_many(m, rng, n);
}

bool tables_bitwise_equal(const std::vector<Eigen::MatrixXd>& a,
                          const std::vector<Eigen::MatrixXd>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    if (!(a[i].array() == b[i].array()).all()) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("loss_and_grad agrees with the independent value-only objectives") {
  const TabularARModel teacher = make(3, 3, 2, false, 21);
  const TabularARModel student = make(3, 3, 1, false, 22);
  const std::vector<Sequence> tseqs = draw(teacher, 31, 3);
  const std::vector<Sequence> sseqs = draw(student, 32, 2);

  for (TrainKind kind : {TrainKind::KL, TrainKind::RKL, TrainKind::JS, TrainKind::TVD}) {
    for (JsConditionalMode mode : {JsConditionalMode::EXACT_MARGINAL_RATIO,
                                   JsConditionalMode::MIXTURE_OF_CONDITIONALS}) {
      TrainConfig cfg;
      cfg.kind = kind;
      cfg.js_mode = mode;
      const LossReport rep = loss_and_grad(teacher, student, cfg, tseqs, sseqs);
      const double expected = mc_loss(teacher, student, to_divergence_kind(kind), mode,
                                      tseqs, sseqs, cfg.prob_floor)
                                  .value;
      CHECK(std::abs(rep.loss - expected) <= 1e-12);
    }
  }

  TrainConfig engine_cfg;
  engine_cfg.kind = TrainKind::ENGINE;
  const LossReport engine_rep = loss_and_grad(teacher, student, engine_cfg, {}, sseqs);
  CHECK(std::abs(engine_rep.loss -
                 training_loss(teacher, student, engine_cfg, {}, sseqs)) <= 1e-12);

  TrainConfig mle_cfg;
  mle_cfg.kind = TrainKind::MLE;
  const LossReport mle_rep = loss_and_grad(teacher, student, mle_cfg, tseqs, {});
  double nll = 0.0;
  for (const Sequence& seq : tseqs) nll -= seq_logprob(student, seq);
  CHECK(mle_rep.loss == nll / 3.0);
}

TEST_CASE("SEQKD loss and gradient are plain cross-entropy against the hard target") {
  const TabularARModel teacher = make(3, 3, 1, false, 41);
  const TabularARModel student = make(3, 3, 0, false, 42);
  const Sequence target = beam_search(teacher, 3);

  TrainConfig cfg;
  cfg.kind = TrainKind::SEQKD;
  const LossReport rep = loss_and_grad(teacher, student, cfg, {target}, {});
  CHECK(rep.loss == seqkd_loss(student, target));
  CHECK(rep.teacher_eval_count == 0);

  // Order-0 student: each position owns a single-row table, so the gradient
  // at position t is exactly softmax(row) minus the one-hot target.
  for (int t = 0; t < 3; ++t) {
    const Eigen::VectorXd q = cond_dist(student, target.data(), t);
    for (int y = 0; y < 3; ++y) {
      const double expected = q[y] - (y == target[t] ? 1.0 : 0.0);
      CHECK(rep.gradient[t](0, y) == doctest::Approx(expected).epsilon(1e-15));
    }
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  const TrainKind kinds[7] = {TrainKind::KL,    TrainKind::RKL,    TrainKind::JS,
                              TrainKind::TVD,   TrainKind::SEQKD,  TrainKind::ENGINE,
                              TrainKind::MLE};
  for (int inst = 0; inst < 2; ++inst) {
    const TabularARModel teacher = make(3, 3, 2, inst == 1, 50 + inst);
    const TabularARModel student = make(3, 3, 1, inst == 1, 60 + inst);
    const std::vector<Sequence> tseqs = draw(teacher, 70 + inst, 2);
    const std::vector<Sequence> sseqs = draw(student, 80 + inst, 2);

    for (TrainKind kind : kinds) {
      TrainConfig cfg;
      cfg.kind = kind;
      std::vector<Sequence> tlist = tseqs;
      std::vector<Sequence> slist = sseqs;
      if (kind == TrainKind::SEQKD) {
        tlist = {beam_search(teacher, 3)};
        slist.clear();
      } else if (kind == TrainKind::MLE) {
        slist.clear();
      }
      const LossReport rep = loss_and_grad(teacher, student, cfg, tlist, slist);
      const auto fd = finite_difference_grad(teacher, student, cfg, tlist, slist);
      double grad_inf = 0.0, diff_inf = 0.0;
      for (std::size_t i = 0; i < fd.size(); ++i) {
        grad_inf = std::max(grad_inf, rep.gradient[i].cwiseAbs().maxCoeff());
        grad_inf = std::max(grad_inf, fd[i].cwiseAbs().maxCoeff());
        diff_inf = std::max(diff_inf, (rep.gradient[i] - fd[i]).cwiseAbs().maxCoeff());
      }
      CHECK(diff_inf / std::max(grad_inf, 1e-10) <= 1e-4);
    }
  }
}

TEST_CASE("TVD gradient vanishes when student equals teacher") {
  const TabularARModel m = make(3, 3, 1, false, 91);
  TrainConfig cfg;
  cfg.kind = TrainKind::TVD;
  const std::vector<Sequence> seqs = draw(m, 92, 3);
  const LossReport rep = loss_and_grad(m, m, cfg, seqs, seqs);
  CHECK(rep.loss == 0.0);
  for (const Eigen::MatrixXd& g : rep.gradient) {
    CHECK((g.array() == 0.0).all());
  }
}

TEST_CASE("teacher conditional queries follow the accounting contract") {
  const TabularARModel teacher = make(3, 4, 1, false, 101);
  const TabularARModel student = make(3, 4, 1, false, 102);
  const std::vector<Sequence> t3 = draw(teacher, 111, 3);
  const std::vector<Sequence> s2 = draw(student, 112, 2);

  auto count = [&](TrainKind kind, const std::vector<Sequence>& a,
                   const std::vector<Sequence>& b) {
    TrainConfig cfg;
    cfg.kind = kind;
    return loss_and_grad(teacher, student, cfg, a, b).teacher_eval_count;
  };
  CHECK(count(TrainKind::KL, t3, {}) == 12);       // 3 teacher-side walks * T
  CHECK(count(TrainKind::RKL, {}, s2) == 8);       // 2 student-side walks * T
  CHECK(count(TrainKind::JS, t3, s2) == 20);       // both sides
  CHECK(count(TrainKind::TVD, t3, s2) == 20);
  CHECK(count(TrainKind::ENGINE, {}, s2) == 8);
  CHECK(count(TrainKind::SEQKD, t3, {}) == 0);
  CHECK(count(TrainKind::MLE, t3, {}) == 0);
}

TEST_CASE("training consumes strictly fewer teacher evals offline than online") {
  const TabularARModel teacher = make(3, 4, 1, false, 121);
  const TabularARModel student0 = make(3, 4, 1, false, 122);
  TrainConfig cfg;
  cfg.kind = TrainKind::KL;
  cfg.steps = 10;
  cfg.mc_samples_per_step = 2;
  cfg.seed = 5;

  cfg.teacher_sampling = TeacherSampling::ONLINE;
  const TrainResult online = train(teacher, student0, cfg);
  // Per step: 2 samples * 4 queries to draw + 2 walks * 4 queries to score.
  CHECK(online.total_teacher_evals == 10 * (2 * 4 + 2 * 4));

  cfg.teacher_sampling = TeacherSampling::OFFLINE;
  cfg.offline_cache_size = 8;
  const TrainResult offline = train(teacher, student0, cfg);
  // Cache built once (8 * 4), then only the per-step scoring walks.
  CHECK(offline.total_teacher_evals == 8 * 4 + 10 * (2 * 4));
  CHECK(offline.total_teacher_evals < online.total_teacher_evals);

  // History records the running totals.
  CHECK(online.history.size() == 10);
  CHECK(online.history.front().step == 1);
  CHECK(online.history.back().teacher_evals == online.total_teacher_evals);
}

TEST_CASE("SEQKD training charges the beam search once and nothing per step") {
  const TabularARModel teacher = make(3, 4, 1, false, 131);
  const TabularARModel student0 = make(3, 4, 0, false, 132);
  TrainConfig cfg;
  cfg.kind = TrainKind::SEQKD;
  cfg.steps = 25;
  // Beam width 3 over T=4: live beams 1, 3, 3, 3 -> 10 row queries.
  const TrainResult res = train(teacher, student0, cfg);
  CHECK(res.total_teacher_evals == 10);
}

TEST_CASE("equal configs give bit-identical training runs") {
  const TabularARModel teacher = make(3, 3, 2, false, 141);
  const TabularARModel student0 = make(3, 3, 1, false, 142);
  TrainConfig cfg;
  cfg.kind = TrainKind::JS;
  cfg.steps = 40;
  cfg.mc_samples_per_step = 2;
  cfg.seed = 9;

  const TrainResult a = train(teacher, student0, cfg);
  const TrainResult b = train(teacher, student0, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].teacher_evals == b.history[i].teacher_evals);
  }
  CHECK(tables_bitwise_equal(a.student.logits, b.student.logits));

  TrainConfig other = cfg;
  other.seed = 10;
  const TrainResult c = train(teacher, student0, other);
  CHECK_FALSE(tables_bitwise_equal(a.student.logits, c.student.logits));
}

TEST_CASE("zero steps return the initial student untouched") {
  const TabularARModel teacher = make(2, 3, 1, false, 151);
  const TabularARModel student0 = make(2, 3, 1, false, 152);
  TrainConfig cfg;
  cfg.kind = TrainKind::KL;
  cfg.steps = 0;
  const TrainResult res = train(teacher, student0, cfg);
  CHECK(res.history.empty());
  CHECK(res.total_teacher_evals == 0);
  CHECK(tables_bitwise_equal(res.student.logits, student0.logits));
}

TEST_CASE("optimizer steps: SGD exact, Adam bias-corrected") {
  std::vector<Eigen::MatrixXd> params{Eigen::MatrixXd::Zero(1, 1)};
  std::vector<Eigen::MatrixXd> grad{Eigen::MatrixXd::Constant(1, 1, 1.0)};

  sgd_step(params, grad, 0.1);
  CHECK(params[0](0, 0) == -0.1);

  // With a constant unit gradient the bias corrections cancel, so each Adam
  // step moves by almost exactly -lr (epsilon 1e-8 in the denominator).
  params[0](0, 0) = 0.0;
  AdamState state = make_adam_state(params);
  for (int i = 0; i < 5; ++i) adam_step(params, grad, state, 0.1, 0.9, 0.999);
  CHECK(params[0](0, 0) == doctest::Approx(-0.4999999950000001).epsilon(1e-9));
  CHECK(state.t == 5);

  std::vector<Eigen::MatrixXd> wrong{Eigen::MatrixXd::Zero(2, 1)};
  CHECK_THROWS_AS(sgd_step(params, wrong, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(adam_step(params, wrong, state, 0.1, 0.9, 0.999), std::invalid_argument);
}

TEST_CASE("config validation rejects contradictions and bad ranges") {
  TrainConfig cfg;
  CHECK_NOTHROW(validate_config(cfg));

  TrainConfig bad = cfg;
  bad.kind = TrainKind::RKL;
  bad.teacher_sampling = TeacherSampling::OFFLINE;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad.kind = TrainKind::ENGINE;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad.kind = TrainKind::SEQKD;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad.kind = TrainKind::KL;
  CHECK_NOTHROW(validate_config(bad));

  bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad = cfg;
  bad.adam_beta1 = 1.0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad = cfg;
  bad.steps = -1;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad = cfg;
  bad.mc_samples_per_step = 0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad = cfg;
  bad.prob_floor = 0.0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad = cfg;
  bad.prob_floor = 1e-3;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad = cfg;
  bad.offline_cache_size = 0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
}

TEST_CASE("offline caches are deterministic and charged n*T teacher evals") {
  const TabularARModel teacher = make(3, 4, 1, false, 161);
  long long evals = 0;
  const TeacherSampleCache a = build_offline_cache(teacher, 6, 77, &evals);
  CHECK(evals == 24);
  CHECK(a.sequences.size() == 6);
  CHECK(a.origin_seed == 77);
  const TeacherSampleCache b = build_offline_cache(teacher, 6, 77);
  CHECK(a.sequences == b.sequences);
  const TeacherSampleCache c = build_offline_cache(teacher, 6, 78);
  CHECK(a.sequences != c.sequences);
}

TEST_CASE("MLE warm start never worsens the data NLL") {
  const TabularARModel teacher = make(3, 3, 0, false, 171);
  const std::vector<Sequence> data = draw(teacher, 172, 100);
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.learning_rate = 0.1;

  auto nll = [&](const TabularARModel& m) {
    double total = 0.0;
    for (const Sequence& seq : data) total -= seq_logprob(m, seq);
    return total / static_cast<double>(data.size());
  };

  const TabularARModel init = make(3, 3, 0, false, 173);
  const TabularARModel fitted = mle_warm_start(init, data, cfg);
  CHECK(nll(fitted) <= nll(init));
  // 200 full-batch steps on an order-0 model should actually improve it.
  CHECK(nll(fitted) < nll(init) - 1e-3);
  CHECK_THROWS_AS(mle_warm_start(init, {}, cfg), std::invalid_argument);
}

TEST_CASE("history writers emit stable, parseable lines") {
  const std::vector<StepRecord> history{{1, 0.5, 8}, {2, 0.25, 16}};
  std::ostringstream csv;
  write_history_csv(csv, history);
  CHECK(csv.str() == "step,loss,teacher_evals\n1,0.5,8\n2,0.25,16\n");

  std::ostringstream jsonl;
  write_history_jsonl(jsonl, history);
  CHECK(jsonl.str() ==
        "{\"loss\":0.5,\"step\":1,\"teacher_evals\":8}\n"
        "{\"loss\":0.25,\"step\":2,\"teacher_evals\":16}\n");
}

TEST_CASE("training kind names round-trip and classify correctly") {
  for (TrainKind kind : {TrainKind::KL, TrainKind::RKL, TrainKind::JS, TrainKind::TVD,
                         TrainKind::SEQKD, TrainKind::ENGINE, TrainKind::MLE}) {
    CHECK(parse_train_kind(train_kind_name(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_train_kind("nope"), std::invalid_argument);
  CHECK(is_divergence_train_kind(TrainKind::TVD));
  CHECK_FALSE(is_divergence_train_kind(TrainKind::SEQKD));
  CHECK_THROWS_AS(to_divergence_kind(TrainKind::ENGINE), std::invalid_argument);
}

}  // TEST_SUITE
