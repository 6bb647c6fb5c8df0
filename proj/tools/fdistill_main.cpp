#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fdistill/experiment.hpp"

namespace {

using namespace fdistill;

constexpr const char* kConfigHelp = R"(Config files are flat key=value lines ('#' comments allowed). A 'preset'
line resets every field to that preset's defaults; later lines override
field by field, and command-line flags override the file. Keys:
  preset            theorem_check|mode_study|convergence|efficiency|grad_check
  trials            trial count (theorem_check 50, mode_study 5, convergence 1,
                    efficiency 3, grad_check 10)
  seed              base seed, default 1; trial t uses a derived sub-seed
  vocab, horizon    scale, default 4 x 4
  teacher_order     teacher context length, default 2 (mode_study: horizon-1)
  student_order     student context length, default 1 (mode_study 0,
                    convergence 2)
  kind              kl|rkl|js|tvd|seqkd|engine, or all (efficiency needs one
                    of kl|js|tvd; mode_study and grad_check run fixed rosters)
  js_mode           exact|mixture, default mixture
  steps             optimizer steps (mode_study 3000, convergence 5000,
                    efficiency 1500, else 1000)
  learning_rate     default 0.05
  optimizer         adam|sgd, default adam
  adam_beta1        default 0.9
  adam_beta2        default 0.999
  mc_samples_per_step  sampled sequences per side per step (mode_study 4,
                    efficiency 8, else 1)
  teacher_sampling  online|offline, default online
  offline_cache_size  default 64
  prob_floor        probability floor before logs, default 1e-12
  risk_samples      mode_study risk sample count, default 2000
  sharpness         mode_study bimodal teacher peak strength, default 6
  branch_boost      mode_study teacher mid-sequence branch mass, default 4
                    (0 removes the branch point)
  out               base path for <out>.jsonl, <out>.csv, and loss curves
  format            csv|jsonl (stdout format), default csv

An empty config keeps every default. The FDISTILL_ENUM_CAP environment
variable overrides the exact-enumeration cap (default 10000000).
Exit status: 0 all checks passed, 1 some check failed, 2 bad configuration.)";

struct CliOverrides {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> vocab, horizon, teacher_order, student_order;
  std::optional<std::string> kind, js_mode;
  bool json = false;
  bool csv = false;
};

void add_common_flags(CLI::App* cmd, CliOverrides& o) {
  cmd->add_option("--config", o.config_path, "Config file (flat key=value lines)");
  cmd->add_option("--seed", o.seed, "Base seed for the run");
  cmd->add_option("--out", o.out, "Base path for result files and loss curves");
  cmd->add_option("--vocab", o.vocab, "Token vocabulary size");
  cmd->add_option("--horizon", o.horizon, "Sequence length");
  cmd->add_option("--teacher-order", o.teacher_order, "Teacher context length");
  cmd->add_option("--student-order", o.student_order, "Student context length");
  cmd->add_option("--kind", o.kind, "Training kind: kl|rkl|js|tvd|seqkd|engine|all");
  cmd->add_option("--js-mode", o.js_mode, "JS conditional mode: exact|mixture");
  CLI::Option* j = cmd->add_flag("--json", o.json, "Print results as JSON lines");
  cmd->add_flag("--csv", o.csv, "Print results as CSV (default)")->excludes(j);
}

ExperimentSpec build_spec(Preset preset, const CliOverrides& o) {
  ExperimentSpec spec = default_spec(preset);
  if (o.config_path) {
    spec = parse_config(*o.config_path, &spec);
  }
  if (o.seed) spec.train.seed = *o.seed;
  if (o.out) spec.output_path = *o.out;
  if (o.vocab) spec.vocab = *o.vocab;
  if (o.horizon) spec.horizon = *o.horizon;
  if (o.teacher_order) spec.teacher_order = *o.teacher_order;
  if (o.student_order) spec.student_order = *o.student_order;
  if (o.kind) {
    spec.kind = *o.kind;
    if (spec.kind != "all") spec.train.kind = parse_train_kind(spec.kind);
  }
  if (o.js_mode) spec.train.js_mode = parse_js_mode(*o.js_mode);
  if (o.json) spec.output_format = "jsonl";
  if (o.csv) spec.output_format = "csv";
  validate_spec(spec);
  return spec;
}

int emit_and_report(const ExperimentSpec& spec, const std::vector<ResultRecord>& records) {
  const std::string table =
      spec.output_format == "jsonl" ? results_to_jsonl(records) : results_to_csv(records);
  std::cout << table;
  if (!spec.output_path.empty()) emit_results(records, spec.output_path);
  return all_passed(records) ? 0 : 1;
}

int run_preset_command(Preset preset, const CliOverrides& o) {
  const ExperimentSpec spec = build_spec(preset, o);
  const std::vector<ResultRecord> records = run_experiment(spec);
  return emit_and_report(spec, records);
}

// One-off oracle between two serialized models: brute-force and stepwise
// values plus their residual for a divergence kind, or the ENGINE identity
// pieces for kind 'engine'.
int run_divergence_command(const std::string& teacher_path, const std::string& student_path,
                           const CliOverrides& o) {
  const std::string kind_name = o.kind.value_or("kl");
  const JsConditionalMode js_mode =
      o.js_mode ? parse_js_mode(*o.js_mode) : JsConditionalMode::EXACT_MARGINAL_RATIO;
  const TabularARModel teacher = load_model(teacher_path);
  const TabularARModel student = load_model(student_path);

  ResultRecord rec;
  rec.preset = "divergence";
  rec.trial = 0;
  rec.seed = 0;
  rec.vocab = teacher.vocab;
  rec.horizon = teacher.horizon;
  rec.teacher_order = teacher.order;
  rec.student_order = student.order;
  rec.kind = kind_name;

  if (kind_name == "engine") {
    const double engine = engine_loss_exact(teacher, student);
    const double entropy = sequence_entropy(student);
    const double step_rkl = stepwise_exact(teacher, student, DivergenceKind::RKL, js_mode);
    rec.metrics = {{"engine_loss", engine},
                   {"student_entropy", entropy},
                   {"step_rkl", step_rkl},
                   {"identity_residual", std::abs(step_rkl - (engine - entropy))}};
  } else {
    const TrainKind tk = parse_train_kind(kind_name);
    if (!is_divergence_train_kind(tk)) {
      throw ConfigError("kind '" + kind_name + "' has no two-model divergence oracle");
    }
    const DivergenceKind kind = to_divergence_kind(tk);
    const double brute = brute_force_seq_divergence(teacher, student, kind);
    const double step = stepwise_exact(teacher, student, kind, js_mode);
    rec.metrics = {{"brute", brute}, {"stepwise", step}, {"residual", std::abs(step - brute)}};
  }

  ExperimentSpec out_spec;
  out_spec.output_format = o.json ? "jsonl" : "csv";
  out_spec.output_path = o.out.value_or("");
  return emit_and_report(out_spec, {rec});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-level distillation laboratory for tabular autoregressive models"};
  app.require_subcommand(1);
  app.footer(kConfigHelp);

  struct Verb {
    const char* name;
    const char* help;
    Preset preset;
  };
  const Verb verbs[] = {
      {"check-theorem", "Stepwise decompositions vs brute-force enumeration", Preset::THEOREM_CHECK},
      {"mode-study", "Risk orderings of capacity-limited students on a bimodal teacher", Preset::MODE_STUDY},
      {"converge", "Train full-capacity students and measure the final JS gap", Preset::CONVERGENCE},
      {"efficiency", "Online vs offline teacher sampling at equal budgets", Preset::EFFICIENCY},
      {"grad-check", "Analytic gradients vs central finite differences", Preset::GRAD_CHECK},
  };

  CliOverrides overrides[6];
  CLI::App* cmds[6];
  for (int i = 0; i < 5; ++i) {
    cmds[i] = app.add_subcommand(verbs[i].name, verbs[i].help);
    add_common_flags(cmds[i], overrides[i]);
  }
  std::string teacher_path, student_path;
  cmds[5] = app.add_subcommand("divergence",
                               "One-off oracle between two serialized models");
  cmds[5]->add_option("teacher", teacher_path, "Serialized teacher model")->required();
  cmds[5]->add_option("student", student_path, "Serialized student model")->required();
  add_common_flags(cmds[5], overrides[5]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    for (int i = 0; i < 5; ++i) {
      if (cmds[i]->parsed()) return run_preset_command(verbs[i].preset, overrides[i]);
    }
    return run_divergence_command(teacher_path, student_path, overrides[5]);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const EnumerationCapError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
