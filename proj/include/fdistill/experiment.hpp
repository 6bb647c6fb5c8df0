#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fdistill/distill.hpp"
#include "fdistill/metrics.hpp"

namespace fdistill {

// Experiment presets:
//   THEOREM_CHECK  exact stepwise decompositions vs brute-force enumeration,
//                  divergence identities and bounds, the ENGINE identity
//   MODE_STUDY     capacity-limited students trained under each divergence
//                  against a sharp bimodal teacher; risk orderings
//   CONVERGENCE    full-capacity students trained to match a random teacher
//   EFFICIENCY     online vs offline teacher sampling at equal step budgets
//   GRAD_CHECK     analytic gradients vs central finite differences
enum class Preset { THEOREM_CHECK, MODE_STUDY, CONVERGENCE, EFFICIENCY, GRAD_CHECK };

const char* preset_name(Preset preset);  // "theorem_check", "mode_study", ...
Preset parse_preset(std::string_view name);

// A full experiment description. Defaults depend on the preset (see
// default_spec); a config file or CLI flags override them field by field.
// `kind` is a selector: a single training kind, or "all" where the preset
// runs a fixed roster (MODE_STUDY and GRAD_CHECK always run their rosters).
struct ExperimentSpec {
  Preset preset = Preset::THEOREM_CHECK;
  int vocab = 4;
  int horizon = 4;
  int teacher_order = 2;
  int student_order = 1;
  int trials = 1;
  std::string kind = "all";
  TrainConfig train;        // seed here is the base seed for the whole run
  int risk_samples = 2000;  // MODE_STUDY sample count per risk estimate
  double sharpness = 6.0;   // MODE_STUDY bimodal teacher peak strength
  double branch_boost = 0.0;  // MODE_STUDY teacher mid-sequence branch mass
  std::string output_path;  // empty: stdout only; else base path for files
  std::string output_format = "csv";  // "csv" | "jsonl" (stdout format)

  bool operator==(const ExperimentSpec&) const = default;
};

ExperimentSpec default_spec(Preset preset);

// Throws ConfigError on invalid scale/fields before any computation.
void validate_spec(const ExperimentSpec& spec);

// Flat key=value config text. A `preset` line resets every field to that
// preset's defaults before the remaining lines apply, so files only need the
// keys they change. With `base` given, the file's preset (if any) must agree
// with base->preset. Unknown keys are rejected by name; malformed values are
// rejected with their line number.
ExperimentSpec parse_config_text(const std::string& text, const ExperimentSpec* base = nullptr);
ExperimentSpec parse_config(const std::string& path, const ExperimentSpec* base = nullptr);

// Every field as key=value lines; parse_config_text(format_config(s)) == s.
std::string format_config(const ExperimentSpec& spec);

// One asserted property: `passed` is the verdict, `value` the measured
// quantity, `tolerance` the threshold it was held against.
struct CheckResult {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// One trial's (or aggregate's) named metrics and verdicts.
struct ResultRecord {
  std::string preset;
  int trial = 0;
  std::uint64_t seed = 0;
  int vocab = 0;
  int horizon = 0;
  int teacher_order = 0;
  int student_order = 0;
  std::string kind = "all";
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<CheckResult> checks;
};

// Fixed column order:
//   preset,trial,seed,vocab,horizon,teacher_order,student_order,kind,
//   entry,name,value,tolerance,passed
// One row per metric (entry=metric, tolerance/passed blank) and per check
// (entry=check). Doubles print with 17 significant digits; no timestamps,
// so identical runs give identical bytes.
std::string results_to_csv(const std::vector<ResultRecord>& records);

// One JSON object per line, keys sorted, same content as the CSV.
std::string results_to_jsonl(const std::vector<ResultRecord>& records);

// Writes <base_path>.jsonl and <base_path>.csv.
void emit_results(const std::vector<ResultRecord>& records, const std::string& base_path);

bool all_passed(const std::vector<ResultRecord>& records);

// Central finite differences of training_loss over every student logit,
// sample lists frozen; the independent route the analytic gradients are
// checked against.
std::vector<Eigen::MatrixXd> finite_difference_grad(const TabularARModel& teacher,
                                                    const TabularARModel& student,
                                                    const TrainConfig& cfg,
                                                    const std::vector<Sequence>& teacher_seqs,
                                                    const std::vector<Sequence>& student_seqs,
                                                    double h = 1e-6);

// Runs the preset over spec.trials trial seeds (derived from the base seed
// by the counter-based splitting rule) and returns records in trial order.
// Presets that train write per-run loss curves when output_path is nonempty:
// <output_path>.<kind>[.online|.offline].t<trial>.history.csv.
std::vector<ResultRecord> run_experiment(const ExperimentSpec& spec);

}  // namespace fdistill
