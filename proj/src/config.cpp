#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fdistill/experiment.hpp"

namespace fdistill {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = 0, end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

[[noreturn]] void malformed(int line, const std::string& key, const std::string& value,
                            const std::string& want) {
  throw ConfigError("line " + std::to_string(line) + ": bad value '" + value + "' for '" +
                    key + "' (expected " + want + ")");
}

int parse_int(int line, const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    int v = std::stoi(value, &used);
    if (used != value.size()) malformed(line, key, value, "an integer");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    malformed(line, key, value, "an integer");
  }
}

double parse_real(int line, const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) malformed(line, key, value, "a real number");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    malformed(line, key, value, "a real number");
  }
}

std::uint64_t parse_seed(int line, const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    unsigned long long v = std::stoull(value, &used);
    if (used != value.size() || value[0] == '-') malformed(line, key, value, "an unsigned integer");
    return static_cast<std::uint64_t>(v);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    malformed(line, key, value, "an unsigned integer");
  }
}

}  // namespace

const char* preset_name(Preset preset) {
  switch (preset) {
    case Preset::THEOREM_CHECK: return "theorem_check";
    case Preset::MODE_STUDY: return "mode_study";
    case Preset::CONVERGENCE: return "convergence";
    case Preset::EFFICIENCY: return "efficiency";
    case Preset::GRAD_CHECK: return "grad_check";
  }
  throw std::logic_error("unreachable");
}

Preset parse_preset(std::string_view name) {
  if (name == "theorem_check") return Preset::THEOREM_CHECK;
  if (name == "mode_study") return Preset::MODE_STUDY;
  if (name == "convergence") return Preset::CONVERGENCE;
  if (name == "efficiency") return Preset::EFFICIENCY;
  if (name == "grad_check") return Preset::GRAD_CHECK;
  throw std::invalid_argument("unknown preset: " + std::string(name));
}

ExperimentSpec default_spec(Preset preset) {
  ExperimentSpec spec;
  spec.preset = preset;
  switch (preset) {
    case Preset::THEOREM_CHECK:
      spec.trials = 50;
      spec.teacher_order = 2;
      spec.student_order = 1;
      break;
    case Preset::MODE_STUDY:
      spec.trials = 5;
      spec.teacher_order = spec.horizon - 1;  // bimodal teacher is full-history
      spec.student_order = 0;
      spec.branch_boost = 4.0;  // teacher carries a real mid-sequence tail
      spec.train.steps = 3000;
      spec.train.learning_rate = 0.05;
      spec.train.mc_samples_per_step = 4;
      break;
    case Preset::CONVERGENCE:
      spec.trials = 1;
      spec.teacher_order = 2;
      spec.student_order = 2;
      spec.train.steps = 5000;
      spec.train.learning_rate = 0.05;
      spec.train.mc_samples_per_step = 4;
      break;
    case Preset::EFFICIENCY:
      spec.trials = 3;
      spec.teacher_order = 2;
      spec.student_order = 1;
      spec.kind = "kl";
      spec.train.steps = 1500;
      spec.train.learning_rate = 0.05;
      spec.train.mc_samples_per_step = 8;
      spec.train.offline_cache_size = 64;
      break;
    case Preset::GRAD_CHECK:
      spec.trials = 10;
      spec.teacher_order = 2;
      spec.student_order = 1;
      break;
  }
  return spec;
}

void validate_spec(const ExperimentSpec& spec) {
  if (spec.trials < 1) throw ConfigError("trials must be at least 1");
  if (spec.vocab < 2) throw ConfigError("vocab must be at least 2");
  if (spec.horizon < 1) throw ConfigError("horizon must be at least 1");
  try {
    checked_sequence_count(spec.vocab, spec.horizon);
  } catch (const EnumerationCapError& e) {
    throw ConfigError(e.what());
  }
  if (spec.teacher_order < 0 || spec.teacher_order >= spec.horizon) {
    throw ConfigError("teacher_order must lie in [0, horizon)");
  }
  if (spec.student_order < 0 || spec.student_order >= spec.horizon) {
    throw ConfigError("student_order must lie in [0, horizon)");
  }
  if (spec.risk_samples < 1) throw ConfigError("risk_samples must be at least 1");
  if (!(spec.sharpness > 0.0)) throw ConfigError("sharpness must be positive");
  if (!(spec.branch_boost >= 0.0)) throw ConfigError("branch_boost must be >= 0");
  if (spec.output_format != "csv" && spec.output_format != "jsonl") {
    throw ConfigError("format must be 'csv' or 'jsonl'");
  }
  if (spec.kind != "all") {
    TrainKind k;
    try {
      k = parse_train_kind(spec.kind);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (spec.preset == Preset::EFFICIENCY && k != TrainKind::KL && k != TrainKind::JS &&
        k != TrainKind::TVD) {
      throw ConfigError("efficiency preset needs a teacher-sampling kind: kl, js, or tvd");
    }
    if (k == TrainKind::MLE) throw ConfigError("kind 'mle' is internal to warm starts");
  } else if (spec.preset == Preset::EFFICIENCY) {
    throw ConfigError("efficiency preset needs a single kind: kl, js, or tvd");
  }
  // Range checks plus the kind/sampling contradiction when a single kind is
  // selected; presets that fill kinds in themselves re-validate per run.
  TrainConfig ranges = spec.train;
  ranges.kind = spec.kind == "all" ? TrainKind::KL : parse_train_kind(spec.kind);
  validate_config(ranges);
  if (spec.preset == Preset::MODE_STUDY && spec.horizon < 2) {
    throw ConfigError("mode_study needs horizon >= 2");
  }
}

ExperimentSpec parse_config_text(const std::string& text, const ExperimentSpec* base) {
  struct Entry {
    int line;
    std::string value;
  };
  std::map<std::string, Entry> entries;
  std::vector<std::string> unknown;

  static const char* kKnown[] = {
      "preset",          "trials",
      "seed",            "vocab",
      "horizon",         "teacher_order",
      "student_order",   "kind",
      "js_mode",         "steps",
      "learning_rate",   "optimizer",
      "adam_beta1",      "adam_beta2",
      "mc_samples_per_step", "teacher_sampling",
      "offline_cache_size",  "prob_floor",
      "risk_samples",    "sharpness",
      "branch_boost",    "out",
      "format",
  };

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" +
                        line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    }
    bool known = false;
    for (const char* k : kKnown) {
      if (key == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      unknown.push_back(key + " (line " + std::to_string(line_no) + ")");
      continue;
    }
    auto [it, inserted] = entries.emplace(key, Entry{line_no, value});
    if (!inserted) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key +
                        "' (first on line " + std::to_string(it->second.line) + ")");
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config key";
    if (unknown.size() > 1) msg += "s";
    msg += ": ";
    for (std::size_t i = 0; i < unknown.size(); ++i) {
      if (i) msg += ", ";
      msg += unknown[i];
    }
    throw ConfigError(msg);
  }

  ExperimentSpec spec;
  if (auto it = entries.find("preset"); it != entries.end()) {
    Preset p;
    try {
      p = parse_preset(it->second.value);
    } catch (const std::invalid_argument&) {
      malformed(it->second.line, "preset", it->second.value,
                "theorem_check|mode_study|convergence|efficiency|grad_check");
    }
    if (base != nullptr && p != base->preset) {
      throw ConfigError(std::string("config preset '") + preset_name(p) +
                        "' conflicts with requested preset '" + preset_name(base->preset) +
                        "'");
    }
    spec = default_spec(p);
  } else if (base != nullptr) {
    spec = *base;
  } else {
    spec = default_spec(Preset::THEOREM_CHECK);
  }

  for (const auto& [key, entry] : entries) {
    const int line = entry.line;
    const std::string& value = entry.value;
    if (key == "preset") continue;
    if (key == "trials") spec.trials = parse_int(line, key, value);
    else if (key == "seed") spec.train.seed = parse_seed(line, key, value);
    else if (key == "vocab") spec.vocab = parse_int(line, key, value);
    else if (key == "horizon") spec.horizon = parse_int(line, key, value);
    else if (key == "teacher_order") spec.teacher_order = parse_int(line, key, value);
    else if (key == "student_order") spec.student_order = parse_int(line, key, value);
    else if (key == "kind") {
      if (value != "all") {
        try {
          parse_train_kind(value);
        } catch (const std::invalid_argument&) {
          malformed(line, key, value, "kl|rkl|js|tvd|seqkd|engine|all");
        }
      }
      spec.kind = value;
    } else if (key == "js_mode") {
      try {
        spec.train.js_mode = parse_js_mode(value);
      } catch (const std::invalid_argument&) {
        malformed(line, key, value, "exact|mixture");
      }
    } else if (key == "steps") {
      spec.train.steps = parse_int(line, key, value);
    } else if (key == "learning_rate") {
      spec.train.learning_rate = parse_real(line, key, value);
    } else if (key == "optimizer") {
      if (value == "adam") spec.train.optimizer = Optimizer::ADAM;
      else if (value == "sgd") spec.train.optimizer = Optimizer::SGD;
      else malformed(line, key, value, "adam|sgd");
    } else if (key == "adam_beta1") {
      spec.train.adam_beta1 = parse_real(line, key, value);
    } else if (key == "adam_beta2") {
      spec.train.adam_beta2 = parse_real(line, key, value);
    } else if (key == "mc_samples_per_step") {
      spec.train.mc_samples_per_step = parse_int(line, key, value);
    } else if (key == "teacher_sampling") {
      if (value == "online") spec.train.teacher_sampling = TeacherSampling::ONLINE;
      else if (value == "offline") spec.train.teacher_sampling = TeacherSampling::OFFLINE;
      else malformed(line, key, value, "online|offline");
    } else if (key == "offline_cache_size") {
      spec.train.offline_cache_size = parse_int(line, key, value);
    } else if (key == "prob_floor") {
      spec.train.prob_floor = parse_real(line, key, value);
    } else if (key == "risk_samples") {
      spec.risk_samples = parse_int(line, key, value);
    } else if (key == "sharpness") {
      spec.sharpness = parse_real(line, key, value);
    } else if (key == "branch_boost") {
      spec.branch_boost = parse_real(line, key, value);
    } else if (key == "out") {
      spec.output_path = value;
    } else if (key == "format") {
      if (value == "json") spec.output_format = "jsonl";
      else spec.output_format = value;
    }
  }
  if (spec.kind != "all") spec.train.kind = parse_train_kind(spec.kind);
  validate_spec(spec);
  return spec;
}

ExperimentSpec parse_config(const std::string& path, const ExperimentSpec* base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), base);
}

std::string format_config(const ExperimentSpec& spec) {
  std::ostringstream out;
  out << "preset=" << preset_name(spec.preset) << "\n";
  out << "trials=" << spec.trials << "\n";
  out << "seed=" << spec.train.seed << "\n";
  out << "vocab=" << spec.vocab << "\n";
  out << "horizon=" << spec.horizon << "\n";
  out << "teacher_order=" << spec.teacher_order << "\n";
  out << "student_order=" << spec.student_order << "\n";
  out << "kind=" << spec.kind << "\n";
  out << "js_mode=" << js_mode_name(spec.train.js_mode) << "\n";
  out << "steps=" << spec.train.steps << "\n";
  out << "learning_rate=" << format_double(spec.train.learning_rate) << "\n";
  out << "optimizer=" << (spec.train.optimizer == Optimizer::ADAM ? "adam" : "sgd") << "\n";
  out << "adam_beta1=" << format_double(spec.train.adam_beta1) << "\n";
  out << "adam_beta2=" << format_double(spec.train.adam_beta2) << "\n";
  out << "mc_samples_per_step=" << spec.train.mc_samples_per_step << "\n";
  out << "teacher_sampling="
      << (spec.train.teacher_sampling == TeacherSampling::ONLINE ? "online" : "offline")
      << "\n";
  out << "offline_cache_size=" << spec.train.offline_cache_size << "\n";
  out << "prob_floor=" << format_double(spec.train.prob_floor) << "\n";
  out << "risk_samples=" << spec.risk_samples << "\n";
  out << "sharpness=" << format_double(spec.sharpness) << "\n";
  out << "branch_boost=" << format_double(spec.branch_boost) << "\n";
  out << "out=" << spec.output_path << "\n";
  out << "format=" << spec.output_format << "\n";
  return out.str();
}

}  // namespace fdistill
