#include <fstream>
#include <sstream>

#include "fdistill/experiment.hpp"
#include "json.hpp"

namespace fdistill {

namespace {

void row_prefix(std::ostream& out, const ResultRecord& r) {
  out << r.preset << "," << r.trial << "," << r.seed << "," << r.vocab << "," << r.horizon
      << "," << r.teacher_order << "," << r.student_order << "," << r.kind << ",";
}

}  // namespace

std::string results_to_csv(const std::vector<ResultRecord>& records) {
  std::ostringstream out;
  out << "preset,trial,seed,vocab,horizon,teacher_order,student_order,kind,"
         "entry,name,value,tolerance,passed\n";
  for (const ResultRecord& r : records) {
    for (const auto& [name, value] : r.metrics) {
      row_prefix(out, r);
      out << "metric," << name << "," << format_double(value) << ",,\n";
    }
    for (const CheckResult& c : r.checks) {
      row_prefix(out, r);
      out << "check," << c.name << "," << format_double(c.value) << ","
          << format_double(c.tolerance) << "," << (c.passed ? "true" : "false") << "\n";
    }
  }
  return out.str();
}

std::string results_to_jsonl(const std::vector<ResultRecord>& records) {
  std::ostringstream out;
  for (const ResultRecord& r : records) {
    nlohmann::json j;
    j["preset"] = r.preset;
    j["trial"] = r.trial;
    j["seed"] = r.seed;
    j["scale"] = {{"vocab", r.vocab},
                  {"horizon", r.horizon},
                  {"teacher_order", r.teacher_order},
                  {"student_order", r.student_order}};
    j["kind"] = r.kind;
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [name, value] : r.metrics) metrics[name] = value;
    j["metrics"] = metrics;
    nlohmann::json checks = nlohmann::json::array();
    for (const CheckResult& c : r.checks) {
      checks.push_back({{"name", c.name},
                        {"value", c.value},
                        {"tolerance", c.tolerance},
                        {"passed", c.passed}});
    }
    j["checks"] = checks;
    out << j.dump() << "\n";
  }
  return out.str();
}

void emit_results(const std::vector<ResultRecord>& records, const std::string& base_path) {
  {
    std::ofstream jout(base_path + ".jsonl", std::ios::binary);
    if (!jout) throw std::runtime_error("cannot write " + base_path + ".jsonl");
    jout << results_to_jsonl(records);
  }
  std::ofstream cout_(base_path + ".csv", std::ios::binary);
  if (!cout_) throw std::runtime_error("cannot write " + base_path + ".csv");
  cout_ << results_to_csv(records);
}

bool all_passed(const std::vector<ResultRecord>& records) {
  for (const ResultRecord& r : records) {
    for (const CheckResult& c : r.checks) {
      if (!c.passed) return false;
    }
  }
  return true;
}

}  // namespace fdistill
