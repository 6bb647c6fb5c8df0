#include "fdistill/common.hpp"

#include <cstdio>
#include <cstdlib>
#include <string>

namespace fdistill {

std::int64_t enumeration_cap() {
  // Re-read each call so tests and callers can adjust the environment.
  if (const char* env = std::getenv("FDISTILL_ENUM_CAP")) {
    try {
      long long v = std::stoll(env);
      if (v > 0) return static_cast<std::int64_t>(v);
    } catch (const std::exception&) {
      // Unparsable override: fall through to the default.
    }
  }
  return 10'000'000;
}

std::int64_t checked_sequence_count(int vocab, int horizon, std::int64_t cap) {
  if (vocab < 2) throw std::invalid_argument("vocab must be at least 2");
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  std::int64_t n = 1;
  for (int t = 0; t < horizon; ++t) {
    if (n > cap / vocab) {
      throw EnumerationCapError("sequence space " + std::to_string(vocab) + "^" +
                                std::to_string(horizon) + " exceeds enumeration cap " +
                                std::to_string(cap));
    }
    n *= vocab;
  }
  return n;
}

std::int64_t checked_sequence_count(int vocab, int horizon) {
  return checked_sequence_count(vocab, horizon, enumeration_cap());
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace fdistill
