#pragma once

#include <stdexcept>
#include <string>

namespace reglab {

// Exit-code mapping for the CLI lives in tools/; library code only throws.
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

struct domain_error : std::runtime_error {
  long long index = -1;  // offending flat index, when known
  explicit domain_error(const std::string& what, long long idx = -1)
      : std::runtime_error(what), index(idx) {}
};

struct numeric_error : std::runtime_error {
  double residual = 0.0;
  explicit numeric_error(const std::string& what, double res = 0.0)
      : std::runtime_error(what), residual(res) {}
};

struct singular_fit_error : numeric_error {
  double condition = 0.0;
  explicit singular_fit_error(const std::string& what, double cond = 0.0)
      : numeric_error(what), condition(cond) {}
};

struct degenerate_input_error : std::runtime_error {
  explicit degenerate_input_error(const std::string& what) : std::runtime_error(what) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

struct divergence_error : numeric_error {
  explicit divergence_error(const std::string& what) : numeric_error(what) {}
};

}  // namespace reglab
