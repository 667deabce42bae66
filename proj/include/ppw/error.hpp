#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ppw {

/// Pipeline stage that raised an error. Reports carry it as a tag.
enum class Stage {
  grid,
  geometry,
  split,
  gauge,
  scale,
  assemble,
  oracle,
  spinor,
  moduli,
  rigidity,
  scenario,
  io,
};

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::grid: return "grid";
    case Stage::geometry: return "geometry";
    case Stage::split: return "split";
    case Stage::gauge: return "gauge";
    case Stage::scale: return "scale";
    case Stage::assemble: return "assemble";
    case Stage::oracle: return "oracle";
    case Stage::spinor: return "spinor";
    case Stage::moduli: return "moduli";
    case Stage::rigidity: return "rigidity";
    case Stage::scenario: return "scenario";
    case Stage::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Stage stage, const std::string& what)
      : std::runtime_error(what), stage_(stage) {}
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

/// Input violates a documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// An iterative method hit its iteration cap or a residual monitor tripped.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown (focal points, cancellation, degenerate frames).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ppw
