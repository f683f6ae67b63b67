#pragma once

#include <stdexcept>

namespace dronecam {

struct DegenerateClip : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FilterDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContextOverflow : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooShort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dronecam
