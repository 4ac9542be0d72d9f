#pragma once

#include "owf/geometry.hpp"
#include "owf/protocol.hpp"

namespace owf {

/// Final detector output ⟨label, score, box⟩; label is kUnknownClass for
/// detections of the unknown channel.
struct Detection {
  ClassId label = kUnknownClass;
  double score = 0.0;
  Box box;
};

}  // namespace owf
