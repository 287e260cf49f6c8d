#pragma once

#include <vector>

#include "ltmvo/geom.hpp"

namespace ltmvo {

/// Ordered (frame index, world-from-camera pose) list. Frame indices are
/// strictly increasing; frame 0 of a sequence defines the world frame.
struct Trajectory {
  std::vector<std::pair<int, geom::SE3>> poses;

  bool indices_strictly_increasing() const {
    for (size_t i = 1; i < poses.size(); ++i)
      if (poses[i].first <= poses[i - 1].first) return false;
    return true;
  }
};

}  // namespace ltmvo
