#include "ltmvo/model.hpp"

namespace ltmvo::model {

std::vector<std::pair<int, int>> snippet_tiling(int frame_count, int snippet_len) {
  ad::detail::require(frame_count >= 3, "snippet_tiling: need at least 3 frames");
  ad::detail::require(snippet_len >= 3, "snippet_tiling: snippet length must be >= 3");
  std::vector<std::pair<int, int>> tiles;
  int start = 0;
  while (start < frame_count - 1) {
    const int remaining = frame_count - start;
    int len = std::min(snippet_len, remaining);
    if (len < 2) break;
    tiles.emplace_back(start, len);
    start += len - 1;
  }
  return tiles;
}

Trajectory assemble_trajectory(const std::vector<SnippetPoses>& snippets, int frame_count) {
  Trajectory traj;
  traj.poses.reserve(frame_count);
  traj.poses.emplace_back(0, geom::SE3::identity());

  geom::SE3 origin_to_anchor = geom::SE3::identity();  // T_{0 -> anchor}
  int expected_anchor = 0;
  for (const auto& s : snippets) {
    ad::detail::require(s.anchor == expected_anchor,
                        "assemble_trajectory: snippets must share one frame");
    for (size_t k = 0; k < s.anchor_to_frame.size(); ++k) {
      const geom::SE3 origin_to_t = geom::se3_compose(s.anchor_to_frame[k], origin_to_anchor);
      traj.poses.emplace_back(s.anchor + static_cast<int>(k) + 1,
                              geom::se3_inverse(origin_to_t));
      if (k + 1 == s.anchor_to_frame.size()) origin_to_anchor = origin_to_t;
    }
    expected_anchor = s.anchor + static_cast<int>(s.anchor_to_frame.size());
  }
  ad::detail::require(static_cast<int>(traj.poses.size()) == frame_count,
                      "assemble_trajectory: pose count " + std::to_string(traj.poses.size()) +
                          " does not cover " + std::to_string(frame_count) + " frames");
  return traj;
}

}  // namespace ltmvo::model
