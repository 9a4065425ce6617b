#pragma once

#include <string>
#include <vector>

#include "relmask/instruction.hpp"
#include "relmask/scene.hpp"

namespace relmask {

/// Extremal object of (color, category) along the location's axis; exact
/// ties go to the lowest id. Throws NoMatchingObject.
int resolve_reference(const Scene& scene, Location loc, const std::string& color,
                      Category category);

Point2 midpoint(const SceneObject& a, const SceneObject& b);

enum class RelevanceMode { with_pick, placement_only };

const char* relevance_mode_name(RelevanceMode mode);
RelevanceMode parse_relevance_mode(const std::string& s);

struct EpisodeLabels {
  std::vector<int> relevance;      // length m, 0/1
  std::vector<int> relevant_ids;   // ascending
  int pick_id = -1;
  int ref_block_id = -1;
  int ref_bowl_id = -1;
  Point2 place_target;
};

/// Throws AmbiguousPick when the pick color does not name exactly one block.
EpisodeLabels relevance_labels(const Scene& scene, const InstructionAST& ast,
                               RelevanceMode mode = RelevanceMode::with_pick);

inline constexpr double kPlaceTolerance = 0.1;

struct SuccessVerdict {
  bool pick_ok = false;
  bool place_ok = false;
  double place_error_m = 0;
  bool success() const { return pick_ok && place_ok; }
};

/// The pick counts when the pixel lies in the pick block's mask; the place
/// counts within kPlaceTolerance of the target, boundary included.
SuccessVerdict judge(const Scene& scene, const InstructionAST& ast, Pixel pick_px,
                     Point2 place, const WorkspaceConfig& cfg);

}  // namespace relmask
