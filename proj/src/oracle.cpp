#include "relmask/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "relmask/errors.hpp"

namespace relmask {

int resolve_reference(const Scene& scene, Location loc, const std::string& color,
                      Category category) {
  const SceneObject* best = nullptr;
  for (const auto& o : scene.objects) {
    if (o.category != category || o.color_name != color) continue;
    if (!best) {
      best = &o;
      continue;
    }
    bool better = false;
    switch (loc) {
      case Location::left: better = o.x < best->x; break;
      case Location::right: better = o.x > best->x; break;
      case Location::front: better = o.y < best->y; break;
      case Location::back: better = o.y > best->y; break;
    }
    const bool tie = (loc == Location::left || loc == Location::right) ? o.x == best->x
                                                                        : o.y == best->y;
    if (better || (tie && o.id < best->id)) best = &o;
  }
  if (!best)
    throw NoMatchingObject(std::string("no ") + color + " " + category_name(category) +
                           " in scene");
  return best->id;
}

Point2 midpoint(const SceneObject& a, const SceneObject& b) {
  return {(a.x + b.x) / 2, (a.y + b.y) / 2};
}

const char* relevance_mode_name(RelevanceMode mode) {
  return mode == RelevanceMode::with_pick ? "with_pick" : "placement_only";
}

RelevanceMode parse_relevance_mode(const std::string& s) {
  if (s == "with_pick") return RelevanceMode::with_pick;
  if (s == "placement_only") return RelevanceMode::placement_only;
  throw std::invalid_argument("unknown relevance mode '" + s + "'");
}

namespace {

const SceneObject& by_id(const Scene& scene, int id) {
  for (const auto& o : scene.objects)
    if (o.id == id) return o;
  throw NoMatchingObject("no object with id " + std::to_string(id));
}

}  // namespace

EpisodeLabels relevance_labels(const Scene& scene, const InstructionAST& ast,
                               RelevanceMode mode) {
  EpisodeLabels out;
  int picks = 0;
  for (const auto& o : scene.objects)
    if (o.category == Category::block && o.color_name == ast.pick_color) {
      out.pick_id = o.id;
      ++picks;
    }
  if (picks != 1)
    throw AmbiguousPick(std::to_string(picks) + " blocks have the pick color " + ast.pick_color);
  out.ref_block_id = resolve_reference(scene, ast.loc_a, ast.color_a, Category::block);
  out.ref_bowl_id = resolve_reference(scene, ast.loc_b, ast.color_b, Category::bowl);
  out.place_target = midpoint(by_id(scene, out.ref_block_id), by_id(scene, out.ref_bowl_id));

  out.relevant_ids = {out.ref_block_id, out.ref_bowl_id};
  if (mode == RelevanceMode::with_pick) out.relevant_ids.push_back(out.pick_id);
  std::sort(out.relevant_ids.begin(), out.relevant_ids.end());

  // Labels index the scene's object list, which the ids address in order.
  out.relevance.assign(scene.objects.size(), 0);
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    if (std::binary_search(out.relevant_ids.begin(), out.relevant_ids.end(),
                           scene.objects[i].id))
      out.relevance[i] = 1;
  return out;
}

SuccessVerdict judge(const Scene& scene, const InstructionAST& ast, Pixel pick_px,
                     Point2 place, const WorkspaceConfig& cfg) {
  const EpisodeLabels labels = relevance_labels(scene, ast);
  const Point2 c = unproject(pick_px, cfg);
  SuccessVerdict v;
  v.pick_ok = covers(by_id(scene, labels.pick_id), c.x, c.y);
  v.place_error_m = std::hypot(place.x - labels.place_target.x, place.y - labels.place_target.y);
  // Absorbs the rounding of a point constructed exactly on the boundary.
  v.place_ok = v.place_error_m <= kPlaceTolerance + 1e-12;
  return v;
}

}  // namespace relmask
