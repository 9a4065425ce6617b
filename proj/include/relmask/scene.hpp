#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "relmask/image.hpp"
#include "relmask/random.hpp"

namespace relmask {

struct NamedColor {
  std::string name;
  Rgb rgb;
};

const std::vector<NamedColor>& seen_colors();
const std::vector<NamedColor>& unseen_colors();
/// Seen colors followed by unseen colors.
const std::vector<NamedColor>& all_colors();
/// Throws UnknownColor.
Rgb color_rgb(const std::string& name);
bool is_color(const std::string& name);

inline constexpr double kBlockSide = 0.04;
inline constexpr double kBowlRadius = 0.06;
inline constexpr double kMinSeparation = 0.14;
inline constexpr double kEdgeMargin = 0.02;
inline constexpr int kBlocksPerScene = 6;
inline constexpr int kBowlsPerScene = 6;
inline constexpr int kObjectsPerScene = kBlocksPerScene + kBowlsPerScene;

/// Table extent, image resolution and patch size. x runs left to right
/// (image columns), y runs front to back (image rows, row 0 at the front).
struct WorkspaceConfig {
  double width_m = 1.0;
  double depth_m = 0.5;
  int width_px = 160;
  int height_px = 80;
  int patch_px = 24;
  Rgb background{44, 44, 44};

  double ppm() const { return width_px / width_m; }
  /// Throws std::invalid_argument on non-square pixels or a tiny patch.
  void validate() const;

  /// 160 x 320 image with 50 px patches.
  static WorkspaceConfig full_resolution();
};

enum class Category { block, bowl };

const char* category_name(Category c);
Category parse_category(const std::string& s);

struct SceneObject {
  int id = 0;
  Category category = Category::block;
  std::string color_name;
  Rgb color;
  double x = 0;
  double y = 0;
};

/// Six blocks (ids 0-5) then six bowls (ids 6-11).
struct Scene {
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;
};

/// Color name per block id and per bowl slot.
struct ColorAssignment {
  std::array<std::string, kBlocksPerScene> blocks;
  std::array<std::string, kBowlsPerScene> bowls;
};

/// Three blocks of color_a, three bowls of color_b, a unique pick_color block
/// plus two further distinct block colors outside {a, b}, and three bowls
/// outside {a, b}. Slots are shuffled.
ColorAssignment sample_color_assignment(const std::string& color_a, const std::string& color_b,
                                        const std::string& pick_color,
                                        const std::vector<std::string>& pool, Rng& rng);

/// Describes the first color rule broken, if any.
std::optional<std::string> color_violation(const ColorAssignment& colors,
                                           const std::string& color_a,
                                           const std::string& color_b);

/// Rejection-samples object centers. Throws PlacementInfeasible after 50
/// whole-scene retries.
Scene place_objects(const ColorAssignment& colors, const WorkspaceConfig& cfg, Rng& rng,
                    std::uint64_t seed = 0);

/// Describes the first geometric rule broken (margin, separation, ids), if any.
std::optional<std::string> geometry_violation(const Scene& scene, const WorkspaceConfig& cfg);

ColorAssignment colors_of(const Scene& scene);

/// True if the workspace point lies inside the object's footprint.
bool covers(const SceneObject& obj, double x, double y);

struct Pixel {
  int u = 0;
  int v = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct Point2 {
  double x = 0;
  double y = 0;
};

/// Throws GeometryError outside the workspace.
Pixel project(double x, double y, const WorkspaceConfig& cfg);
inline Pixel project(const Point2& p, const WorkspaceConfig& cfg) { return project(p.x, p.y, cfg); }
/// Pixel center in meters. Throws GeometryError outside the image.
Point2 unproject(int u, int v, const WorkspaceConfig& cfg);
inline Point2 unproject(const Pixel& p, const WorkspaceConfig& cfg) { return unproject(p.u, p.v, cfg); }

/// A pixel belongs to an object when its center lies inside the footprint.
Image render(const Scene& scene, const WorkspaceConfig& cfg);
/// One mask per object, in object order.
std::vector<Mask> segmentation(const Scene& scene, const WorkspaceConfig& cfg);
Mask object_mask(const SceneObject& obj, const WorkspaceConfig& cfg);

/// patch_px x patch_px crop whose top-left is center - patch_px / 2;
/// pixels outside the image are zero.
Image crop_patch(const Image& image, Pixel center, int patch_px);

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

}  // namespace relmask
