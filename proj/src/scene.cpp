#include "relmask/scene.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "relmask/errors.hpp"

namespace relmask {

const std::vector<NamedColor>& seen_colors() {
  static const std::vector<NamedColor> colors = {
      {"red", {230, 25, 75}},    {"green", {60, 180, 75}},    {"blue", {0, 110, 230}},
      {"yellow", {255, 225, 25}}, {"cyan", {70, 240, 240}},   {"magenta", {240, 50, 230}},
      {"gray", {128, 128, 128}},
  };
  return colors;
}

const std::vector<NamedColor>& unseen_colors() {
  static const std::vector<NamedColor> colors = {
      {"orange", {245, 130, 48}}, {"purple", {145, 30, 180}}, {"brown", {154, 99, 36}},
      {"pink", {250, 190, 212}},  {"white", {255, 255, 255}},
  };
  return colors;
}

const std::vector<NamedColor>& all_colors() {
  static const std::vector<NamedColor> colors = [] {
    auto all = seen_colors();
    const auto& u = unseen_colors();
    all.insert(all.end(), u.begin(), u.end());
    return all;
  }();
  return colors;
}

Rgb color_rgb(const std::string& name) {
  for (const auto& c : all_colors())
    if (c.name == name) return c.rgb;
  throw UnknownColor("unknown color '" + name + "'");
}

bool is_color(const std::string& name) {
  return std::any_of(all_colors().begin(), all_colors().end(),
                     [&](const NamedColor& c) { return c.name == name; });
}

void WorkspaceConfig::validate() const {
  if (width_m <= 0 || depth_m <= 0 || width_px <= 0 || height_px <= 0)
    throw std::invalid_argument("workspace: non-positive extent");
  if (std::abs(width_px / width_m - height_px / depth_m) > 1e-9)
    throw std::invalid_argument("workspace: pixels must be square");
  if (patch_px < 8) throw std::invalid_argument("workspace: patch_px must be at least 8");
}

WorkspaceConfig WorkspaceConfig::full_resolution() {
  WorkspaceConfig cfg;
  cfg.width_px = 320;
  cfg.height_px = 160;
  cfg.patch_px = 50;
  return cfg;
}

const char* category_name(Category c) { return c == Category::block ? "block" : "bowl"; }

Category parse_category(const std::string& s) {
  if (s == "block") return Category::block;
  if (s == "bowl") return Category::bowl;
  throw std::invalid_argument("unknown category '" + s + "'");
}

ColorAssignment sample_color_assignment(const std::string& color_a, const std::string& color_b,
                                        const std::string& pick_color,
                                        const std::vector<std::string>& pool, Rng& rng) {
  std::vector<std::string> others;
  for (const auto& c : pool)
    if (c != color_a && c != color_b) others.push_back(c);
  if (std::find(others.begin(), others.end(), pick_color) == others.end())
    throw std::invalid_argument("pick color must be in the pool and differ from both references");
  if (others.size() < 3)
    throw std::invalid_argument("color pool too small for a distinct distractor set");

  std::vector<std::string> distractors;
  for (const auto& c : others)
    if (c != pick_color) distractors.push_back(c);
  shuffle(distractors, rng);

  std::vector<std::string> blocks = {color_a, color_a, color_a, pick_color, distractors[0],
                                     distractors[1]};
  std::vector<std::string> bowls = {color_b, color_b, color_b};
  for (int i = 0; i < 3; ++i) bowls.push_back(others[uniform_index(rng, others.size())]);
  shuffle(blocks, rng);
  shuffle(bowls, rng);

  ColorAssignment out;
  std::copy(blocks.begin(), blocks.end(), out.blocks.begin());
  std::copy(bowls.begin(), bowls.end(), out.bowls.begin());
  return out;
}

std::optional<std::string> color_violation(const ColorAssignment& colors,
                                           const std::string& color_a,
                                           const std::string& color_b) {
  std::map<std::string, int> block_count;
  for (const auto& c : colors.blocks) {
    if (!is_color(c)) return "unknown block color " + c;
    ++block_count[c];
  }
  if (block_count[color_a] != 3) return "expected three " + color_a + " blocks";
  for (const auto& [c, n] : block_count) {
    if (c == color_a) continue;
    if (c == color_b) return "distractor block shares reference bowl color " + c;
    if (n != 1) return "distractor block color " + c + " repeats";
  }
  int b = 0;
  for (const auto& c : colors.bowls) {
    if (!is_color(c)) return "unknown bowl color " + c;
    if (c == color_b) {
      ++b;
    } else if (c == color_a) {
      return "distractor bowl shares reference block color " + c;
    }
  }
  if (b != 3) return "expected three " + color_b + " bowls";
  return std::nullopt;
}

namespace {

double half_extent(Category c) { return c == Category::block ? kBlockSide / 2 : kBowlRadius; }

bool far_enough(const std::vector<SceneObject>& placed, double x, double y) {
  for (const auto& o : placed)
    if (std::hypot(o.x - x, o.y - y) < kMinSeparation) return false;
  return true;
}

}  // namespace

Scene place_objects(const ColorAssignment& colors, const WorkspaceConfig& cfg, Rng& rng,
                    std::uint64_t seed) {
  constexpr int kAttemptsPerObject = 1000;
  constexpr int kSceneRetries = 50;

  std::vector<SceneObject> templ(kObjectsPerScene);
  for (int i = 0; i < kObjectsPerScene; ++i) {
    auto& o = templ[i];
    o.id = i;
    o.category = i < kBlocksPerScene ? Category::block : Category::bowl;
    o.color_name = i < kBlocksPerScene ? colors.blocks[i] : colors.bowls[i - kBlocksPerScene];
    o.color = color_rgb(o.color_name);
  }
  // Bowls have the tighter placement region, so they go first.
  std::vector<int> order;
  for (int i = kBlocksPerScene; i < kObjectsPerScene; ++i) order.push_back(i);
  for (int i = 0; i < kBlocksPerScene; ++i) order.push_back(i);

  for (int retry = 0; retry < kSceneRetries; ++retry) {
    std::vector<SceneObject> placed;
    bool ok = true;
    for (int id : order) {
      SceneObject o = templ[id];
      const double r = half_extent(o.category) + kEdgeMargin;
      if (2 * r >= cfg.width_m || 2 * r >= cfg.depth_m)
        throw PlacementInfeasible("object footprint does not fit the workspace");
      bool found = false;
      for (int a = 0; a < kAttemptsPerObject && !found; ++a) {
        const double x = uniform(rng, r, cfg.width_m - r);
        const double y = uniform(rng, r, cfg.depth_m - r);
        if (far_enough(placed, x, y)) {
          o.x = x;
          o.y = y;
          found = true;
        }
      }
      if (!found) {
        ok = false;
        break;
      }
      placed.push_back(o);
    }
    if (ok) {
      std::sort(placed.begin(), placed.end(),
                [](const SceneObject& a, const SceneObject& b) { return a.id < b.id; });
      return Scene{std::move(placed), seed};
    }
  }
  throw PlacementInfeasible("could not place all objects after 50 scene retries");
}

std::optional<std::string> geometry_violation(const Scene& scene, const WorkspaceConfig& cfg) {
  if (scene.objects.size() != static_cast<std::size_t>(kObjectsPerScene))
    return "expected 12 objects";
  for (int i = 0; i < kObjectsPerScene; ++i) {
    const auto& o = scene.objects[i];
    if (o.id != i) return "object ids must be 0..11 in order";
    const Category want = i < kBlocksPerScene ? Category::block : Category::bowl;
    if (o.category != want) return "object " + std::to_string(i) + " has the wrong category";
    const double r = half_extent(o.category) + kEdgeMargin;
    if (o.x < r || o.x > cfg.width_m - r || o.y < r || o.y > cfg.depth_m - r)
      return "object " + std::to_string(i) + " violates the edge margin";
    for (int j = 0; j < i; ++j)
      if (std::hypot(o.x - scene.objects[j].x, o.y - scene.objects[j].y) < kMinSeparation)
        return "objects " + std::to_string(j) + " and " + std::to_string(i) + " are too close";
  }
  return std::nullopt;
}

ColorAssignment colors_of(const Scene& scene) {
  ColorAssignment out;
  for (const auto& o : scene.objects) {
    if (o.id < kBlocksPerScene)
      out.blocks[o.id] = o.color_name;
    else if (o.id < kObjectsPerScene)
      out.bowls[o.id - kBlocksPerScene] = o.color_name;
  }
  return out;
}

bool covers(const SceneObject& obj, double x, double y) {
  const double dx = x - obj.x;
  const double dy = y - obj.y;
  if (obj.category == Category::block)
    return std::abs(dx) <= kBlockSide / 2 && std::abs(dy) <= kBlockSide / 2;
  return dx * dx + dy * dy <= kBowlRadius * kBowlRadius;
}

Pixel project(double x, double y, const WorkspaceConfig& cfg) {
  if (!(x >= 0 && x <= cfg.width_m && y >= 0 && y <= cfg.depth_m))
    throw GeometryError("point outside the workspace");
  const double ppm = cfg.ppm();
  const int u = std::min(static_cast<int>(std::floor(x * ppm)), cfg.width_px - 1);
  const int v = std::min(static_cast<int>(std::floor(y * ppm)), cfg.height_px - 1);
  return {u, v};
}

Point2 unproject(int u, int v, const WorkspaceConfig& cfg) {
  if (u < 0 || u >= cfg.width_px || v < 0 || v >= cfg.height_px)
    throw GeometryError("pixel outside the image");
  const double ppm = cfg.ppm();
  return {(u + 0.5) / ppm, (v + 0.5) / ppm};
}

namespace {

// Visits every pixel whose center lies inside the object's footprint.
template <typename Fn>
void rasterize(const SceneObject& obj, const WorkspaceConfig& cfg, Fn&& fn) {
  const double ppm = cfg.ppm();
  const double r = half_extent(obj.category);
  const int u0 = std::max(0, static_cast<int>(std::floor((obj.x - r) * ppm)) - 1);
  const int u1 = std::min(cfg.width_px - 1, static_cast<int>(std::ceil((obj.x + r) * ppm)) + 1);
  const int v0 = std::max(0, static_cast<int>(std::floor((obj.y - r) * ppm)) - 1);
  const int v1 = std::min(cfg.height_px - 1, static_cast<int>(std::ceil((obj.y + r) * ppm)) + 1);
  for (int v = v0; v <= v1; ++v)
    for (int u = u0; u <= u1; ++u)
      if (covers(obj, (u + 0.5) / ppm, (v + 0.5) / ppm)) fn(v, u);
}

}  // namespace

Image render(const Scene& scene, const WorkspaceConfig& cfg) {
  Image img(cfg.height_px, cfg.width_px, cfg.background);
  for (const auto& o : scene.objects) rasterize(o, cfg, [&](int v, int u) { img.set(v, u, o.color); });
  return img;
}

Mask object_mask(const SceneObject& obj, const WorkspaceConfig& cfg) {
  Mask m(cfg.height_px, cfg.width_px);
  rasterize(obj, cfg, [&](int v, int u) { m(v, u) = 1; });
  return m;
}

std::vector<Mask> segmentation(const Scene& scene, const WorkspaceConfig& cfg) {
  std::vector<Mask> masks;
  masks.reserve(scene.objects.size());
  for (const auto& o : scene.objects) masks.push_back(object_mask(o, cfg));
  return masks;
}

Image crop_patch(const Image& image, Pixel center, int patch_px) {
  Image patch(patch_px, patch_px);
  const int top = center.v - patch_px / 2;
  const int left = center.u - patch_px / 2;
  for (int r = 0; r < patch_px; ++r)
    for (int c = 0; c < patch_px; ++c)
      if (image.contains(top + r, left + c)) patch.set(r, c, image.rgb(top + r, left + c));
  return patch;
}

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : scene.objects)
    objs.push_back({{"id", o.id},
                    {"category", category_name(o.category)},
                    {"color_name", o.color_name},
                    {"color_rgb", {o.color.r, o.color.g, o.color.b}},
                    {"x", o.x},
                    {"y", o.y}});
  return {{"seed", scene.seed}, {"objects", objs}};
}

Scene scene_from_json(const nlohmann::json& j) {
  try {
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jo : j.at("objects")) {
      SceneObject o;
      o.id = jo.at("id").get<int>();
      o.category = parse_category(jo.at("category").get<std::string>());
      o.color_name = jo.at("color_name").get<std::string>();
      const auto& rgb = jo.at("color_rgb");
      o.color = {rgb.at(0).get<std::uint8_t>(), rgb.at(1).get<std::uint8_t>(),
                 rgb.at(2).get<std::uint8_t>()};
      o.x = jo.at("x").get<double>();
      o.y = jo.at("y").get<double>();
      s.objects.push_back(std::move(o));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene json: ") + e.what());
  }
}

}  // namespace relmask
