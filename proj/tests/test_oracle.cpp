#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "relmask/errors.hpp"
#include "relmask/oracle.hpp"

using namespace relmask;

namespace {

std::vector<std::string> seen_names() {
  std::vector<std::string> out;
  for (const auto& c : seen_colors()) out.push_back(c.name);
  return out;
}

struct Case {
  Scene scene;
  InstructionAST ast;
};

Case random_case(std::uint64_t seed) {
  Rng rng(seed);
  const auto pool = seen_names();
  Case c;
  c.ast = sample_ast(rng, pool);
  const auto colors =
      sample_color_assignment(c.ast.color_a, c.ast.color_b, c.ast.pick_color, pool, rng);
  c.scene = place_objects(colors, WorkspaceConfig{}, rng, seed);
  return c;
}

// Sorts the candidates by the location's key and takes the first.
int scan_oracle(const Scene& s, Location loc, const std::string& color, Category cat) {
  std::vector<std::pair<double, int>> cands;
  for (const auto& o : s.objects) {
    if (o.category != cat || o.color_name != color) continue;
    double key = 0;
    switch (loc) {
      case Location::left: key = o.x; break;
      case Location::right: key = -o.x; break;
      case Location::front: key = o.y; break;
      case Location::back: key = -o.y; break;
    }
    cands.push_back({key, o.id});
  }
  if (cands.empty()) return -1;
  return std::min_element(cands.begin(), cands.end())->second;
}

// An object fills a reference slot when no other object of that color and
// category lies further along the slot's direction.
bool extremal(const Scene& s, const SceneObject& o, Location loc) {
  for (const auto& p : s.objects) {
    if (p.id == o.id || p.category != o.category || p.color_name != o.color_name) continue;
    const bool beats = (loc == Location::left && p.x < o.x) ||
                       (loc == Location::right && p.x > o.x) ||
                       (loc == Location::front && p.y < o.y) ||
                       (loc == Location::back && p.y > o.y);
    if (beats) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("resolve_reference basics") {
  Scene s;
  s.objects = {{0, Category::block, "red", {}, 0.8, 0.2}, {1, Category::block, "red", {}, 0.2, 0.3},
               {2, Category::bowl, "red", {}, 0.5, 0.1}};
  CHECK(resolve_reference(s, Location::left, "red", Category::block) == 1);
  CHECK(resolve_reference(s, Location::right, "red", Category::block) == 0);
  CHECK(resolve_reference(s, Location::front, "red", Category::block) == 0);
  CHECK(resolve_reference(s, Location::back, "red", Category::block) == 1);
  for (Location l : kLocations) CHECK(resolve_reference(s, l, "red", Category::bowl) == 2);
  CHECK_THROWS_AS(resolve_reference(s, Location::left, "blue", Category::block), NoMatchingObject);

  s.objects[1].x = 0.8;
  CHECK(resolve_reference(s, Location::left, "red", Category::block) == 0);
  CHECK(resolve_reference(s, Location::right, "red", Category::block) == 0);
}

TEST_CASE("resolve_reference agrees with a linear scan") {
  int checks = 0, mismatches = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Case c = random_case(seed);
    for (const auto& color : seen_names())
      for (Category cat : {Category::block, Category::bowl})
        for (Location l : kLocations) {
          const int want = scan_oracle(c.scene, l, color, cat);
          int got = -1;
          try {
            got = resolve_reference(c.scene, l, color, cat);
          } catch (const NoMatchingObject&) {
          }
          mismatches += got != want;
          ++checks;
        }
  }
  CHECK(checks == 1000 * 7 * 2 * 4);
  CHECK(mismatches == 0);
}

TEST_CASE("resolution is invariant to object order and mirrors with the axes") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Case c = random_case(seed);
    Scene shuffled = c.scene;
    Rng rng(seed);
    shuffle(shuffled.objects, rng);
    Scene mx = c.scene, my = c.scene;
    for (auto& o : mx.objects) o.x = 1.0 - o.x;
    for (auto& o : my.objects) o.y = 0.5 - o.y;
    for (Location l : kLocations) {
      const int id = resolve_reference(c.scene, l, c.ast.color_a, Category::block);
      CHECK(resolve_reference(shuffled, l, c.ast.color_a, Category::block) == id);
    }
    const auto& a = c.ast.color_a;
    CHECK(resolve_reference(mx, Location::left, a, Category::block) ==
          resolve_reference(c.scene, Location::right, a, Category::block));
    CHECK(resolve_reference(mx, Location::right, a, Category::block) ==
          resolve_reference(c.scene, Location::left, a, Category::block));
    CHECK(resolve_reference(my, Location::front, a, Category::block) ==
          resolve_reference(c.scene, Location::back, a, Category::block));
    CHECK(resolve_reference(my, Location::back, a, Category::block) ==
          resolve_reference(c.scene, Location::front, a, Category::block));
  }
}

TEST_CASE("midpoint") {
  const SceneObject a{0, Category::block, "red", {}, 0.2, 0.1};
  const SceneObject b{1, Category::bowl, "red", {}, 0.8, 0.3};
  CHECK(midpoint(a, b).x == doctest::Approx(0.5));
  CHECK(midpoint(a, b).y == doctest::Approx(0.2));
  CHECK(midpoint(a, a).x == a.x);
  CHECK(midpoint(a, a).y == a.y);
  CHECK(midpoint(b, a).x == midpoint(a, b).x);
  CHECK(midpoint(b, a).y == midpoint(a, b).y);
}

TEST_CASE("relevance labels match a slot-enumeration oracle") {
  int mismatches = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Case c = random_case(seed);
    const auto labels = relevance_labels(c.scene, c.ast);

    std::set<int> pick, ref_a, ref_b;
    for (const auto& o : c.scene.objects) {
      if (o.category == Category::block && o.color_name == c.ast.pick_color) pick.insert(o.id);
      if (o.category == Category::block && o.color_name == c.ast.color_a &&
          extremal(c.scene, o, c.ast.loc_a))
        ref_a.insert(o.id);
      if (o.category == Category::bowl && o.color_name == c.ast.color_b &&
          extremal(c.scene, o, c.ast.loc_b))
        ref_b.insert(o.id);
    }
    bool ok = pick.size() == 1 && ref_a.size() == 1 && ref_b.size() == 1;
    if (ok) {
      std::vector<int> want(12, 0);
      want[*pick.begin()] = want[*ref_a.begin()] = want[*ref_b.begin()] = 1;
      ok &= labels.relevance == want;
      ok &= labels.pick_id == *pick.begin();
      const auto& oa = c.scene.objects[*ref_a.begin()];
      const auto& ob = c.scene.objects[*ref_b.begin()];
      ok &= labels.place_target.x == (oa.x + ob.x) / 2 && labels.place_target.y == (oa.y + ob.y) / 2;
      ok &= std::count(labels.relevance.begin(), labels.relevance.end(), 1) == 3;
      ok &= labels.relevant_ids.size() == 3;
    }
    mismatches += !ok;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("placement-only labels drop the pick block") {
  const Case c = random_case(4);
  const auto full = relevance_labels(c.scene, c.ast, RelevanceMode::with_pick);
  const auto place = relevance_labels(c.scene, c.ast, RelevanceMode::placement_only);
  CHECK(std::count(place.relevance.begin(), place.relevance.end(), 1) == 2);
  CHECK(place.relevance[full.pick_id] == 0);
  CHECK(place.place_target.x == full.place_target.x);
  CHECK(parse_relevance_mode("placement_only") == RelevanceMode::placement_only);
  CHECK_THROWS(parse_relevance_mode("both"));
}

TEST_CASE("ambiguous pick") {
  Case c = random_case(8);
  const auto labels = relevance_labels(c.scene, c.ast);
  for (auto& o : c.scene.objects)
    if (o.category == Category::block && o.id != labels.pick_id) {
      o.color_name = c.ast.pick_color;
      break;
    }
  CHECK_THROWS_AS(relevance_labels(c.scene, c.ast), AmbiguousPick);
}

TEST_CASE("judge boundaries") {
  const WorkspaceConfig cfg;
  const Case c = random_case(12);
  const auto labels = relevance_labels(c.scene, c.ast);
  const auto& pick = c.scene.objects[labels.pick_id];
  const Pixel pick_px = project(pick.x, pick.y, cfg);
  const Point2 t = labels.place_target;

  auto v = judge(c.scene, c.ast, pick_px, t, cfg);
  CHECK(v.success());
  CHECK(v.place_error_m == 0);

  const double dir = t.x > 0.5 ? -1 : 1;
  v = judge(c.scene, c.ast, pick_px, {t.x + dir * 0.11, t.y}, cfg);
  CHECK(v.pick_ok);
  CHECK_FALSE(v.place_ok);
  v = judge(c.scene, c.ast, pick_px, {t.x + dir * 0.10, t.y}, cfg);
  CHECK(v.place_ok);
  CHECK(v.success());

  // Pixel at the delta peak of a place map: within half a pixel of the target.
  const Point2 snapped = unproject(project(t, cfg), cfg);
  v = judge(c.scene, c.ast, pick_px, snapped, cfg);
  CHECK(v.success());
  CHECK(v.place_error_m <= 0.5 / cfg.ppm() * std::sqrt(2.0));

  const int other = labels.ref_block_id;
  const auto& o = c.scene.objects[other];
  v = judge(c.scene, c.ast, project(o.x, o.y, cfg), t, cfg);
  CHECK_FALSE(v.pick_ok);
  CHECK_FALSE(v.success());
}
