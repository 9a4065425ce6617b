// Acceptance suite: one PASS/FAIL line per criterion on stdout, details on
// stderr. Exit status is nonzero when any criterion fails.
//
//   acceptance [--work DIR] [--only A1,A2,...] [--reuse]
//
// A5-A7 train the full-size models (about an hour on one core). --reuse keeps
// checkpoints already present in the work directory.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "relmask/errors.hpp"
#include "relmask/gradcheck.hpp"
#include "relmask/pipeline.hpp"
#include "relmask/serialize.hpp"

using namespace relmask;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------------- A1

using GradFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

TensorD away_from_zero(const Shape& s, Rng& rng) {
  TensorD t(s);
  for (Index i = 0; i < t.size(); ++i) {
    const double m = uniform(rng, 0.1, 1.0);
    t[i] = bernoulli(rng, 0.5) ? m : -m;
  }
  return t;
}

// Reduces an op's output through fixed random weights so ops with constant
// sums still produce informative gradients.
GradFn weighted(std::function<Var<double>(const std::vector<Var<double>>&)> op) {
  return [op](Tape<double>& tape, const std::vector<Var<double>>& xs) {
    Var<double> out = op(xs);
    Rng rng(99);
    TensorD w(out.shape());
    for (Index i = 0; i < w.size(); ++i) w[i] = uniform(rng, -1.0, 1.0);
    return sum(mul(out, tape.constant(w)));
  };
}

Outcome a1_gradients() {
  const auto t0 = Clock::now();
  Rng rng(5);
  auto R = [&](Shape s) { return away_from_zero(s, rng); };
  using V = std::vector<Var<double>>;
  const std::vector<Index> ids{2, 0, 2, 1}, cols{1, 3};
  std::vector<std::pair<std::string, std::pair<GradFn, std::vector<TensorD>>>> cases = {
      {"add", {weighted([](const V& v) { return add(v[0], v[1]); }), {R({2, 3, 4}), R({3, 1})}}},
      {"sub", {weighted([](const V& v) { return sub(v[0], v[1]); }), {R({2, 3}), R({2, 3})}}},
      {"mul", {weighted([](const V& v) { return mul(v[0], v[1]); }), {R({4, 1, 2}), R({3, 2})}}},
      {"relu", {weighted([](const V& v) { return relu(v[0]); }), {R({3, 5})}}},
      {"abs", {weighted([](const V& v) { return abs(v[0]); }), {R({3, 5})}}},
      {"scale", {weighted([](const V& v) { return scale(v[0], -2.5); }), {R({4})}}},
      {"add_scalar", {weighted([](const V& v) { return add_scalar(v[0], 1.0); }), {R({4})}}},
      {"matmul", {weighted([](const V& v) { return matmul(v[0], v[1]); }), {R({2, 3, 4}), R({4, 5})}}},
      {"bmm", {weighted([](const V& v) { return matmul(v[0], v[1]); }), {R({2, 3, 4}), R({2, 4, 2})}}},
      {"linear", {weighted([](const V& v) { return linear(v[0], v[1], v[2]); }), {R({2, 3, 4}), R({4, 5}), R({5})}}},
      {"conv2d s1p1", {weighted([](const V& v) { return conv2d(v[0], v[1], v[2], 1, 1); }), {R({2, 2, 5, 6}), R({3, 2, 3, 3}), R({3})}}},
      {"conv2d s2p1", {weighted([](const V& v) { return conv2d(v[0], v[1], v[2], 2, 1); }), {R({2, 2, 5, 6}), R({3, 2, 3, 3}), R({3})}}},
      {"upsample2x", {weighted([](const V& v) { return upsample2x(v[0]); }), {R({1, 2, 3, 2})}}},
      {"concat", {weighted([](const V& v) { return concat<double>({v[0], v[1]}, 1); }), {R({2, 3}), R({2, 2})}}},
      {"slice", {weighted([](const V& v) { return slice(v[0], 1, 1, 2); }), {R({2, 4, 3})}}},
      {"reshape", {weighted([](const V& v) { return reshape(v[0], {3, -1}); }), {R({2, 3, 2})}}},
      {"transpose", {weighted([](const V& v) { return transpose(v[0], {2, 0, 1}); }), {R({2, 3, 4})}}},
      {"layernorm", {weighted([](const V& v) { return layernorm(v[0], v[1], v[2]); }), {R({3, 6}), R({6}), R({6})}}},
      {"softmax", {weighted([](const V& v) { return softmax(v[0], -1); }), {R({3, 5})}}},
      {"log_softmax", {weighted([](const V& v) { return log_softmax(v[0], 1); }), {R({2, 4, 3})}}},
      {"embedding", {weighted([&](const V& v) { return embedding(v[0], std::span<const Index>(ids), Shape{2, 2}); }), {R({3, 4})}}},
      {"gather_rows", {weighted([&](const V& v) { return gather_rows(v[0], std::span<const Index>(cols)); }), {R({2, 4})}}},
      {"sum", {weighted([](const V& v) { return sum(v[0]); }), {R({3, 2})}}},
      {"mean", {weighted([](const V& v) { return mean(v[0]); }), {R({3, 2})}}},
      {"mean axes", {weighted([](const V& v) { return mean(v[0], {0, 2}); }), {R({2, 3, 4})}}},
      {"max", {weighted([](const V& v) { return max(v[0], 1); }), {R({3, 4})}}},
      {"attention", {weighted([](const V& v) { return scaled_dot_attention(v[0], v[1], v[2]); }),
                     {R({2, 3, 4}), R({2, 5, 4}), R({2, 5, 3})}}},
  };
  double worst = 0;
  std::string worst_name;
  for (auto& [name, c] : cases) {
    const double e = gradcheck(c.first, c.second, 1e-5);
    if (e > worst) worst = e, worst_name = name;
  }

  // Reduced full models.
  SSRConfig sc;
  sc.d_model = 8;
  sc.n_layers = 2;
  sc.n_heads = 2;
  sc.mlp_hidden = 8;
  sc.word_dim = 4;
  sc.patch_dim = 4;
  sc.coord_dim = 3;
  sc.type_dim = 2;
  sc.pos_dim = 3;
  sc.head_hidden = 5;
  sc.max_words = 8;
  sc.vocab_size = 10;
  sc.patch_px = 8;
  SSRModel<double> ssr(sc, 4);
  std::vector<SSRInput> ins(2);
  for (auto& in : ins) {
    for (int i = 0; i < 5; ++i) in.words.push_back(static_cast<Index>(uniform_index(rng, 10)));
    for (int j = 0; j < 4; ++j) {
      Image img(8, 8);
      for (auto& b : img.data) b = static_cast<std::uint8_t>(uniform_index(rng, 256));
      in.patches.push_back(img);
      in.coords.push_back({uniform01(rng), uniform01(rng)});
      in.label.push_back(j < 2);
    }
  }
  const auto sb = make_ssr_batch<double>(ins);
  const auto& sp = ssr.params();
  const double ssr_err = gradcheck(
      [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
        ParameterBinding<double> p(tape, sp);
        for (std::size_t i = 0; i < vars.size(); ++i) p.bind(static_cast<int>(i), vars[i]);
        return ssr_loss(ssr.forward(p, sb), sb.labels);
      },
      sp.tensors(), 1e-5, 1e-6);

  AffordConfig ac;
  ac.widths = {2, 3, 4};
  ac.lang_dim = 3;
  ac.max_words = 4;
  ac.vocab_size = 6;
  ac.keypoints = 2;
  ac.keypoint_sigma_m = 0.2;
  AffordModel<double> aff(ac, 2);
  aff.params()[aff.params().size() - 1].fill(0.7);
  Image a(8, 16), b(8, 16);
  for (auto& v : a.data) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  for (auto& v : b.data) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  TensorF att({3, 8, 16});
  for (Index i = 0; i < att.size(); ++i) att[i] = static_cast<float>(uniform01(rng));
  std::vector<AffordSample> samples = {{&a, &att, {1, 2, 3}, {3, 2}, {10, 5}},
                                       {&b, &att, {4, 2, 5}, {0, 7}, {15, 0}}};
  const auto ab = make_afford_batch<double>(samples);
  const auto& ap = aff.params();
  const double aff_err = gradcheck(
      [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
        ParameterBinding<double> p(tape, ap);
        for (std::size_t i = 0; i < vars.size(); ++i) p.bind(static_cast<int>(i), vars[i]);
        return afford_loss(aff.forward(p, ab, 16.0), ab.pick_index, ab.place_index);
      },
      ap.tensors(), 1e-5, 1e-5);

  const double secs = seconds_since(t0);
  const bool pass = worst <= 1e-4 && ssr_err <= 1e-4 && aff_err <= 1e-4 && secs < 300;
  return {pass, std::to_string(cases.size()) + " ops worst " + fmt("%.2e", worst) + " (" + worst_name +
                    "), ssr " + fmt("%.2e", ssr_err) + ", afford " + fmt("%.2e", aff_err) + ", " +
                    fmt("%.1f", secs) + " s"};
}

// ------------------------------------------------------------------- A2

Outcome a2_grammar() {
  const auto t0 = Clock::now();
  std::vector<std::string> colors;
  for (const auto& c : all_colors()) colors.push_back(c.name);
  long n = 0, failures = 0;
  for (const auto& a : colors)
    for (const auto& b : colors)
      for (const auto& x : colors) {
        if (x == a || x == b) continue;
        for (Location la : kLocations)
          for (Location lb : kLocations) {
            const InstructionAST ast{x, la, a, lb, b};
            ++n;
            try {
              failures += !(parse(realize(ast)) == ast);
            } catch (const std::exception&) {
              ++failures;
            }
          }
      }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 10,
          std::to_string(n) + " ASTs, " + std::to_string(failures) + " failures, " + fmt("%.2f", secs) + " s"};
}

// ------------------------------------------------------------------- A3

Outcome a3_oracle() {
  const auto t0 = Clock::now();
  const WorkspaceConfig cfg;
  long checks = 0, mismatches = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const Scene s = sample_episode(77, i, Split::seen, cfg).scene;
    std::set<std::string> present;
    for (const auto& o : s.objects) present.insert(o.color_name);
    for (const auto& color : present)
      for (Category cat : {Category::block, Category::bowl})
        for (Location loc : kLocations) {
          int want = -1;
          double best = 0;
          for (const auto& o : s.objects) {
            if (o.category != cat || o.color_name != color) continue;
            const double key = loc == Location::left    ? o.x
                               : loc == Location::right ? -o.x
                               : loc == Location::front ? o.y
                                                        : -o.y;
            if (want < 0 || key < best) want = o.id, best = key;
          }
          int got = -1;
          try {
            got = resolve_reference(s, loc, color, cat);
          } catch (const NoMatchingObject&) {
          }
          mismatches += got != want;
          ++checks;
        }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30, std::to_string(checks) + " lookups, " +
                                            std::to_string(mismatches) + " mismatches, " +
                                            fmt("%.2f", secs) + " s"};
}

// ------------------------------------------------------------------- A4

Outcome a4_equivariance() {
  SSRModel<float> model(SSRConfig{}, 2);
  Rng rng(9);
  double worst = 0;
  const WorkspaceConfig cfg;
  const Vocabulary vocab;
  for (int trial = 0; trial < 100; ++trial) {
    const Episode ep = sample_episode(91, static_cast<std::uint64_t>(trial), Split::seen, cfg);
    Rng det(static_cast<std::uint64_t>(trial));
    const SSRInput in = make_ssr_input(render(ep.scene, cfg), oracle_detect(ep.scene, cfg, det),
                                       tokenize(ep.instruction, vocab), cfg);
    std::vector<int> perm(in.patches.size());
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    SSRInput pin = in;
    for (std::size_t j = 0; j < perm.size(); ++j) {
      pin.patches[j] = in.patches[perm[j]];
      pin.coords[j] = in.coords[perm[j]];
    }
    const TensorF a = model.scores(make_ssr_batch<float>(std::span<const SSRInput>(&in, 1)));
    const TensorF b = model.scores(make_ssr_batch<float>(std::span<const SSRInput>(&pin, 1)));
    for (std::size_t j = 0; j < perm.size(); ++j)
      worst = std::max(worst, double(std::abs(b[Index(j)] - a[Index(perm[j])])));
  }
  return {worst <= 1e-5, "100 inputs, max deviation " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- A5-A7

struct Trained {
  WorkspaceConfig cfg;
  std::vector<Episode> train, val, test;
  std::optional<SSRModel<float>> ssr;
  std::optional<AffordModel<float>> afford, nomask;
  double ssr_secs = 0, afford_secs = 0, nomask_secs = 0;
};

constexpr std::uint64_t kSeed = 0;
constexpr std::uint64_t kValFirst = std::uint64_t{1} << 32;
constexpr std::uint64_t kTestFirst = std::uint64_t{2} << 32;

TrainOptions options(const fs::path& work, const std::string& name, int batch, std::int64_t steps,
                     double lr, int eval_every) {
  TrainOptions o;
  o.seed = kSeed;
  o.batch = batch;
  o.steps = steps;
  o.lr = lr;
  o.eval_every = eval_every;
  o.out_dir = work;
  o.name = name;
  o.progress = [](const std::string& s) { std::cerr << "  " << s << std::endl; };
  return o;
}

Trained& trained(const fs::path& work, bool reuse) {
  static std::optional<Trained> t;
  if (t) return *t;
  t.emplace();
  const WorkspaceConfig& cfg = t->cfg;
  t->train = sample_episodes(kSeed, 0, 20000, Split::seen, cfg);
  t->val = sample_episodes(kSeed, kValFirst, 100, Split::seen, cfg);
  t->test = sample_episodes(kSeed, kTestFirst, 1000, Split::seen, cfg);
  fs::create_directories(work);

  auto have = [&](const std::string& name) { return reuse && fs::exists(work / (name + "_best.ckpt")); };
  auto t0 = Clock::now();
  if (!have("ssr")) {
    std::cerr << "A5: training SSR on 20000 episodes" << std::endl;
    train_ssr(t->train, t->val, SSRConfig{}, cfg, options(work, "ssr", 32, 5000, 3e-4, 500));
  }
  t->ssr.emplace(load_ssr(work / "ssr_best.ckpt"));
  t->ssr_secs = seconds_since(t0);

  const std::vector<Episode> demos(t->train.begin(), t->train.begin() + 1000);
  t0 = Clock::now();
  if (!have("afford")) {
    std::cerr << "A6: training the affordance net on 1000 demos with masks" << std::endl;
    train_afford(demos, t->val, AffordConfig{}, cfg, true, options(work, "afford", 8, 3000, 1e-3, 250));
  }
  t->afford.emplace(load_afford(work / "afford_best.ckpt"));
  t->afford_secs = seconds_since(t0);

  t0 = Clock::now();
  if (!have("afford_nomask")) {
    std::cerr << "A7: training the affordance net on 1000 demos without masks" << std::endl;
    train_afford(demos, t->val, AffordConfig{}, cfg, false,
                 options(work, "afford_nomask", 8, 3000, 1e-3, 250));
  }
  t->nomask.emplace(load_afford(work / "afford_nomask_best.ckpt"));
  t->nomask_secs = seconds_since(t0);
  return *t;
}

Outcome a5_ssr(Trained& t) {
  const double acc = ssr_selection_accuracy(*t.ssr, t.test, t.cfg);
  return {acc >= 0.90 && t.ssr_secs <= 3600,
          "exact-set accuracy " + fmt("%.3f", acc) + " on 1000 held-out episodes (need >= 0.90), trained in " +
              fmt("%.0f", t.ssr_secs) + " s"};
}

std::map<AgentMode, AgentMetrics> eval_all(Trained& t) {
  static std::map<AgentMode, AgentMetrics> cache;
  if (!cache.empty()) return cache;
  const std::vector<Episode> test(t.test.begin(), t.test.begin() + 100);
  const Models models{&*t.ssr, &*t.afford, &*t.nomask};
  const std::vector<AgentMode> agents(std::begin(kAllAgentModes), std::end(kAllAgentModes));
  for (const auto& [mode, m] : evaluate(test, agents, models, t.cfg)) {
    cache[mode] = m;
    std::cerr << "  " << agent_mode_name(mode) << " " << metrics_to_json(m).dump() << std::endl;
  }
  return cache;
}

Outcome a6_oracle_mask(Trained& t) {
  const auto m = eval_all(t);
  const double s = m.at(AgentMode::oracle_mask).success_rate;
  return {s >= 0.50 && t.afford_secs <= 8 * 3600,
          "oracle_mask success " + fmt("%.2f", s) + " on 100 test episodes (need >= 0.50), trained in " +
              fmt("%.0f", t.afford_secs) + " s"};
}

Outcome a7_trend(Trained& t) {
  const auto m = eval_all(t);
  const double none = m.at(AgentMode::no_mask).success_rate;
  const double oracle = m.at(AgentMode::oracle_mask).success_rate;
  const double ssr = m.at(AgentMode::ssr_oracle_det).success_rate;
  const double noisy = m.at(AgentMode::ssr_noisy_det).success_rate;
  const bool pass = none < ssr && ssr <= oracle && none <= 0.10 && noisy <= ssr;
  return {pass, "no_mask " + fmt("%.2f", none) + " < ssr_oracle_det " + fmt("%.2f", ssr) +
                    " <= oracle_mask " + fmt("%.2f", oracle) + "; ssr_noisy_det " + fmt("%.2f", noisy) +
                    " <= ssr_oracle_det; no_mask <= 0.10"};
}

// ------------------------------------------------------------------- A8

Outcome a8_judge() {
  const WorkspaceConfig cfg;
  const double half = 0.5 / cfg.ppm();
  int n = 0, ok = 0;
  double worst_axis = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const Episode ep = sample_episode(55, i, Split::seen, cfg);
    const Point2 t = ep.labels.place_target;
    std::vector<float> q(static_cast<std::size_t>(cfg.height_px) * cfg.width_px, 0.0f);
    const Pixel peak = project(t, cfg);
    q[static_cast<std::size_t>(peak.v) * cfg.width_px + peak.u] = 1.0f;
    const Point2 place = unproject(decode(std::span<const float>(q), cfg.width_px), cfg);
    const SuccessVerdict v = judge(ep.scene, ep.ast, ep.gt_pick, place, cfg);
    worst_axis = std::max({worst_axis, std::abs(place.x - t.x), std::abs(place.y - t.y)});
    bool good = v.success() && std::abs(place.x - t.x) <= half && std::abs(place.y - t.y) <= half;
    // Offsets along whichever x direction stays on the table.
    const double dir = t.x > 0.5 ? -1 : 1;
    good = good && !judge(ep.scene, ep.ast, ep.gt_pick, {t.x + dir * 0.11, t.y}, cfg).place_ok;
    good = good && judge(ep.scene, ep.ast, ep.gt_pick, {t.x + dir * 0.10, t.y}, cfg).success();
    ok += good;
    ++n;
  }
  return {ok == n, std::to_string(ok) + "/" + std::to_string(n) + " episodes; worst per-axis error " +
                       fmt("%.5f", worst_axis) + " m (bound " + fmt("%.5f", half) + ")"};
}

// ------------------------------------------------------------------- A9

int run(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome a9_determinism(const fs::path& work) {
  const std::string cli = RELMASK_CLI;
  const fs::path root = work / "a9";
  fs::remove_all(root);
  auto pipeline = [&](const fs::path& dir) {
    const std::string d = " --data " + (dir / "ds").string(), o = " --out " + (dir / "ckpt").string();
    int rc = run(cli + " gen --out " + (dir / "ds").string() + " --n-train 64 --n-val 8 --n-test 8 --seed 4");
    rc |= run(cli + " train-ssr" + d + o + " --steps 20 --batch 8 --eval-every 10 --d-model 32 --layers 2");
    rc |= run(cli + " train-afford" + d + o + " --steps 6 --batch 2 --eval-every 3 --n-val 4");
    rc |= run(cli + " train-afford" + d + o + " --name afford_nomask --no-mask --steps 6 --batch 2 --eval-every 3 --n-val 4");
    const fs::path c = dir / "ckpt";
    rc |= run(cli + " eval" + d + " --n 8 --ssr " + (c / "ssr_best.ckpt").string() + " --afford " +
              (c / "afford_best.ckpt").string() + " --afford-nomask " + (c / "afford_nomask_best.ckpt").string() +
              " --report " + (dir / "metrics.json").string());
    return rc;
  };
  if (pipeline(root / "a") != 0 || pipeline(root / "b") != 0) return {false, "a pipeline command failed"};
  const std::vector<fs::path> files = {"ds/train/manifest.jsonl", "ds/val/manifest.jsonl", "ds/test/manifest.jsonl",
                                       "ds/config.json",          "ckpt/ssr_log.csv",      "ckpt/afford_log.csv",
                                       "ckpt/afford_nomask_log.csv", "ckpt/ssr_best.ckpt", "ckpt/afford_best.ckpt",
                                       "metrics.json"};
  std::string differ;
  for (const auto& f : files) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    if (a.empty() || a != b) differ += " " + f.string();
  }
  fs::remove_all(root);
  return {differ.empty(), differ.empty() ? std::to_string(files.size()) + " artifacts byte-identical across reruns"
                                         : "differ or missing:" + differ};
}

// ------------------------------------------------------------------ A10

Outcome a10_losses() {
  const WorkspaceConfig cfg;
  const AffordModel<float> model(AffordConfig{}, 0);
  const Vocabulary vocab;
  const auto eps = sample_episodes(3, 0, 8, Split::seen, cfg);
  std::vector<Image> imgs;
  std::vector<TensorF> atts(eps.size());
  std::vector<AffordSample> samples;
  imgs.reserve(eps.size());
  for (std::size_t k = 0; k < eps.size(); ++k) {
    imgs.push_back(render(eps[k].scene, cfg));
    samples.push_back(afford_sample(eps[k], imgs.back(), atts[k], vocab, cfg, true, AttentionStyle::rgb_product));
  }
  const auto batch = make_afford_batch<float>(samples);
  Tape<float> tape;
  ParameterBinding<float> p(tape, model.params());
  const double loss = afford_loss(model.forward(p, batch, cfg.ppm()), batch.pick_index, batch.place_index)
                          .value()
                          .item();
  const double want = 2 * std::log(double(cfg.height_px) * cfg.width_px);

  Rng rng(8);
  double lo = 1e9, hi = -1e9;
  for (int i = 0; i < 10000; ++i) {
    TensorD s({1, 12}), y({1, 12});
    for (Index j = 0; j < 12; ++j) s[j] = 3.0 * normal01(rng);
    std::vector<int> idx(12);
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx, rng);
    for (int k = 0; k < 3; ++k) y[idx[k]] = 1;
    Tape<double> t2;
    const double l = ssr_loss(t2.constant(s), y).value().item();
    lo = std::min(lo, l);
    hi = std::max(hi, l);
  }
  const bool pass = std::abs(loss - want) <= 0.1 * want && lo >= 0 && hi <= 2;
  return {pass, "initial afford loss " + fmt("%.4f", loss) + " vs 2 log(HW) = " + fmt("%.4f", want) +
                    "; ssr_loss range [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) + "] over 1e4 inputs"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "relmask_acceptance";
  std::set<std::string> only;
  bool reuse = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--reuse") {
      reuse = true;
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(item);
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only A1,A2,...] [--reuse]\n";
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1", a1_gradients},
      {"A2", a2_grammar},
      {"A3", a3_oracle},
      {"A4", a4_equivariance},
      {"A5", [&] { return a5_ssr(trained(work, reuse)); }},
      {"A6", [&] { return a6_oracle_mask(trained(work, reuse)); }},
      {"A7", [&] { return a7_trend(trained(work, reuse)); }},
      {"A8", a8_judge},
      {"A9", [&] { return a9_determinism(work); }},
      {"A10", a10_losses},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
