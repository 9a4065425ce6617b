// relmask: dataset generation, training, evaluation, inference and heatmaps.
//
// Every subcommand accepts --config FILE with `key = value` lines (`#`
// comments). Keys are flag names without the leading dashes; flags given on
// the command line override the file. stdout carries JSON payloads (and the
// eval table); progress and diagnostics go to stderr.
//
// Exit codes: 0 ok, 1 runtime or I/O failure, 2 invalid config, 3 instruction
// parse error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "relmask/errors.hpp"
#include "relmask/heatmap.hpp"
#include "relmask/pipeline.hpp"

using namespace relmask;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kIoGroup = "Paths";
constexpr std::uint64_t kValOffset = std::uint64_t{1} << 32;
constexpr std::uint64_t kTestOffset = std::uint64_t{2} << 32;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> read_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    args.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
  }
  return args;
}

// Moves `--config FILE` out of argv and splices the file's settings in right
// after the subcommand name, so later command-line flags take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> in(argv + 1, argv + argc), rest;
  std::optional<std::string> file;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == "--config") {
      if (i + 1 >= in.size()) throw ConfigError("--config needs a file");
      file = in[++i];
    } else if (in[i].rfind("--config=", 0) == 0) {
      file = in[i].substr(9);
    } else {
      rest.push_back(in[i]);
    }
  }
  if (!file) return rest;
  const auto extra = read_config_file(*file);
  std::vector<std::string> out;
  if (rest.empty() || rest[0].rfind("-", 0) == 0)
    throw ConfigError("--config must follow a subcommand");
  out.push_back(rest[0]);
  out.insert(out.end(), extra.begin(), extra.end());
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Resolved settings of a subcommand, excluding paths and switches that do not
// change results.
json resolved_config(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "force" || name == "resume" || opt->get_group() == kIoGroup)
      continue;
    if (opt->get_expected_max() == 0)
      j[name] = opt->count() > 0 && opt->as<bool>();
    else if (opt->count() > 0)
      j[name] = opt->as<std::string>();
    else
      j[name] = opt->get_default_str();
  }
  return j;
}

json provenance(const CLI::App& sub) {
  const json cfg = resolved_config(sub);
  return {{"command", sub.get_name()}, {"config", cfg}, {"config_hash", hex(fnv1a(cfg.dump()))}};
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

void log(const std::string& msg) { std::cerr << msg << std::endl; }

template <typename F>
auto as_config(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

WorkspaceConfig workspace(bool full_res) {
  return full_res ? WorkspaceConfig::full_resolution() : WorkspaceConfig{};
}

// ------------------------------------------------------------------ dataset

struct DatasetInfo {
  WorkspaceConfig ws;
  RelevanceMode mode = RelevanceMode::with_pick;
  json meta;
};

DatasetInfo open_dataset(const fs::path& dir) {
  const fs::path meta = dir / "config.json";
  std::ifstream is(meta);
  if (!is) throw std::runtime_error("no dataset at " + dir.string() + " (missing config.json)");
  DatasetInfo info;
  try {
    is >> info.meta;
    const json& c = info.meta.at("config");
    info.ws = workspace(c.at("full-res").get<bool>());
    info.mode = parse_relevance_mode(c.at("relevance").get<std::string>());
  } catch (const std::exception& e) {
    throw std::runtime_error("bad dataset config " + meta.string() + ": " + e.what());
  }
  return info;
}

std::vector<Episode> load_split(const fs::path& dir, const DatasetInfo& info, const char* split,
                                std::size_t limit = 0) {
  auto eps = read_dataset(dir / split, info.ws, info.mode);
  if (limit > 0 && eps.size() > limit) eps.resize(limit);
  if (eps.empty()) throw std::runtime_error(std::string("empty ") + split + " split in " + dir.string());
  return eps;
}

struct GenArgs {
  fs::path out;
  std::uint64_t seed = 0;
  std::string split = "seen";
  std::uint64_t n_train = 1000, n_val = 100, n_test = 100;
  bool full_res = false, no_images = false, force = false;
  std::string relevance = "with_pick";
};

int cmd_gen(const GenArgs& a, const CLI::App& sub) {
  const Split split = as_config([&] { return parse_split(a.split); });
  const RelevanceMode mode = as_config([&] { return parse_relevance_mode(a.relevance); });
  if (a.n_train > kValOffset || a.n_val > kValOffset || a.n_test > kValOffset)
    throw ConfigError("split sizes must stay below 2^32");
  const WorkspaceConfig ws = workspace(a.full_res);
  const char* names[] = {"train", "val", "test"};
  bool overlap = fs::exists(a.out / "config.json");
  for (const char* n : names) overlap = overlap || fs::exists(a.out / n);
  if (overlap && !a.force)
    throw ConfigError(a.out.string() + " already holds a dataset; pass --force to overwrite");
  for (const char* n : names) fs::remove_all(a.out / n);

  const json prov = provenance(sub);
  const std::uint64_t offsets[] = {0, kValOffset, kTestOffset};
  const std::uint64_t counts[] = {a.n_train, a.n_val, a.n_test};
  json summary = {{"out", a.out.string()}, {"config_hash", prov["config_hash"]}};
  for (int k = 0; k < 3; ++k) {
    log("gen: " + std::string(names[k]) + " " + std::to_string(counts[k]) + " episodes");
    const auto eps = sample_episodes(a.seed, offsets[k], counts[k], split, ws, mode);
    write_dataset(a.out / names[k], eps, ws, !a.no_images);
    summary[names[k]] = counts[k];
  }
  std::ofstream os(a.out / "config.json");
  os << prov.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + (a.out / "config.json").string());
  summary["total"] = a.n_train + a.n_val + a.n_test;
  emit(summary);
  return 0;
}

// ----------------------------------------------------------------- training

struct TrainArgs {
  fs::path data, out;
  std::string name;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  int batch = 0, eval_every = 0;
  double lr = 0;
  std::size_t n_samples = 0, n_val = 100;
  bool resume = false;
};

TrainOptions train_options(const TrainArgs& a, const CLI::App& sub, const DatasetInfo& info) {
  if (a.steps <= 0 || a.batch <= 0 || a.eval_every <= 0 || !(a.lr > 0))
    throw ConfigError("steps, batch, eval-every and lr must be positive");
  TrainOptions o;
  o.seed = a.seed;
  o.batch = a.batch;
  o.steps = a.steps;
  o.lr = a.lr;
  o.eval_every = a.eval_every;
  o.out_dir = a.out;
  o.name = a.name;
  o.resume = a.resume;
  o.progress = [](const std::string& s) { log(s); };
  o.extra = provenance(sub);
  o.extra["dataset_hash"] = info.meta.value("config_hash", "");
  o.extra["full_res"] = info.ws.width_px != WorkspaceConfig{}.width_px;
  return o;
}

json train_summary(const TrainResult& r, const TrainOptions& o) {
  return {{"best_metric", r.best_metric},
          {"best_step", r.best_step},
          {"final_loss", r.log.empty() ? 0.0 : r.log.back().loss},
          {"checkpoint", (o.out_dir / (o.name + "_best.ckpt")).string()},
          {"log", (o.out_dir / (o.name + "_log.csv")).string()},
          {"config_hash", o.extra["config_hash"]}};
}

struct SsrArgs {
  bool paper_arch = false;
  int layers = 4, d_model = 128, heads = 4;
};

int cmd_train_ssr(const TrainArgs& a, const SsrArgs& m, const CLI::App& sub) {
  const DatasetInfo info = open_dataset(a.data);
  SSRConfig cfg;
  cfg.n_layers = m.paper_arch ? 8 : m.layers;
  cfg.d_model = m.d_model;
  cfg.n_heads = m.heads;
  cfg.mlp_hidden = 2 * m.d_model;
  cfg.patch_px = info.ws.patch_px;
  as_config([&] { cfg.validate(); return 0; });
  const TrainOptions opts = train_options(a, sub, info);
  const auto train = load_split(a.data, info, "train", a.n_samples);
  const auto val = load_split(a.data, info, "val", a.n_val);
  log("train-ssr: " + std::to_string(train.size()) + " train / " + std::to_string(val.size()) +
      " val episodes, " + std::to_string(cfg.n_layers) + " layers");
  emit(train_summary(train_ssr(train, val, cfg, info.ws, opts), opts));
  return 0;
}

struct AffordArgs {
  int keypoints = 4, lang_dim = 64;
  std::string attention = "rgb_product";
  bool no_mask = false;
};

int cmd_train_afford(const TrainArgs& a, const AffordArgs& m, const CLI::App& sub) {
  const DatasetInfo info = open_dataset(a.data);
  AffordConfig cfg;
  cfg.keypoints = m.keypoints;
  cfg.lang_dim = m.lang_dim;
  cfg.attention = as_config([&] { return parse_attention_style(m.attention); });
  as_config([&] { cfg.validate(); return 0; });
  const TrainOptions opts = train_options(a, sub, info);
  const auto train = load_split(a.data, info, "train", a.n_samples);
  const auto val = load_split(a.data, info, "val", a.n_val);
  log("train-afford: " + std::to_string(train.size()) + " demos, " +
      (m.no_mask ? "empty attention maps" : "ground-truth attention maps"));
  emit(train_summary(train_afford(train, val, cfg, info.ws, !m.no_mask, opts), opts));
  return 0;
}

// --------------------------------------------------------------- inference

struct ModelPaths {
  fs::path ssr, afford, afford_nomask;
};

struct LoadedModels {
  std::optional<SSRModel<float>> ssr;
  std::optional<AffordModel<float>> afford, nomask;
  Models view() const {
    return {ssr ? &*ssr : nullptr, afford ? &*afford : nullptr, nomask ? &*nomask : nullptr};
  }
};

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw std::runtime_error("missing checkpoint: pass --" + what);
  if (!fs::exists(p)) throw std::runtime_error("checkpoint not found: " + p.string());
}

LoadedModels load_models(const ModelPaths& paths, const std::vector<AgentMode>& modes) {
  LoadedModels m;
  for (AgentMode mode : modes) {
    const bool ssr = mode == AgentMode::ssr_oracle_det || mode == AgentMode::ssr_noisy_det;
    if (ssr && !m.ssr) {
      require_file(paths.ssr, "ssr");
      m.ssr.emplace(load_ssr(paths.ssr));
    }
    if (mode != AgentMode::no_mask && !m.afford) {
      require_file(paths.afford, "afford");
      m.afford.emplace(load_afford(paths.afford));
    }
    if (mode == AgentMode::no_mask && !m.nomask) {
      require_file(paths.afford_nomask, "afford-nomask");
      m.nomask.emplace(load_afford(paths.afford_nomask));
    }
  }
  return m;
}

std::vector<AgentMode> parse_agents(const std::vector<std::string>& names) {
  std::vector<AgentMode> out;
  for (const auto& n : names) out.push_back(as_config([&] { return parse_agent_mode(n); }));
  if (out.empty()) throw ConfigError("no agents requested");
  return out;
}

struct EvalArgs {
  fs::path data, report;
  ModelPaths models;
  std::vector<std::string> agents;
  std::size_t n = 100;
  double sigma_px = 2.0, p_miss = 0.05;
};

int cmd_eval(const EvalArgs& a, const CLI::App& sub) {
  const auto agents = parse_agents(a.agents);
  const NoiseConfig noise{a.sigma_px, a.p_miss};
  if (noise.sigma_px < 0 || noise.p_miss < 0 || noise.p_miss >= 1)
    throw ConfigError("need sigma-px >= 0 and p-miss in [0, 1)");
  const DatasetInfo info = open_dataset(a.data);
  const LoadedModels models = load_models(a.models, agents);
  const auto test = load_split(a.data, info, "test", a.n);
  log("eval: " + std::to_string(test.size()) + " test episodes");
  const auto results = evaluate(test, agents, models.view(), info.ws, noise);

  json report = provenance(sub);
  report["dataset_hash"] = info.meta.value("config_hash", "");
  report["agents"] = json::object();
  for (const auto& [mode, m] : results) report["agents"][agent_mode_name(mode)] = metrics_to_json(m);
  if (!a.report.empty()) {
    std::ofstream os(a.report);
    os << report.dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write " + a.report.string());
  }

  auto opt = [](const std::optional<double>& v) {
    char buf[16];
    if (!v) return std::string("       -");
    std::snprintf(buf, sizeof buf, "%8.3f", *v);
    return std::string(buf);
  };
  std::printf("%-16s %5s %8s %8s %9s %9s %8s %8s\n", "agent", "n", "success", "pick",
              "err_mean", "err_med", "sel_P", "sel_R");
  for (const auto& [mode, m] : results)
    std::printf("%-16s %5d %8.3f %8.3f %9.4f %9.4f %s %s\n", agent_mode_name(mode), m.n,
                m.success_rate, m.pick_rate, m.place_err_mean_m, m.place_err_median_m,
                opt(m.selection_precision).c_str(), opt(m.selection_recall).c_str());
  std::fflush(stdout);
  return 0;
}

struct InferArgs {
  fs::path scene;
  std::string instruction, mode = "ssr_oracle_det", detector;
  ModelPaths models;
  std::uint64_t seed = 0;
  bool full_res = false;
  double sigma_px = 2.0, p_miss = 0.05;
};

Scene read_scene_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read scene " + path.string());
  try {
    json j = json::parse(is);
    return scene_from_json(j.contains("scene") ? j.at("scene") : j);
  } catch (const json::exception& e) {
    throw std::runtime_error("scene " + path.string() + ": " + e.what());
  }
}

json pose_json(const Pose& p) { return {{"x", p.x}, {"y", p.y}, {"z", p.z}}; }

struct Prepared {
  Image image;
  std::vector<Mask> masks;
  std::vector<int> relevant;
  std::vector<Detection> dets;
};

// Builds everything run_inference might need for one scene. Ground-truth
// relevance is derived only for the oracle_mask agent.
Prepared prepare(const Scene& scene, const std::string& instruction, AgentMode mode,
                 const WorkspaceConfig& ws, Rng& rng, const std::string& detector,
                 const NoiseConfig& noise) {
  Prepared p{render(scene, ws), segmentation(scene, ws), {}, {}};
  if (mode == AgentMode::oracle_mask)
    p.relevant = relevance_labels(scene, parse(instruction), RelevanceMode::with_pick).relevant_ids;
  const std::string det = detector.empty()
                              ? (mode == AgentMode::ssr_noisy_det ? "noisy" : "oracle")
                              : detector;
  if (det == "oracle")
    p.dets = oracle_detect(scene, ws, rng);
  else if (det == "noisy")
    p.dets = noisy_detect(scene, ws, rng, noise);
  else
    throw ConfigError("detector must be oracle or noisy");
  return p;
}

int cmd_infer(const InferArgs& a) {
  const AgentMode mode = as_config([&] { return parse_agent_mode(a.mode); });
  const WorkspaceConfig ws = workspace(a.full_res);
  try {
    parse(a.instruction);
  } catch (const std::invalid_argument& e) {
    throw ParseFailure(e.what());
  }
  const Scene scene = read_scene_file(a.scene);
  const LoadedModels models = load_models(a.models, {mode});
  Rng rng(a.seed);
  const Prepared p = prepare(scene, a.instruction, mode, ws, rng, a.detector, {a.sigma_px, a.p_miss});
  InferenceRequest req{&p.image, a.instruction, &p.dets, &p.masks, &p.relevant};
  const InferenceResult r = run_inference(req, mode, models.view(), Vocabulary{}, ws);
  emit({{"mode", agent_mode_name(mode)},
        {"pick", pose_json(r.pick)},
        {"place", pose_json(r.place)},
        {"pick_px", {r.pick_px.u, r.pick_px.v}},
        {"place_px", {r.place_px.u, r.place_px.v}},
        {"selected_ids", r.selected_objects},
        {"scores", r.scores}});
  return 0;
}

struct RenderArgs {
  fs::path data, out;
  std::uint64_t index = 0, seed = 0;
  std::string split = "seen", mode = "oracle_mask";
  ModelPaths models;
  bool full_res = false;
};

int cmd_render(const RenderArgs& a) {
  const AgentMode mode = as_config([&] { return parse_agent_mode(a.mode); });
  Episode ep;
  WorkspaceConfig ws = workspace(a.full_res);
  if (!a.data.empty()) {
    const DatasetInfo info = open_dataset(a.data);
    ws = info.ws;
    const auto test = read_dataset(a.data / "test", ws, info.mode);
    auto it = std::find_if(test.begin(), test.end(), [&](const Episode& e) {
      return e.index == kTestOffset + a.index || e.index == a.index;
    });
    if (it == test.end()) throw std::runtime_error("no test episode with index " + std::to_string(a.index));
    ep = *it;
  } else {
    ep = sample_episode(a.seed, a.index, as_config([&] { return parse_split(a.split); }), ws);
  }
  const LoadedModels models = load_models(a.models, {mode});
  Rng rng(mix_seed(ep.seed, 1));
  const Prepared p = prepare(ep.scene, ep.instruction, mode, ws, rng, "", NoiseConfig{});
  InferenceRequest req{&p.image, ep.instruction, &p.dets, &p.masks, &p.relevant};
  const InferenceResult r = run_inference(req, mode, models.view(), Vocabulary{}, ws);

  fs::create_directories(a.out);
  const Index plane = static_cast<Index>(ws.height_px) * ws.width_px;
  Image q_pick = render_heatmap(std::span<const float>(r.qmaps.ptr(), plane), ws.height_px, ws.width_px);
  Image q_place = render_heatmap(std::span<const float>(r.qmaps.ptr() + plane, plane), ws.height_px, ws.width_px);
  draw_marker(q_pick, r.pick_px);
  draw_marker(q_place, r.place_px);
  const json files = {{"scene", (a.out / "scene.ppm").string()},
                      {"attention", (a.out / "attention.ppm").string()},
                      {"q_pick", (a.out / "q_pick.ppm").string()},
                      {"q_place", (a.out / "q_place.ppm").string()}};
  write_ppm(files["scene"].get<std::string>(), p.image);
  write_ppm(files["attention"].get<std::string>(), attention_image(r.attention));
  write_ppm(files["q_pick"].get<std::string>(), q_pick);
  write_ppm(files["q_place"].get<std::string>(), q_place);
  emit({{"episode", ep.index},
        {"instruction", ep.instruction},
        {"mode", agent_mode_name(mode)},
        {"pick_px", {r.pick_px.u, r.pick_px.v}},
        {"place_px", {r.place_px.u, r.place_px.v}},
        {"files", files}});
  return 0;
}

void add_models(CLI::App* sub, ModelPaths& m) {
  sub->add_option("--ssr", m.ssr, "SSR checkpoint")->group(kIoGroup);
  sub->add_option("--afford", m.afford, "affordance checkpoint trained with masks")->group(kIoGroup);
  sub->add_option("--afford-nomask", m.afford_nomask, "affordance checkpoint trained without masks")
      ->group(kIoGroup);
}

void add_train(CLI::App* sub, TrainArgs& t, const std::string& name, std::int64_t steps, int batch,
               double lr, int eval_every, std::size_t n_samples) {
  t.name = name;
  t.steps = steps;
  t.batch = batch;
  t.lr = lr;
  t.eval_every = eval_every;
  t.n_samples = n_samples;
  sub->add_option("--data", t.data, "dataset directory")->required()->group(kIoGroup);
  sub->add_option("--out", t.out, "output directory")->required()->group(kIoGroup);
  sub->add_option("--name", t.name, "checkpoint and log file stem")->group(kIoGroup);
  sub->add_option("--seed", t.seed, "initialization and shuffling seed");
  sub->add_option("--steps", t.steps, "optimizer steps");
  sub->add_option("--batch", t.batch, "batch size");
  sub->add_option("--lr", t.lr, "Adam learning rate");
  sub->add_option("--eval-every", t.eval_every, "validation period in steps");
  sub->add_option("--n-samples", t.n_samples, "use the first N training episodes (0 = all)");
  sub->add_option("--n-val", t.n_val, "validation episodes");
  sub->add_flag("--resume", t.resume, "continue from <name>_last.ckpt");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relmask: spatial-relation masks for language-conditioned pick and place", "relmask"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate train/val/test episodes");
  g->add_option("--out", gen.out, "dataset directory")->required()->group(kIoGroup);
  g->add_option("--seed", gen.seed, "base seed");
  g->add_option("--split", gen.split, "color split: seen or unseen");
  g->add_option("--n-train", gen.n_train, "training episodes");
  g->add_option("--n-val", gen.n_val, "validation episodes");
  g->add_option("--n-test", gen.n_test, "test episodes");
  g->add_option("--relevance", gen.relevance, "with_pick or placement_only");
  g->add_flag("--full-res", gen.full_res, "160x320 images with 50 px patches");
  g->add_flag("--no-images", gen.no_images, "write manifests only; images are re-rendered on load");
  g->add_flag("--force", gen.force, "overwrite an existing dataset");

  TrainArgs ts;
  SsrArgs sm;
  auto* s = app.add_subcommand("train-ssr", "train the spatial-semantic reasoner");
  add_train(s, ts, "ssr", 5000, 32, 3e-4, 500, 0);
  s->add_flag("--paper-arch", sm.paper_arch, "8 transformer layers");
  s->add_option("--layers", sm.layers, "transformer layers");
  s->add_option("--d-model", sm.d_model, "token width");
  s->add_option("--heads", sm.heads, "attention heads");

  TrainArgs ta;
  AffordArgs am;
  auto* t = app.add_subcommand("train-afford", "train the affordance network");
  add_train(t, ta, "afford", 3000, 8, 1e-3, 250, 1000);
  t->add_option("--keypoints", am.keypoints, "place keypoints (0 disables the term)");
  t->add_option("--lang-dim", am.lang_dim, "language vector width");
  t->add_option("--attention", am.attention, "rgb_product or binary");
  t->add_flag("--no-mask", am.no_mask, "train on empty attention maps");

  EvalArgs ev;
  ev.agents = {"no_mask", "oracle_mask", "ssr_oracle_det", "ssr_noisy_det"};
  auto* e = app.add_subcommand("eval", "evaluate agents on the test split");
  e->add_option("--data", ev.data, "dataset directory")->required()->group(kIoGroup);
  e->add_option("--report", ev.report, "metrics JSON output")->group(kIoGroup);
  add_models(e, ev.models);
  e->add_option("--agents", ev.agents, "agent modes")->delimiter(',');
  e->add_option("--n", ev.n, "test episodes");
  e->add_option("--sigma-px", ev.sigma_px, "noisy detector center jitter");
  e->add_option("--p-miss", ev.p_miss, "noisy detector miss probability");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "run one instruction on a scene file");
  i->add_option("--scene", inf.scene, "scene or episode JSON")->required()->group(kIoGroup);
  i->add_option("--instruction", inf.instruction, "template instruction")->required();
  i->add_option("--mode", inf.mode, "agent mode");
  i->add_option("--detector", inf.detector, "oracle or noisy (default follows the mode)");
  i->add_option("--seed", inf.seed, "detector seed");
  i->add_option("--sigma-px", inf.sigma_px, "noisy detector center jitter");
  i->add_option("--p-miss", inf.p_miss, "noisy detector miss probability");
  i->add_flag("--full-res", inf.full_res, "160x320 images");
  add_models(i, inf.models);

  RenderArgs rn;
  auto* r = app.add_subcommand("render", "write scene, attention and affordance heatmaps");
  r->add_option("--out", rn.out, "output directory")->required()->group(kIoGroup);
  r->add_option("--data", rn.data, "dataset directory; picks a test episode")->group(kIoGroup);
  r->add_option("--index", rn.index, "episode index");
  r->add_option("--seed", rn.seed, "base seed when no dataset is given");
  r->add_option("--split", rn.split, "color split when no dataset is given");
  r->add_option("--mode", rn.mode, "agent mode");
  r->add_flag("--full-res", rn.full_res, "160x320 images");
  add_models(r, rn.models);

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp& ex) {
      return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
      return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
      app.exit(ex);
      return 2;
    }
    if (*g) return cmd_gen(gen, *g);
    if (*s) return cmd_train_ssr(ts, sm, *s);
    if (*t) return cmd_train_afford(ta, am, *t);
    if (*e) return cmd_eval(ev, *e);
    if (*i) return cmd_infer(inf);
    if (*r) return cmd_render(rn);
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << std::endl;
    return 2;
  } catch (const ParseFailure& ex) {
    std::cerr << "instruction error: " << ex.what() << std::endl;
    return 3;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << std::endl;
    return 1;
  }
  return 1;
}
