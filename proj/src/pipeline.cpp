#include "relmask/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "relmask/errors.hpp"
#include "relmask/serialize.hpp"

namespace relmask {

namespace fs = std::filesystem;

const char* split_name(Split s) { return s == Split::seen ? "seen" : "unseen"; }

Split parse_split(const std::string& s) {
  if (s == "seen") return Split::seen;
  if (s == "unseen") return Split::unseen;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<std::string> color_pool(Split s) {
  std::vector<std::string> out;
  for (const auto& c : s == Split::seen ? seen_colors() : unseen_colors()) out.push_back(c.name);
  return out;
}

namespace {

Pixel object_pixel(const SceneObject& o, const WorkspaceConfig& cfg) { return project(o.x, o.y, cfg); }

void fill_derived(Episode& ep, const WorkspaceConfig& cfg, RelevanceMode mode) {
  ep.labels = relevance_labels(ep.scene, ep.ast, mode);
  ep.gt_pick = object_pixel(ep.scene.objects[ep.labels.pick_id], cfg);
  ep.gt_place = project(ep.labels.place_target, cfg);
  ep.patch_centers.clear();
  for (const auto& o : ep.scene.objects) ep.patch_centers.push_back(object_pixel(o, cfg));
}

// Independent generator streams derived from an episode seed.
enum Stream : std::uint64_t { kDetectOrder = 1, kDetectNoise = 2, kTrainOrder = 16 };

Rng stream(std::uint64_t seed, std::uint64_t tag) { return Rng(mix_seed(seed, tag)); }

}  // namespace

Episode sample_episode(std::uint64_t base_seed, std::uint64_t index, Split split,
                       const WorkspaceConfig& cfg, RelevanceMode mode) {
  Episode ep;
  ep.index = index;
  ep.seed = mix_seed(base_seed, index);
  ep.split = split;
  Rng rng(ep.seed);
  const auto pool = color_pool(split);
  ep.ast = sample_ast(rng, pool);
  ep.instruction = realize(ep.ast);
  const auto colors =
      sample_color_assignment(ep.ast.color_a, ep.ast.color_b, ep.ast.pick_color, pool, rng);
  ep.scene = place_objects(colors, cfg, rng, ep.seed);
  fill_derived(ep, cfg, mode);
  return ep;
}

std::vector<Episode> sample_episodes(std::uint64_t base_seed, std::uint64_t first,
                                     std::uint64_t count, Split split,
                                     const WorkspaceConfig& cfg, RelevanceMode mode) {
  std::vector<Episode> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i)
    out.push_back(sample_episode(base_seed, first + i, split, cfg, mode));
  return out;
}

namespace {

std::string image_name(std::uint64_t index) { return "images/ep_" + std::to_string(index) + ".ppm"; }

std::string mask_name(std::uint64_t index, int obj) {
  return "masks/ep_" + std::to_string(index) + "_" + std::to_string(obj) + ".pbm";
}

nlohmann::json pixel_json(Pixel p) { return {p.u, p.v}; }

}  // namespace

nlohmann::json episode_to_json(const Episode& ep) {
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& p : ep.patch_centers) centers.push_back(pixel_json(p));
  return {{"index", ep.index},
          {"seed", ep.seed},
          {"split", split_name(ep.split)},
          {"scene", scene_to_json(ep.scene)},
          {"instruction", ep.instruction},
          {"relevance", ep.labels.relevance},
          {"relevant_ids", ep.labels.relevant_ids},
          {"pick_id", ep.labels.pick_id},
          {"place_target", {{"x", ep.labels.place_target.x}, {"y", ep.labels.place_target.y}}},
          {"gt_pick", pixel_json(ep.gt_pick)},
          {"gt_place", pixel_json(ep.gt_place)},
          {"image", image_name(ep.index)},
          {"patch_centers", centers}};
}

Episode episode_from_json(const nlohmann::json& j, const WorkspaceConfig& cfg,
                          RelevanceMode mode) {
  Episode ep;
  try {
    ep.index = j.at("index").get<std::uint64_t>();
    ep.seed = j.at("seed").get<std::uint64_t>();
    ep.split = parse_split(j.at("split").get<std::string>());
    ep.scene = scene_from_json(j.at("scene"));
    ep.instruction = j.at("instruction").get<std::string>();
    ep.ast = parse(ep.instruction);
    fill_derived(ep, cfg, mode);
    if (j.at("relevance").get<std::vector<int>>() != ep.labels.relevance ||
        j.at("pick_id").get<int>() != ep.labels.pick_id)
      throw FormatError("episode " + std::to_string(ep.index) +
                        ": stored labels disagree with the scene");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("episode json: ") + e.what());
  }
  return ep;
}

void write_dataset(const fs::path& dir, const std::vector<Episode>& episodes,
                   const WorkspaceConfig& cfg, bool with_images) {
  fs::create_directories(dir);
  if (with_images) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
  }
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& ep : episodes) {
    manifest << episode_to_json(ep).dump() << '\n';
    if (!with_images) continue;
    write_ppm(dir / image_name(ep.index), render(ep.scene, cfg));
    const auto masks = segmentation(ep.scene, cfg);
    for (std::size_t k = 0; k < masks.size(); ++k)
      write_pbm(dir / mask_name(ep.index, static_cast<int>(k)), masks[k]);
  }
  if (!manifest) throw std::runtime_error("write failed for " + (dir / "manifest.jsonl").string());
}

std::vector<Episode> read_dataset(const fs::path& dir, const WorkspaceConfig& cfg,
                                  RelevanceMode mode) {
  std::ifstream is(dir / "manifest.jsonl");
  if (!is) throw std::runtime_error("no dataset manifest in " + dir.string());
  std::vector<Episode> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line), cfg, mode));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

Image episode_image(const fs::path& dir, const Episode& ep, const WorkspaceConfig& cfg) {
  const fs::path p = dir / image_name(ep.index);
  if (!dir.empty() && fs::exists(p)) return read_ppm(p);
  return render(ep.scene, cfg);
}

std::vector<Detection> oracle_detect(const Scene& scene, const WorkspaceConfig& cfg, Rng& rng) {
  std::vector<Detection> dets;
  for (const auto& o : scene.objects)
    dets.push_back({project(o.x, o.y, cfg), object_mask(o, cfg), o.id});
  shuffle(dets, rng);
  return dets;
}

std::vector<Detection> noisy_detect(const Scene& scene, const WorkspaceConfig& cfg, Rng& rng,
                                    const NoiseConfig& noise) {
  if (noise.sigma_px < 0 || noise.p_miss < 0 || noise.p_miss >= 1)
    throw std::invalid_argument("noisy_detect: need sigma_px >= 0 and p_miss in [0, 1)");
  std::vector<Detection> dets;
  for (const auto& o : scene.objects) {
    // Draw both jitters even for dropped objects so one object's fate does
    // not shift the noise of the next.
    const bool miss = bernoulli(rng, noise.p_miss);
    const double du = std::round(noise.sigma_px * normal01(rng));
    const double dv = std::round(noise.sigma_px * normal01(rng));
    if (miss) continue;
    Pixel c = project(o.x, o.y, cfg);
    c.u = std::clamp(static_cast<int>(c.u + du), 0, cfg.width_px - 1);
    c.v = std::clamp(static_cast<int>(c.v + dv), 0, cfg.height_px - 1);
    dets.push_back({c, object_mask(o, cfg), o.id});
  }
  shuffle(dets, rng);
  return dets;
}

SSRInput make_ssr_input(const Image& image, const std::vector<Detection>& dets,
                        const std::vector<Index>& words, const WorkspaceConfig& cfg,
                        const std::vector<int>* relevance) {
  SSRInput in;
  in.words = words;
  for (const auto& d : dets) {
    in.patches.push_back(crop_patch(image, d.center, cfg.patch_px));
    in.coords.push_back({static_cast<double>(d.center.u) / cfg.width_px,
                         static_cast<double>(d.center.v) / cfg.height_px});
    if (relevance) in.label.push_back(relevance->at(static_cast<std::size_t>(d.source_id)));
  }
  return in;
}

const char* agent_mode_name(AgentMode m) {
  switch (m) {
    case AgentMode::no_mask: return "no_mask";
    case AgentMode::oracle_mask: return "oracle_mask";
    case AgentMode::ssr_oracle_det: return "ssr_oracle_det";
    case AgentMode::ssr_noisy_det: return "ssr_noisy_det";
  }
  return "?";
}

AgentMode parse_agent_mode(const std::string& s) {
  for (AgentMode m : kAllAgentModes)
    if (s == agent_mode_name(m)) return m;
  throw std::invalid_argument("unknown agent mode '" + s + "'");
}

namespace {

std::vector<Index> instruction_words(const std::string& text, const Vocabulary& vocab) {
  return tokenize(text, vocab);
}

TensorF slice_sample(const TensorF& t, Index i) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  const Index n = numel(s);
  return TensorF(s, TensorF::Storage(t.ptr() + i * n, t.ptr() + (i + 1) * n));
}

}  // namespace

InferenceResult run_inference(const InferenceRequest& req, AgentMode mode, const Models& models,
                              const Vocabulary& vocab, const WorkspaceConfig& cfg) {
  parse(req.instruction);
  const std::vector<Index> words = instruction_words(req.instruction, vocab);
  const Image& image = *req.image;
  InferenceResult res;
  const AffordModel<float>* afford = models.afford;

  switch (mode) {
    case AgentMode::no_mask:
      afford = models.afford_nomask;
      res.attention = TensorF({3, image.height, image.width});
      break;
    case AgentMode::oracle_mask: {
      if (!req.gt_masks || !req.gt_relevant)
        throw std::invalid_argument("oracle_mask needs ground-truth masks and labels");
      res.attention = build_attention_map(image, *req.gt_masks, *req.gt_relevant,
                                          afford ? afford->config().attention
                                                 : AttentionStyle::rgb_product);
      res.selected_objects = *req.gt_relevant;
      break;
    }
    case AgentMode::ssr_oracle_det:
    case AgentMode::ssr_noisy_det: {
      if (!models.ssr) throw std::invalid_argument("ssr mode without an SSR model");
      if (!req.detections || req.detections->empty())
        throw EmptyDetections("detector returned no objects");
      const auto& dets = *req.detections;
      const SSRInput in = make_ssr_input(image, dets, words, cfg);
      const TensorF raw = models.ssr->scores(make_ssr_batch<float>(std::span<const SSRInput>(&in, 1)));
      res.selected = select_objects(raw.data());
      const double mx = raw.array().maxCoeff();
      double z = 0;
      for (Index j = 0; j < raw.size(); ++j) z += std::exp(raw[j] - mx);
      for (Index j = 0; j < raw.size(); ++j) res.scores.push_back(std::exp(raw[j] - mx) / z);
      std::vector<Mask> masks;
      for (const auto& d : dets) masks.push_back(d.mask);
      if (!afford) throw std::invalid_argument("no affordance model");
      res.attention = build_attention_map(image, masks, res.selected, afford->config().attention);
      for (int s : res.selected) res.selected_objects.push_back(dets[s].source_id);
      std::sort(res.selected_objects.begin(), res.selected_objects.end());
      break;
    }
  }
  if (!afford) throw std::invalid_argument(std::string("no affordance model for ") + agent_mode_name(mode));

  AffordSample sample{&image, &res.attention, words};
  const TensorF q = afford->qmaps(make_afford_batch<float>(std::span<const AffordSample>(&sample, 1)),
                                  cfg.ppm());
  res.qmaps = slice_sample(q, 0);
  const Index plane = static_cast<Index>(image.height) * image.width;
  res.pick_px = decode(std::span<const float>(res.qmaps.ptr(), plane), image.width);
  res.place_px = decode(std::span<const float>(res.qmaps.ptr() + plane, plane), image.width);
  const Point2 pk = unproject(res.pick_px, cfg), pl = unproject(res.place_px, cfg);
  res.pick = {pk.x, pk.y, 0.0};
  res.place = {pl.x, pl.y, 0.0};
  return res;
}

// ---------------------------------------------------------------- training

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_log(const fs::path& path, const std::vector<LogRow>& log) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,loss,val_metric\n";
  for (const auto& r : log)
    os << r.step << ',' << fmt(r.loss) << ',' << (r.val_metric ? fmt(*r.val_metric) : "") << '\n';
}

nlohmann::json log_json(const std::vector<LogRow>& log) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : log)
    j.push_back({r.step, r.loss, r.val_metric ? nlohmann::json(*r.val_metric) : nlohmann::json()});
  return j;
}

std::vector<LogRow> log_from_json(const nlohmann::json& j) {
  std::vector<LogRow> out;
  for (const auto& r : j) {
    LogRow row{r.at(0).get<std::int64_t>(), r.at(1).get<double>(), std::nullopt};
    if (!r.at(2).is_null()) row.val_metric = r.at(2).get<double>();
    out.push_back(row);
  }
  return out;
}

void append_adam(Checkpoint& ckpt, const ParameterSet<float>& params, const AdamState<float>& adam) {
  ckpt.config["adam"] = {{"t", adam.t}, {"lr", adam.lr}, {"beta1", adam.beta1},
                         {"beta2", adam.beta2}, {"epsilon", adam.epsilon}};
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    ckpt.tensors.push_back({"adam.m." + params.name(static_cast<int>(i)), adam.m[i]});
    ckpt.tensors.push_back({"adam.v." + params.name(static_cast<int>(i)), adam.v[i]});
  }
}

AdamState<float> restore_adam(const Checkpoint& ckpt, const ParameterSet<float>& params) {
  AdamState<float> adam;
  const auto& a = ckpt.config.at("adam");
  adam.t = a.at("t");
  adam.lr = a.at("lr");
  adam.beta1 = a.at("beta1");
  adam.beta2 = a.at("beta2");
  adam.epsilon = a.at("epsilon");
  if (adam.t > 0)
    for (std::size_t i = 0; i < params.size(); ++i) {
      adam.m.push_back(ckpt.find("adam.m." + params.name(static_cast<int>(i))));
      adam.v.push_back(ckpt.find("adam.v." + params.name(static_cast<int>(i))));
    }
  return adam;
}

// Shared driver: a deterministic schedule of (epoch, offset) per step, periodic
// validation, best and last checkpoints.
template <typename Model, typename StepFn, typename ValFn, typename SaveFn, typename LoadFn>
TrainResult train_loop(Model& model, std::size_t n_train, const TrainOptions& opts,
                       StepFn&& step_fn, ValFn&& val_fn, SaveFn&& save_fn, LoadFn&& load_fn) {
  if (n_train == 0) throw std::invalid_argument("training set is empty");
  if (opts.batch <= 0 || opts.steps < 0 || opts.eval_every <= 0)
    throw std::invalid_argument("batch and eval_every must be positive");
  fs::create_directories(opts.out_dir);
  const fs::path best_path = opts.out_dir / (opts.name + "_best.ckpt");
  const fs::path last_path = opts.out_dir / (opts.name + "_last.ckpt");
  const fs::path log_path = opts.out_dir / (opts.name + "_log.csv");

  AdamState<float> adam;
  adam.lr = opts.lr;
  TrainResult result;
  std::int64_t start = 0;
  if (opts.resume && fs::exists(last_path)) {
    nlohmann::json header;
    Checkpoint ckpt = load_fn(last_path, model, header);
    adam = restore_adam(ckpt, model.params());
    start = header.at("step").get<std::int64_t>();
    result.log = log_from_json(header.at("log"));
    result.best_metric = header.at("best_metric");
    result.best_step = header.at("best_step");
  }

  const std::size_t batch = std::min<std::size_t>(opts.batch, n_train);
  const std::size_t per_epoch = n_train / batch;
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  for (std::int64_t s = start; s < opts.steps; ++s) {
    const std::int64_t epoch = s / static_cast<std::int64_t>(per_epoch);
    if (epoch != order_epoch) {
      order.resize(n_train);
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(mix_seed(opts.seed, static_cast<std::uint64_t>(epoch)));
      shuffle(order, rng);
      order_epoch = epoch;
    }
    const std::size_t off = static_cast<std::size_t>(s % static_cast<std::int64_t>(per_epoch)) * batch;
    const std::vector<std::size_t> idx(order.begin() + off, order.begin() + off + batch);
    const double loss = step_fn(idx, epoch, adam);
    LogRow row{s + 1, loss, std::nullopt};
    if ((s + 1) % opts.eval_every == 0 || s + 1 == opts.steps) {
      const double metric = val_fn();
      row.val_metric = metric;
      if (metric > result.best_metric) {
        result.best_metric = metric;
        result.best_step = s + 1;
        save_fn(best_path, nullptr, nlohmann::json());
      }
      result.log.push_back(row);
      nlohmann::json state = {{"step", s + 1}, {"log", log_json(result.log)},
                              {"best_metric", result.best_metric}, {"best_step", result.best_step}};
      save_fn(last_path, &adam, state);
      write_log(log_path, result.log);
      if (opts.progress)
        opts.progress(opts.name + " step " + std::to_string(s + 1) + " loss " + fmt(loss) +
                      " val " + fmt(metric));
      continue;
    }
    result.log.push_back(row);
  }
  write_log(log_path, result.log);
  return result;
}

Checkpoint with_params(const char* magic, const nlohmann::json& extra, const std::string& key,
                       const nlohmann::json& model_cfg, const ParameterSet<float>& params) {
  Checkpoint ckpt;
  ckpt.magic = magic;
  ckpt.config = extra;
  ckpt.config[key] = model_cfg;
  append_parameters(ckpt, params);
  return ckpt;
}

}  // namespace

double ssr_selection_accuracy(const SSRModel<float>& model, const std::vector<Episode>& episodes,
                              const WorkspaceConfig& cfg) {
  if (episodes.empty()) return 0;
  const Vocabulary vocab;
  int exact = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < episodes.size(); i += kChunk) {
    std::vector<SSRInput> ins;
    std::vector<std::vector<int>> truth;
    for (std::size_t k = i; k < std::min(episodes.size(), i + kChunk); ++k) {
      const Episode& ep = episodes[k];
      Rng rng = stream(ep.seed, kDetectOrder);
      const auto dets = oracle_detect(ep.scene, cfg, rng);
      ins.push_back(make_ssr_input(render(ep.scene, cfg), dets, tokenize(ep.instruction, vocab),
                                   cfg, &ep.labels.relevance));
      truth.push_back(ins.back().label);
    }
    const TensorF s = model.scores(make_ssr_batch<float>(ins));
    const Index m = s.dim(1);
    for (std::size_t b = 0; b < ins.size(); ++b) {
      const auto sel = select_objects(std::span<const float>(s.ptr() + b * m, m));
      std::vector<int> want;
      for (Index j = 0; j < m; ++j)
        if (truth[b][j]) want.push_back(static_cast<int>(j));
      exact += sel == want;
    }
  }
  return static_cast<double>(exact) / episodes.size();
}

TrainResult train_ssr(const std::vector<Episode>& train, const std::vector<Episode>& val,
                      const SSRConfig& model_cfg, const WorkspaceConfig& cfg,
                      const TrainOptions& opts) {
  SSRModel<float> model(model_cfg, opts.seed);
  const Vocabulary vocab;
  auto step = [&](const std::vector<std::size_t>& idx, std::int64_t epoch, AdamState<float>& adam) {
    std::vector<SSRInput> ins;
    for (std::size_t i : idx) {
      const Episode& ep = train[i];
      Rng rng = stream(ep.seed ^ opts.seed, kTrainOrder + static_cast<std::uint64_t>(epoch));
      ins.push_back(make_ssr_input(render(ep.scene, cfg), oracle_detect(ep.scene, cfg, rng),
                                   tokenize(ep.instruction, vocab), cfg, &ep.labels.relevance));
    }
    return ssr_train_step(model, make_ssr_batch<float>(ins), adam);
  };
  auto validate = [&] { return ssr_selection_accuracy(model, val, cfg); };
  auto save = [&](const fs::path& path, const AdamState<float>* adam, const nlohmann::json& state) {
    Checkpoint ckpt = with_params(kSSRMagic, opts.extra, "ssr", model.config().to_json(), model.params());
    if (adam) {
      ckpt.config["train_state"] = state;
      append_adam(ckpt, model.params(), *adam);
    }
    save_checkpoint(path, ckpt);
  };
  auto load = [&](const fs::path& path, SSRModel<float>& m, nlohmann::json& state) {
    Checkpoint ckpt = load_checkpoint(path, kSSRMagic);
    for (std::size_t i = 0; i < m.params().size(); ++i)
      m.params()[static_cast<int>(i)] = ckpt.find(m.params().name(static_cast<int>(i)));
    state = ckpt.config.at("train_state");
    return ckpt;
  };
  return train_loop(model, train.size(), opts, step, validate, save, load);
}

AffordSample afford_sample(const Episode& ep, const Image& image, TensorF& attention_storage,
                           const Vocabulary& vocab, const WorkspaceConfig& cfg, bool masked,
                           AttentionStyle style) {
  if (masked)
    attention_storage = build_attention_map(image, segmentation(ep.scene, cfg),
                                            ep.labels.relevant_ids, style);
  else
    attention_storage = TensorF({3, image.height, image.width});
  return {&image, &attention_storage, tokenize(ep.instruction, vocab), ep.gt_pick, ep.gt_place};
}

double afford_success_rate(const AffordModel<float>& model, const std::vector<Episode>& episodes,
                           const WorkspaceConfig& cfg, bool masked) {
  if (episodes.empty()) return 0;
  const Vocabulary vocab;
  int ok = 0;
  constexpr std::size_t kChunk = 16;
  for (std::size_t i = 0; i < episodes.size(); i += kChunk) {
    const std::size_t end = std::min(episodes.size(), i + kChunk);
    std::vector<Image> imgs;
    std::vector<TensorF> atts(end - i);
    std::vector<AffordSample> samples;
    imgs.reserve(end - i);
    for (std::size_t k = i; k < end; ++k) {
      imgs.push_back(render(episodes[k].scene, cfg));
      samples.push_back(afford_sample(episodes[k], imgs.back(), atts[k - i], vocab, cfg, masked,
                                      model.config().attention));
    }
    const TensorF q = model.qmaps(make_afford_batch<float>(samples), cfg.ppm());
    const Index plane = static_cast<Index>(cfg.height_px) * cfg.width_px;
    for (std::size_t k = i; k < end; ++k) {
      const Index b = static_cast<Index>(k - i);
      const Pixel pick = decode(std::span<const float>(q.ptr() + (2 * b) * plane, plane), cfg.width_px);
      const Pixel place = decode(std::span<const float>(q.ptr() + (2 * b + 1) * plane, plane), cfg.width_px);
      ok += judge(episodes[k].scene, episodes[k].ast, pick, unproject(place, cfg), cfg).success();
    }
  }
  return static_cast<double>(ok) / episodes.size();
}

TrainResult train_afford(const std::vector<Episode>& train, const std::vector<Episode>& val,
                         const AffordConfig& model_cfg, const WorkspaceConfig& cfg, bool masked,
                         const TrainOptions& opts) {
  AffordModel<float> model(model_cfg, opts.seed);
  const Vocabulary vocab;
  auto step = [&](const std::vector<std::size_t>& idx, std::int64_t, AdamState<float>& adam) {
    std::vector<Image> imgs;
    std::vector<TensorF> atts(idx.size());
    std::vector<AffordSample> samples;
    imgs.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      imgs.push_back(render(train[idx[k]].scene, cfg));
      samples.push_back(afford_sample(train[idx[k]], imgs.back(), atts[k], vocab, cfg, masked,
                                      model.config().attention));
    }
    return afford_train_step(model, make_afford_batch<float>(samples), cfg.ppm(), adam);
  };
  auto validate = [&] { return afford_success_rate(model, val, cfg, masked); };
  nlohmann::json extra = opts.extra;
  extra["masked"] = masked;
  auto save = [&](const fs::path& path, const AdamState<float>* adam, const nlohmann::json& state) {
    Checkpoint ckpt = with_params(kAffordMagic, extra, "afford", model.config().to_json(), model.params());
    if (adam) {
      ckpt.config["train_state"] = state;
      append_adam(ckpt, model.params(), *adam);
    }
    save_checkpoint(path, ckpt);
  };
  auto load = [&](const fs::path& path, AffordModel<float>& m, nlohmann::json& state) {
    Checkpoint ckpt = load_checkpoint(path, kAffordMagic);
    for (std::size_t i = 0; i < m.params().size(); ++i)
      m.params()[static_cast<int>(i)] = ckpt.find(m.params().name(static_cast<int>(i)));
    state = ckpt.config.at("train_state");
    return ckpt;
  };
  return train_loop(model, train.size(), opts, step, validate, save, load);
}

// -------------------------------------------------------------- evaluation

nlohmann::json metrics_to_json(const AgentMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  return {{"success_rate", m.success_rate},
          {"pick_rate", m.pick_rate},
          {"place_err_mean_m", m.place_err_mean_m},
          {"place_err_median_m", m.place_err_median_m},
          {"selection_precision", opt(m.selection_precision)},
          {"selection_recall", opt(m.selection_recall)},
          {"n", m.n}};
}

std::vector<std::pair<AgentMode, AgentMetrics>> evaluate(const std::vector<Episode>& test,
                                                         const std::vector<AgentMode>& agents,
                                                         const Models& models,
                                                         const WorkspaceConfig& cfg,
                                                         const NoiseConfig& noise) {
  const Vocabulary vocab;
  struct Acc {
    int n = 0, success = 0, picks = 0;
    std::vector<double> errors;
    long selected = 0, true_pos = 0, relevant = 0;
  };
  std::vector<Acc> acc(agents.size());
  for (const Episode& ep : test) {
    const Image image = render(ep.scene, cfg);
    const auto masks = segmentation(ep.scene, cfg);
    Rng order_rng = stream(ep.seed, kDetectOrder);
    Rng noise_rng = stream(ep.seed, kDetectNoise);
    const auto oracle = oracle_detect(ep.scene, cfg, order_rng);
    const auto noisy = noisy_detect(ep.scene, cfg, noise_rng, noise);
    for (std::size_t a = 0; a < agents.size(); ++a) {
      const AgentMode mode = agents[a];
      Acc& st = acc[a];
      ++st.n;
      InferenceRequest req;
      req.image = &image;
      req.instruction = ep.instruction;
      req.detections = mode == AgentMode::ssr_noisy_det ? &noisy : &oracle;
      req.gt_masks = &masks;
      req.gt_relevant = &ep.labels.relevant_ids;
      InferenceResult res;
      try {
        res = run_inference(req, mode, models, vocab, cfg);
      } catch (const EmptyDetections&) {
        st.relevant += static_cast<long>(ep.labels.relevant_ids.size());
        continue;
      }
      const SuccessVerdict v = judge(ep.scene, ep.ast, res.pick_px, {res.place.x, res.place.y}, cfg);
      st.success += v.success();
      st.picks += v.pick_ok;
      st.errors.push_back(v.place_error_m);
      if (mode == AgentMode::ssr_oracle_det || mode == AgentMode::ssr_noisy_det) {
        const std::set<int> truth(ep.labels.relevant_ids.begin(), ep.labels.relevant_ids.end());
        st.selected += static_cast<long>(res.selected_objects.size());
        st.relevant += static_cast<long>(truth.size());
        for (int id : res.selected_objects) st.true_pos += truth.count(id);
      }
    }
  }
  std::vector<std::pair<AgentMode, AgentMetrics>> out;
  for (std::size_t a = 0; a < agents.size(); ++a) {
    const Acc& st = acc[a];
    AgentMetrics m;
    m.n = st.n;
    if (st.n > 0) {
      m.success_rate = static_cast<double>(st.success) / st.n;
      m.pick_rate = static_cast<double>(st.picks) / st.n;
    }
    if (!st.errors.empty()) {
      std::vector<double> e = st.errors;
      m.place_err_mean_m = std::accumulate(e.begin(), e.end(), 0.0) / e.size();
      std::sort(e.begin(), e.end());
      const std::size_t h = e.size() / 2;
      m.place_err_median_m = e.size() % 2 ? e[h] : (e[h - 1] + e[h]) / 2;
    }
    if (agents[a] == AgentMode::ssr_oracle_det || agents[a] == AgentMode::ssr_noisy_det) {
      m.selection_precision = st.selected ? static_cast<double>(st.true_pos) / st.selected : 0.0;
      m.selection_recall = st.relevant ? static_cast<double>(st.true_pos) / st.relevant : 0.0;
    }
    out.emplace_back(agents[a], m);
  }
  return out;
}

}  // namespace relmask
