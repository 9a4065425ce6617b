#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "relmask/afford.hpp"
#include "relmask/instruction.hpp"
#include "relmask/oracle.hpp"
#include "relmask/ssr.hpp"

namespace relmask {

enum class Split { seen, unseen };

const char* split_name(Split s);
Split parse_split(const std::string& s);
std::vector<std::string> color_pool(Split s);

struct Episode {
  std::uint64_t index = 0;
  std::uint64_t seed = 0;
  Split split = Split::seen;
  Scene scene;
  InstructionAST ast;
  std::string instruction;
  EpisodeLabels labels;
  Pixel gt_pick;
  Pixel gt_place;
  std::vector<Pixel> patch_centers;  // per object id
};

/// Episode seed = mix_seed(base_seed, index); everything else is drawn from
/// one generator seeded with it.
Episode sample_episode(std::uint64_t base_seed, std::uint64_t index, Split split,
                       const WorkspaceConfig& cfg,
                       RelevanceMode mode = RelevanceMode::with_pick);

std::vector<Episode> sample_episodes(std::uint64_t base_seed, std::uint64_t first,
                                     std::uint64_t count, Split split,
                                     const WorkspaceConfig& cfg,
                                     RelevanceMode mode = RelevanceMode::with_pick);

nlohmann::json episode_to_json(const Episode& ep);
/// Labels are re-derived from the scene and instruction and must match the record.
Episode episode_from_json(const nlohmann::json& j, const WorkspaceConfig& cfg,
                          RelevanceMode mode = RelevanceMode::with_pick);

/// dir/manifest.jsonl, plus dir/images/ep_<i>.ppm and
/// dir/masks/ep_<i>_<obj>.pbm when `with_images` is set.
void write_dataset(const std::filesystem::path& dir, const std::vector<Episode>& episodes,
                   const WorkspaceConfig& cfg, bool with_images = true);
std::vector<Episode> read_dataset(const std::filesystem::path& dir, const WorkspaceConfig& cfg,
                                  RelevanceMode mode = RelevanceMode::with_pick);
/// The stored image when present, otherwise a fresh render.
Image episode_image(const std::filesystem::path& dir, const Episode& ep, const WorkspaceConfig& cfg);

/// Detector output; source_id records which object produced a detection and
/// is used only for scoring.
struct Detection {
  Pixel center;
  Mask mask;
  int source_id = -1;
};

struct NoiseConfig {
  double sigma_px = 2.0;
  double p_miss = 0.05;
};

/// One detection per object at its projected center, in shuffled order.
std::vector<Detection> oracle_detect(const Scene& scene, const WorkspaceConfig& cfg, Rng& rng);
/// Drops each object with p_miss, jitters surviving centers by rounded
/// N(0, sigma_px) per axis (clamped to the image), shuffles the rest.
std::vector<Detection> noisy_detect(const Scene& scene, const WorkspaceConfig& cfg, Rng& rng,
                                    const NoiseConfig& noise = {});

/// Patches and normalized coordinates for each detection. With `relevance`
/// (indexed by object id) the input is labeled.
SSRInput make_ssr_input(const Image& image, const std::vector<Detection>& dets,
                        const std::vector<Index>& words, const WorkspaceConfig& cfg,
                        const std::vector<int>* relevance = nullptr);

enum class AgentMode { no_mask, oracle_mask, ssr_oracle_det, ssr_noisy_det };

const char* agent_mode_name(AgentMode m);
AgentMode parse_agent_mode(const std::string& s);
inline constexpr AgentMode kAllAgentModes[] = {AgentMode::no_mask, AgentMode::oracle_mask,
                                               AgentMode::ssr_oracle_det,
                                               AgentMode::ssr_noisy_det};

struct Models {
  const SSRModel<float>* ssr = nullptr;
  const AffordModel<float>* afford = nullptr;         // trained with masks
  const AffordModel<float>* afford_nomask = nullptr;  // trained with empty maps
};

struct Pose {
  double x = 0, y = 0, z = 0;
};

struct InferenceResult {
  Pose pick;
  Pose place;
  Pixel pick_px;
  Pixel place_px;
  std::vector<int> selected;          // detection indices
  std::vector<int> selected_objects;  // their source ids
  std::vector<double> scores;         // softmax over detections
  TensorF attention;                  // [3, H, W]
  TensorF qmaps;                      // [2, H, W]
};

struct InferenceRequest {
  const Image* image = nullptr;
  std::string instruction;
  const std::vector<Detection>* detections = nullptr;   // ssr modes
  const std::vector<Mask>* gt_masks = nullptr;          // oracle_mask
  const std::vector<int>* gt_relevant = nullptr;        // oracle_mask
};

/// Throws NonTemplateInstruction for text outside the template and
/// EmptyDetections when an ssr mode gets no detections.
InferenceResult run_inference(const InferenceRequest& req, AgentMode mode, const Models& models,
                              const Vocabulary& vocab, const WorkspaceConfig& cfg);

struct LogRow {
  std::int64_t step = 0;
  double loss = 0;
  std::optional<double> val_metric;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  int batch = 32;
  std::int64_t steps = 1000;
  double lr = 1e-4;
  int eval_every = 250;
  std::filesystem::path out_dir;
  std::string name = "model";            // checkpoint / log file stem
  bool resume = false;
  std::function<void(const std::string&)> progress;
  nlohmann::json extra = nlohmann::json::object();  // stored in checkpoint headers
};

struct TrainResult {
  double best_metric = -1;
  std::int64_t best_step = -1;
  std::vector<LogRow> log;
};

/// Validation metric: exact-set selection accuracy with oracle detections.
double ssr_selection_accuracy(const SSRModel<float>& model, const std::vector<Episode>& episodes,
                              const WorkspaceConfig& cfg);

/// Writes <name>_best.ckpt (best validation), <name>_last.ckpt (resumable)
/// and <name>_log.csv under out_dir.
TrainResult train_ssr(const std::vector<Episode>& train, const std::vector<Episode>& val,
                      const SSRConfig& model_cfg, const WorkspaceConfig& cfg,
                      const TrainOptions& opts);

/// Training input for the affordance net: the GT-relevant attention map, or
/// an empty map when `masked` is false.
AffordSample afford_sample(const Episode& ep, const Image& image, TensorF& attention_storage,
                           const Vocabulary& vocab, const WorkspaceConfig& cfg, bool masked,
                           AttentionStyle style);

/// Validation metric: episode success with GT-relevant (or empty) maps.
double afford_success_rate(const AffordModel<float>& model, const std::vector<Episode>& episodes,
                           const WorkspaceConfig& cfg, bool masked);

TrainResult train_afford(const std::vector<Episode>& train, const std::vector<Episode>& val,
                         const AffordConfig& model_cfg, const WorkspaceConfig& cfg, bool masked,
                         const TrainOptions& opts);

struct AgentMetrics {
  int n = 0;
  double success_rate = 0;
  double pick_rate = 0;
  double place_err_mean_m = 0;
  double place_err_median_m = 0;
  std::optional<double> selection_precision;
  std::optional<double> selection_recall;
};

nlohmann::json metrics_to_json(const AgentMetrics& m);

/// Every agent sees the same episodes. Detector randomness comes from each
/// episode's seed, so results do not depend on agent order.
std::vector<std::pair<AgentMode, AgentMetrics>> evaluate(const std::vector<Episode>& test,
                                                         const std::vector<AgentMode>& agents,
                                                         const Models& models,
                                                         const WorkspaceConfig& cfg,
                                                         const NoiseConfig& noise = {});

}  // namespace relmask
