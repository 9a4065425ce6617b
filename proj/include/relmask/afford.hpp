#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "relmask/adam.hpp"
#include "relmask/image.hpp"
#include "relmask/layers.hpp"
#include "relmask/scene.hpp"

namespace relmask {

enum class AttentionStyle { rgb_product, binary };

const char* attention_style_name(AttentionStyle s);
AttentionStyle parse_attention_style(const std::string& s);

/// [3, H, W] map in [0, 1]: the image (or 1 for `binary`) inside the OR of
/// the selected masks, zero elsewhere. Throws std::out_of_range for a
/// selected id without a mask.
TensorF build_attention_map(const Image& image, const std::vector<Mask>& masks,
                            std::span<const int> selected,
                            AttentionStyle style = AttentionStyle::rgb_product);

struct AffordConfig {
  std::vector<int> widths = {32, 64, 128};
  int lang_dim = 64;
  int max_words = 16;
  int vocab_size = 26;
  // Soft-argmax keypoints on the bottleneck whose mixture adds a Gaussian
  // bump to the place logits; 0 disables the term. The bump's gain starts
  // at zero so the initial maps stay near uniform.
  int keypoints = 4;
  double keypoint_sigma_m = 0.05;
  AttentionStyle attention = AttentionStyle::rgb_product;

  void validate() const;
  nlohmann::json to_json() const;
  static AffordConfig from_json(const nlohmann::json& j);
};

/// Stacked affordance inputs.
template <typename Scalar>
struct AffordBatch {
  Index batch = 0;
  Index words_len = 0;
  std::vector<Index> words;      // batch * words_len
  Tensor<Scalar> input;          // [batch, 6, H, W]: RGB then attention map
  std::vector<Index> pick_index; // row-major GT pixel per sample, optional
  std::vector<Index> place_index;
};

struct AffordSample {
  const Image* image = nullptr;
  const TensorF* attention = nullptr;
  std::vector<Index> words;
  Pixel pick{-1, -1};
  Pixel place{-1, -1};
};

template <typename Scalar>
AffordBatch<Scalar> make_afford_batch(std::span<const AffordSample> samples);

template <typename Scalar>
class AffordModel {
 public:
  AffordModel(const AffordConfig& cfg, std::uint64_t seed);

  const AffordConfig& config() const { return cfg_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }

  /// Logits [B, 2, H, W]; channel 0 is pick, 1 is place. `ppm` places the
  /// keypoint term in metric units.
  Var<Scalar> forward(ParameterBinding<Scalar>& p, const AffordBatch<Scalar>& batch,
                      double ppm) const;
  Tensor<Scalar> qmaps(const AffordBatch<Scalar>& batch, double ppm) const;

 private:
  struct Stage {
    Conv2dSlots conv;
    LinearSlots film;
  };

  Var<Scalar> language(ParameterBinding<Scalar>& p, const AffordBatch<Scalar>& b) const;

  AffordConfig cfg_;
  ParameterSet<Scalar> params_;
  int lang_emb_ = -1;
  std::vector<Stage> enc_;
  Conv2dSlots bottleneck_;
  std::vector<Conv2dSlots> dec_;
  Conv2dSlots head_;
  Conv2dSlots keypoint_;
  int mix_ = -1;
  int gain_ = -1;
};

/// Mean over the batch of -log softmax(Q_pick)[gt] - log softmax(Q_place)[gt].
template <typename Scalar>
Var<Scalar> afford_loss(const Var<Scalar>& logits, std::span<const Index> pick_index,
                        std::span<const Index> place_index);

/// Argmax pixel; ties go to the smallest row-major index.
template <typename Scalar>
Pixel decode(std::span<const Scalar> qmap, int width);

template <typename Scalar>
double afford_train_step(AffordModel<Scalar>& model, const AffordBatch<Scalar>& batch,
                         double ppm, AdamState<Scalar>& adam);

inline constexpr char kAffordMagic[] = "AFFD";

void save_afford(const std::filesystem::path& path, const AffordModel<float>& model,
                 const nlohmann::json& extra = nlohmann::json::object());
AffordModel<float> load_afford(const std::filesystem::path& path,
                               nlohmann::json* header = nullptr);

}  // namespace relmask
