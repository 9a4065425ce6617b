#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "relmask/adam.hpp"
#include "relmask/image.hpp"
#include "relmask/layers.hpp"
#include "relmask/scene.hpp"

namespace relmask {

struct SSRConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int mlp_hidden = 256;
  int word_dim = 64;
  int patch_dim = 64;
  int coord_dim = 16;
  int type_dim = 8;
  int pos_dim = 16;
  int head_hidden = 128;
  int max_words = 32;
  int vocab_size = 26;
  int patch_px = 24;

  void validate() const;
  nlohmann::json to_json() const;
  static SSRConfig from_json(const nlohmann::json& j);
};

/// One scene as the reasoner sees it. Coordinates are (u / W, v / H).
struct SSRInput {
  std::vector<Index> words;
  std::vector<Image> patches;
  std::vector<Point2> coords;
  std::vector<int> label;  // optional, 0/1 per object
};

/// Stacked inputs; every sample must share the word and object counts.
template <typename Scalar>
struct SSRBatch {
  Index batch = 0;
  Index words_len = 0;
  Index objects = 0;
  std::vector<Index> words;   // batch * words_len
  Tensor<Scalar> patches;     // [batch * objects, 3, P, P] in [0, 1]
  Tensor<Scalar> coords;      // [batch, objects, 2]
  Tensor<Scalar> labels;      // [batch, objects], empty when unlabeled
};

template <typename Scalar>
SSRBatch<Scalar> make_ssr_batch(std::span<const SSRInput> inputs);

/// Start and length of the centered pooling window on an n x n feature map.
std::pair<Index, Index> center_window(Index n);

template <typename Scalar>
class SSRModel {
 public:
  SSRModel(const SSRConfig& cfg, std::uint64_t seed);

  const SSRConfig& config() const { return cfg_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }

  /// [B, L + m, d_model]: word tokens first, then object tokens.
  Var<Scalar> encode_tokens(ParameterBinding<Scalar>& p, const SSRBatch<Scalar>& batch) const;
  /// Raw scores [B, m] from the last m rows of a token tensor.
  Var<Scalar> forward_tokens(ParameterBinding<Scalar>& p, const Var<Scalar>& tokens,
                             Index objects) const;
  Var<Scalar> forward(ParameterBinding<Scalar>& p, const SSRBatch<Scalar>& batch) const;

  /// Raw scores without recording gradients.
  Tensor<Scalar> scores(const SSRBatch<Scalar>& batch) const;

  /// Slot of the final scoring layer's weight.
  int head_weight_slot() const { return head_out_.w; }

 private:
  struct Block {
    LayerNormSlots ln1, ln2;
    LinearSlots qkv, out, mlp1, mlp2;
  };

  Var<Scalar> patch_features(ParameterBinding<Scalar>& p, const Tensor<Scalar>& patches) const;

  SSRConfig cfg_;
  ParameterSet<Scalar> params_;
  int word_emb_ = -1, word_pos_ = -1, obj_pos_ = -1, type_emb_ = -1;
  Conv2dSlots conv1_, conv2_;
  LinearSlots patch_proj_, coord_, word_proj_, obj_proj_, head_hidden_, head_out_;
  std::vector<Block> blocks_;
  LayerNormSlots final_ln_;
};

/// Mean over the batch of sum_i |softmax(scores)_i - softmax(labels)_i|.
template <typename Scalar>
Var<Scalar> ssr_loss(const Var<Scalar>& scores, const Tensor<Scalar>& labels);

/// Objects whose softmax score exceeds 1/m; if none does, the three highest
/// raw scores (lowest index wins ties).
std::vector<int> select_objects(std::span<const double> raw_scores);

template <typename Scalar>
std::vector<int> select_objects(std::span<const Scalar> raw_scores) {
  std::vector<double> d(raw_scores.begin(), raw_scores.end());
  return select_objects(std::span<const double>(d));
}

/// One Adam step on the batch mean loss; returns that loss.
template <typename Scalar>
double ssr_train_step(SSRModel<Scalar>& model, const SSRBatch<Scalar>& batch,
                      AdamState<Scalar>& adam);

inline constexpr char kSSRMagic[] = "SSRC";

/// `extra` is stored alongside the model config in the checkpoint header.
void save_ssr(const std::filesystem::path& path, const SSRModel<float>& model,
              const nlohmann::json& extra = nlohmann::json::object());
SSRModel<float> load_ssr(const std::filesystem::path& path, nlohmann::json* header = nullptr);

}  // namespace relmask
