#include "relmask/afford.hpp"

#include <cmath>
#include <stdexcept>

#include "relmask/errors.hpp"
#include "relmask/serialize.hpp"

namespace relmask {

const char* attention_style_name(AttentionStyle s) {
  return s == AttentionStyle::rgb_product ? "rgb_product" : "binary";
}

AttentionStyle parse_attention_style(const std::string& s) {
  if (s == "rgb_product") return AttentionStyle::rgb_product;
  if (s == "binary") return AttentionStyle::binary;
  throw std::invalid_argument("unknown attention style '" + s + "'");
}

TensorF build_attention_map(const Image& image, const std::vector<Mask>& masks,
                            std::span<const int> selected, AttentionStyle style) {
  const int H = image.height, W = image.width;
  Mask any(H, W);
  for (int id : selected) {
    if (id < 0 || id >= static_cast<int>(masks.size()))
      throw std::out_of_range("attention map: no mask for object " + std::to_string(id));
    const Mask& m = masks[id];
    if (m.height != H || m.width != W) throw ShapeError("attention map: mask size mismatch");
    for (std::size_t i = 0; i < any.bits.size(); ++i) any.bits[i] |= m.bits[i];
  }
  TensorF out({3, H, W});
  const Index plane = static_cast<Index>(H) * W;
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      if (!any(v, u)) continue;
      const std::uint8_t* px = image.px(v, u);
      const Index o = static_cast<Index>(v) * W + u;
      for (int c = 0; c < 3; ++c)
        out[c * plane + o] = style == AttentionStyle::binary ? 1.0f : px[c] / 255.0f;
    }
  return out;
}

void AffordConfig::validate() const {
  if (widths.empty()) throw std::invalid_argument("afford: widths must not be empty");
  for (int w : widths)
    if (w < 2) throw std::invalid_argument("afford: widths must be at least 2");
  if (lang_dim <= 0 || max_words <= 0 || vocab_size <= 2 || keypoints < 0)
    throw std::invalid_argument("afford: non-positive size");
  if (keypoints > 0 && !(keypoint_sigma_m > 0))
    throw std::invalid_argument("afford: keypoint_sigma_m must be positive");
}

nlohmann::json AffordConfig::to_json() const {
  return {{"widths", widths},         {"lang_dim", lang_dim},
          {"max_words", max_words},   {"vocab_size", vocab_size},
          {"keypoints", keypoints},   {"keypoint_sigma_m", keypoint_sigma_m},
          {"attention", attention_style_name(attention)}};
}

AffordConfig AffordConfig::from_json(const nlohmann::json& j) {
  AffordConfig c;
  c.widths = j.at("widths").get<std::vector<int>>();
  c.lang_dim = j.at("lang_dim");
  c.max_words = j.at("max_words");
  c.vocab_size = j.at("vocab_size");
  c.keypoints = j.at("keypoints");
  c.keypoint_sigma_m = j.at("keypoint_sigma_m");
  c.attention = parse_attention_style(j.at("attention"));
  c.validate();
  return c;
}

template <typename Scalar>
AffordBatch<Scalar> make_afford_batch(std::span<const AffordSample> samples) {
  if (samples.empty()) throw ShapeError("afford batch: no samples");
  AffordBatch<Scalar> b;
  b.batch = static_cast<Index>(samples.size());
  b.words_len = static_cast<Index>(samples[0].words.size());
  const int H = samples[0].image->height, W = samples[0].image->width;
  const Index plane = static_cast<Index>(H) * W;
  b.input = Tensor<Scalar>({b.batch, 6, H, W});
  const bool labeled = samples[0].pick.u >= 0;
  for (Index i = 0; i < b.batch; ++i) {
    const AffordSample& s = samples[i];
    if (static_cast<Index>(s.words.size()) != b.words_len)
      throw ShapeError("afford batch: samples differ in word count");
    if (s.image->height != H || s.image->width != W ||
        s.attention->shape() != Shape{3, H, W})
      throw ShapeError("afford batch: image or attention size mismatch");
    b.words.insert(b.words.end(), s.words.begin(), s.words.end());
    Scalar* dst = b.input.ptr() + i * 6 * plane;
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) {
        const std::uint8_t* px = s.image->px(v, u);
        const Index o = static_cast<Index>(v) * W + u;
        for (int c = 0; c < 3; ++c) dst[c * plane + o] = static_cast<Scalar>(px[c]) / Scalar(255);
      }
    const float* att = s.attention->ptr();
    for (Index k = 0; k < 3 * plane; ++k) dst[3 * plane + k] = static_cast<Scalar>(att[k]);
    if (labeled) {
      if (!s.image->contains(s.pick.v, s.pick.u) || !s.image->contains(s.place.v, s.place.u))
        throw ShapeError("afford batch: ground-truth pixel outside the image");
      b.pick_index.push_back(static_cast<Index>(s.pick.v) * W + s.pick.u);
      b.place_index.push_back(static_cast<Index>(s.place.v) * W + s.place.u);
    }
  }
  return b;
}

template <typename Scalar>
AffordModel<Scalar>::AffordModel(const AffordConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  auto& ps = params_;
  lang_emb_ = ps.add("lang_emb", normal_tensor<Scalar>(
                                     {static_cast<Index>(cfg_.max_words) * cfg_.vocab_size,
                                      cfg_.lang_dim},
                                     0.1, rng));
  const int n = static_cast<int>(cfg_.widths.size());
  int in = 6;
  for (int i = 0; i < n; ++i) {
    const std::string name = "enc." + std::to_string(i);
    Stage s;
    s.conv = add_conv(ps, name + ".conv", in, cfg_.widths[i], 3, rng);
    // Identity modulation at init.
    s.film.w = ps.add(name + ".film.w", Tensor<Scalar>({cfg_.lang_dim, 2 * cfg_.widths[i]}));
    s.film.b = ps.add(name + ".film.b", Tensor<Scalar>({2 * cfg_.widths[i]}));
    enc_.push_back(s);
    in = cfg_.widths[i];
  }
  bottleneck_ = add_conv(ps, "bottleneck", in, in, 3, rng);
  int cur = in;
  for (int i = n - 1; i >= 0; --i) {
    const int skip = i > 0 ? cfg_.widths[i - 1] : 6;
    const int out = i > 0 ? cfg_.widths[i - 1] : std::max(2, cfg_.widths[0] / 2);
    dec_.push_back(add_conv(ps, "dec." + std::to_string(i), cur + skip, out, 3, rng));
    cur = out;
  }
  head_ = add_conv(ps, "head", cur, 2, 1, rng);
  if (cfg_.keypoints > 0) {
    keypoint_ = add_conv(ps, "keypoint", in, cfg_.keypoints, 1, rng);
    mix_ = ps.add("keypoint_mix", Tensor<Scalar>({cfg_.keypoints}));
    gain_ = ps.add("keypoint_gain", Tensor<Scalar>({1}));
  }
}

template <typename Scalar>
Var<Scalar> AffordModel<Scalar>::language(ParameterBinding<Scalar>& p,
                                          const AffordBatch<Scalar>& b) const {
  const Index B = b.batch, L = b.words_len;
  if (L == 0) throw ShapeError("afford: empty instruction");
  if (L > cfg_.max_words) throw ShapeError("afford: instruction longer than max_words");
  // Position-specific word vectors, so the bag keeps track of which slot a
  // color fills.
  std::vector<Index> ids(static_cast<std::size_t>(B * L));
  for (Index i = 0; i < B * L; ++i) {
    const Index w = b.words[i];
    if (w < 0 || w >= cfg_.vocab_size) throw ShapeError("afford: word id outside the vocabulary");
    ids[i] = (i % L) * cfg_.vocab_size + w;
  }
  return mean(embedding(p[lang_emb_], ids, {B, L}), {1});
}

template <typename Scalar>
Var<Scalar> AffordModel<Scalar>::forward(ParameterBinding<Scalar>& p,
                                         const AffordBatch<Scalar>& b, double ppm) const {
  const Index B = b.batch, H = b.input.dim(2), W = b.input.dim(3);
  const int n = static_cast<int>(cfg_.widths.size());
  if (H % (Index{1} << n) != 0 || W % (Index{1} << n) != 0)
    throw ShapeError("afford: image size must be divisible by 2^levels");
  Tape<Scalar>& tape = p.tape();
  const Var<Scalar> lang = language(p, b);
  const Var<Scalar> x = tape.constant(b.input);

  std::vector<Var<Scalar>> skips = {x};
  Var<Scalar> h = x;
  for (int i = 0; i < n; ++i) {
    const Index C = cfg_.widths[i];
    h = apply(p, enc_[i].conv, h, 2, 1);
    const Var<Scalar> film = apply(p, enc_[i].film, lang);
    const Var<Scalar> gamma = reshape(slice(film, 1, 0, C), {B, C, 1, 1});
    const Var<Scalar> beta = reshape(slice(film, 1, C, C), {B, C, 1, 1});
    h = relu(h * add_scalar(gamma, Scalar(1)) + beta);
    skips.push_back(h);
  }
  const Var<Scalar> bottom = relu(apply(p, bottleneck_, h, 1, 1));
  h = bottom;
  for (int k = 0; k < n; ++k) {
    const Var<Scalar>& skip = skips[n - 1 - k];
    h = relu(apply(p, dec_[k], concat<Scalar>({upsample2x(h), skip}, 1), 1, 1));
  }
  Var<Scalar> q = apply(p, head_, h, 1, 0);
  if (cfg_.keypoints == 0) return q;

  // Expected keypoint positions in meters, mixed into one place point.
  const Index K = cfg_.keypoints, bh = bottom.dim(2), bw = bottom.dim(3);
  const double stride = static_cast<double>(H) / bh;
  Tensor<Scalar> grid({bh * bw, 2});
  for (Index i = 0; i < bh; ++i)
    for (Index j = 0; j < bw; ++j) {
      grid.at({i * bw + j, 0}) = static_cast<Scalar>((j + 0.5) * stride / ppm);
      grid.at({i * bw + j, 1}) = static_cast<Scalar>((i + 0.5) * stride / ppm);
    }
  Var<Scalar> heat = softmax(reshape(apply(p, keypoint_, bottom, 1, 0), {B, K, bh * bw}), -1);
  const Var<Scalar> kps = matmul(heat, tape.constant(grid));                       // [B, K, 2]
  const Var<Scalar> weights = reshape(softmax(p[mix_], -1), {K, 1});
  const Var<Scalar> point = reshape(matmul(transpose(kps, {0, 2, 1}), weights), {B, 2});

  Tensor<Scalar> cx({1, H * W}), cy({1, H * W});
  for (Index v = 0; v < H; ++v)
    for (Index u = 0; u < W; ++u) {
      cx[v * W + u] = static_cast<Scalar>((u + 0.5) / ppm);
      cy[v * W + u] = static_cast<Scalar>((v + 0.5) / ppm);
    }
  const Var<Scalar> dx = tape.constant(cx) - slice(point, 1, 0, 1);
  const Var<Scalar> dy = tape.constant(cy) - slice(point, 1, 1, 1);
  const Scalar k = static_cast<Scalar>(-0.5 / (cfg_.keypoint_sigma_m * cfg_.keypoint_sigma_m));
  const Var<Scalar> bump = reshape(scale(dx * dx + dy * dy, k) * p[gain_], {B, 1, H, W});
  return concat<Scalar>({slice(q, 1, 0, 1), slice(q, 1, 1, 1) + bump}, 1);
}

template <typename Scalar>
Tensor<Scalar> AffordModel<Scalar>::qmaps(const AffordBatch<Scalar>& batch, double ppm) const {
  Tape<Scalar> tape;
  ParameterBinding<Scalar> p(tape, params_, false);
  return forward(p, batch, ppm).value();
}

template <typename Scalar>
Var<Scalar> afford_loss(const Var<Scalar>& logits, std::span<const Index> pick_index,
                        std::span<const Index> place_index) {
  if (logits.rank() != 4 || logits.dim(1) != 2)
    throw ShapeError("afford_loss: expected logits [B, 2, H, W], got " +
                     shape_str(logits.shape()));
  const Index B = logits.dim(0), HW = logits.dim(2) * logits.dim(3);
  if (static_cast<Index>(pick_index.size()) != B || static_cast<Index>(place_index.size()) != B)
    throw ShapeError("afford_loss: one ground-truth pixel per sample required");
  for (Index i = 0; i < B; ++i)
    if (pick_index[i] < 0 || pick_index[i] >= HW || place_index[i] < 0 || place_index[i] >= HW)
      throw ShapeError("afford_loss: ground-truth pixel out of range");
  const Var<Scalar> flat = reshape(logits, {B, 2, HW});
  const Var<Scalar> pick = log_softmax(reshape(slice(flat, 1, 0, 1), {B, HW}), -1);
  const Var<Scalar> place = log_softmax(reshape(slice(flat, 1, 1, 1), {B, HW}), -1);
  const Var<Scalar> total = sum(gather_rows(pick, pick_index)) + sum(gather_rows(place, place_index));
  return scale(total, Scalar(-1) / static_cast<Scalar>(B));
}

template <typename Scalar>
Pixel decode(std::span<const Scalar> qmap, int width) {
  if (qmap.empty() || width <= 0) throw ShapeError("decode: empty map");
  std::size_t best = 0;
  for (std::size_t i = 1; i < qmap.size(); ++i)
    if (qmap[i] > qmap[best]) best = i;
  return {static_cast<int>(best % width), static_cast<int>(best / width)};
}

template <typename Scalar>
double afford_train_step(AffordModel<Scalar>& model, const AffordBatch<Scalar>& batch,
                         double ppm, AdamState<Scalar>& adam) {
  if (batch.pick_index.empty()) throw ShapeError("afford_train_step: batch has no labels");
  Tape<Scalar> tape;
  ParameterBinding<Scalar> p(tape, model.params());
  const Var<Scalar> loss =
      afford_loss(model.forward(p, batch, ppm), batch.pick_index, batch.place_index);
  tape.backward(loss);
  const auto grads = p.gradients();
  adam_step<Scalar>(model.params().tensors(), grads, adam);
  return static_cast<double>(loss.value().item());
}

void save_afford(const std::filesystem::path& path, const AffordModel<float>& model,
                 const nlohmann::json& extra) {
  Checkpoint ckpt;
  ckpt.magic = kAffordMagic;
  ckpt.config = extra;
  ckpt.config["afford"] = model.config().to_json();
  append_parameters(ckpt, model.params());
  save_checkpoint(path, ckpt);
}

AffordModel<float> load_afford(const std::filesystem::path& path, nlohmann::json* header) {
  const Checkpoint ckpt = load_checkpoint(path, kAffordMagic);
  AffordModel<float> model(AffordConfig::from_json(ckpt.config.at("afford")), 0);
  assign_parameters(ckpt, model.params());
  if (header) *header = ckpt.config;
  return model;
}

#define RELMASK_AFFORD_INSTANTIATE(S)                                                        \
  template AffordBatch<S> make_afford_batch<S>(std::span<const AffordSample>);               \
  template class AffordModel<S>;                                                             \
  template Var<S> afford_loss(const Var<S>&, std::span<const Index>, std::span<const Index>); \
  template Pixel decode(std::span<const S>, int);                                            \
  template double afford_train_step(AffordModel<S>&, const AffordBatch<S>&, double,          \
                                    AdamState<S>&);

RELMASK_AFFORD_INSTANTIATE(float)
RELMASK_AFFORD_INSTANTIATE(double)

}  // namespace relmask
