#include "relmask/ssr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relmask/errors.hpp"
#include "relmask/serialize.hpp"

namespace relmask {

void SSRConfig::validate() const {
  if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || d_model % n_heads != 0)
    throw std::invalid_argument("ssr: d_model must be a positive multiple of n_heads");
  if (mlp_hidden <= 0 || word_dim <= 0 || patch_dim <= 0 || coord_dim <= 0 || type_dim <= 0 ||
      pos_dim <= 0 || head_hidden <= 0 || max_words <= 0 || vocab_size <= 2)
    throw std::invalid_argument("ssr: non-positive width");
  if (patch_px < 8) throw std::invalid_argument("ssr: patch_px must be at least 8");
}

nlohmann::json SSRConfig::to_json() const {
  return {{"d_model", d_model},     {"n_layers", n_layers},   {"n_heads", n_heads},
          {"mlp_hidden", mlp_hidden}, {"word_dim", word_dim}, {"patch_dim", patch_dim},
          {"coord_dim", coord_dim}, {"type_dim", type_dim},   {"pos_dim", pos_dim},
          {"head_hidden", head_hidden}, {"max_words", max_words},
          {"vocab_size", vocab_size}, {"patch_px", patch_px}};
}

SSRConfig SSRConfig::from_json(const nlohmann::json& j) {
  SSRConfig c;
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.mlp_hidden = j.at("mlp_hidden");
  c.word_dim = j.at("word_dim");
  c.patch_dim = j.at("patch_dim");
  c.coord_dim = j.at("coord_dim");
  c.type_dim = j.at("type_dim");
  c.pos_dim = j.at("pos_dim");
  c.head_hidden = j.at("head_hidden");
  c.max_words = j.at("max_words");
  c.vocab_size = j.at("vocab_size");
  c.patch_px = j.at("patch_px");
  c.validate();
  return c;
}

template <typename Scalar>
SSRBatch<Scalar> make_ssr_batch(std::span<const SSRInput> inputs) {
  if (inputs.empty()) throw ShapeError("ssr batch: no samples");
  SSRBatch<Scalar> b;
  b.batch = static_cast<Index>(inputs.size());
  b.words_len = static_cast<Index>(inputs[0].words.size());
  b.objects = static_cast<Index>(inputs[0].patches.size());
  if (b.words_len == 0 || b.objects == 0) throw ShapeError("ssr batch: empty words or objects");
  const Index P = inputs[0].patches[0].height;
  const bool labeled = !inputs[0].label.empty();

  b.patches = Tensor<Scalar>({b.batch * b.objects, 3, P, P});
  b.coords = Tensor<Scalar>({b.batch, b.objects, 2});
  if (labeled) b.labels = Tensor<Scalar>({b.batch, b.objects});
  Scalar* pp = b.patches.ptr();
  for (Index i = 0; i < b.batch; ++i) {
    const SSRInput& in = inputs[i];
    if (static_cast<Index>(in.words.size()) != b.words_len ||
        static_cast<Index>(in.patches.size()) != b.objects ||
        static_cast<Index>(in.coords.size()) != b.objects ||
        (labeled && static_cast<Index>(in.label.size()) != b.objects))
      throw ShapeError("ssr batch: samples differ in word or object count");
    b.words.insert(b.words.end(), in.words.begin(), in.words.end());
    for (Index j = 0; j < b.objects; ++j) {
      const Image& img = in.patches[j];
      if (img.height != P || img.width != P) throw ShapeError("ssr batch: patch size mismatch");
      // HWC bytes to CHW floats.
      for (int c = 0; c < 3; ++c)
        for (int v = 0; v < P; ++v)
          for (int u = 0; u < P; ++u) *pp++ = static_cast<Scalar>(img.px(v, u)[c]) / Scalar(255);
      b.coords.at({i, j, 0}) = static_cast<Scalar>(in.coords[j].x);
      b.coords.at({i, j, 1}) = static_cast<Scalar>(in.coords[j].y);
      if (labeled) b.labels.at({i, j}) = static_cast<Scalar>(in.label[j]);
    }
  }
  return b;
}

std::pair<Index, Index> center_window(Index n) {
  const Index len = std::max<Index>(1, static_cast<Index>(std::lround(n / 3.0)));
  return {(n - len) / 2, len};
}

template <typename Scalar>
SSRModel<Scalar>::SSRModel(const SSRConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  auto& ps = params_;
  const Index D = cfg_.d_model;
  word_emb_ = ps.add("word_emb", normal_tensor<Scalar>({cfg_.vocab_size, cfg_.word_dim}, 1.0, rng));
  word_pos_ = ps.add("word_pos", normal_tensor<Scalar>({cfg_.max_words, cfg_.pos_dim}, 0.02, rng));
  obj_pos_ = ps.add("obj_pos", normal_tensor<Scalar>({1, cfg_.pos_dim}, 0.02, rng));
  type_emb_ = ps.add("type_emb", normal_tensor<Scalar>({2, cfg_.type_dim}, 0.02, rng));
  conv1_ = add_conv(ps, "patch.conv1", 3, 16, 3, rng);
  conv2_ = add_conv(ps, "patch.conv2", 16, 32, 3, rng);
  patch_proj_ = add_linear(ps, "patch.proj", 32, cfg_.patch_dim, rng);
  coord_ = add_linear(ps, "coord", 2, cfg_.coord_dim, rng);
  word_proj_ = add_linear(ps, "word_proj", cfg_.word_dim + cfg_.pos_dim + cfg_.type_dim, D, rng);
  obj_proj_ = add_linear(ps, "obj_proj",
                         cfg_.patch_dim + cfg_.coord_dim + cfg_.pos_dim + cfg_.type_dim, D, rng);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string n = "blocks." + std::to_string(l) + ".";
    Block b;
    b.ln1 = add_layernorm(ps, n + "ln1", D);
    b.qkv.w = ps.add(n + "qkv.w", uniform_tensor<Scalar>({D, 3 * D}, std::sqrt(6.0 / (4.0 * D)), rng));
    b.qkv.b = ps.add(n + "qkv.b", Tensor<Scalar>({3 * D}));
    b.out = add_linear(ps, n + "out", D, D, rng);
    ps[b.out.b].fill(Scalar(0));
    b.ln2 = add_layernorm(ps, n + "ln2", D);
    b.mlp1 = add_linear(ps, n + "mlp1", D, cfg_.mlp_hidden, rng);
    b.mlp2 = add_linear(ps, n + "mlp2", cfg_.mlp_hidden, D, rng);
    blocks_.push_back(b);
  }
  final_ln_ = add_layernorm(ps, "final_ln", D);
  head_hidden_ = add_linear(ps, "head.hidden", D, cfg_.head_hidden, rng);
  head_out_ = add_linear(ps, "head.out", cfg_.head_hidden, 1, rng);
}

template <typename Scalar>
Var<Scalar> SSRModel<Scalar>::patch_features(ParameterBinding<Scalar>& p,
                                             const Tensor<Scalar>& patches) const {
  Tape<Scalar>& tape = p.tape();
  Var<Scalar> h = relu(apply(p, conv1_, tape.constant(patches), 2, 1));
  h = relu(apply(p, conv2_, h, 2, 1));
  // The object sits at the patch center; pooling the whole map would let
  // the background and neighbours swamp a small block's color.
  const auto [r0, rl] = center_window(h.dim(2));
  const auto [c0, cl] = center_window(h.dim(3));
  h = slice(slice(h, 2, r0, rl), 3, c0, cl);
  return apply(p, patch_proj_, mean(h, {2, 3}));
}

template <typename Scalar>
Var<Scalar> SSRModel<Scalar>::encode_tokens(ParameterBinding<Scalar>& p,
                                            const SSRBatch<Scalar>& b) const {
  const Index B = b.batch, L = b.words_len, m = b.objects;
  if (L == 0 || m == 0) throw ShapeError("ssr: empty words or objects");
  if (L > cfg_.max_words)
    throw ShapeError("ssr: " + std::to_string(L) + " words exceed max_words");
  if (b.patches.dim(2) != cfg_.patch_px)
    throw ShapeError("ssr: patch size differs from the model config");
  for (Index w : b.words)
    if (w < 0 || w >= cfg_.vocab_size) throw ShapeError("ssr: word id outside the vocabulary");

  std::vector<Index> positions(static_cast<std::size_t>(B * L));
  for (Index i = 0; i < B * L; ++i) positions[i] = i % L;
  const std::vector<Index> text_type(static_cast<std::size_t>(B * L), 0);
  const std::vector<Index> obj_type(static_cast<std::size_t>(B * m), 1);
  const std::vector<Index> obj_slot(static_cast<std::size_t>(B * m), 0);

  Var<Scalar> words = concat<Scalar>({embedding(p[word_emb_], b.words, {B, L}),
                                      embedding(p[word_pos_], positions, {B, L}),
                                      embedding(p[type_emb_], text_type, {B, L})},
                                     2);
  Var<Scalar> feats = reshape(patch_features(p, b.patches), {B, m, cfg_.patch_dim});
  Var<Scalar> coords = apply(p, coord_, p.tape().constant(b.coords));
  Var<Scalar> objs = concat<Scalar>({feats, coords, embedding(p[obj_pos_], obj_slot, {B, m}),
                                     embedding(p[type_emb_], obj_type, {B, m})},
                                    2);
  return concat<Scalar>({apply(p, word_proj_, words), apply(p, obj_proj_, objs)}, 1);
}

template <typename Scalar>
Var<Scalar> SSRModel<Scalar>::forward_tokens(ParameterBinding<Scalar>& p,
                                             const Var<Scalar>& tokens, Index objects) const {
  const Index B = tokens.dim(0), T = tokens.dim(1), D = cfg_.d_model;
  const Index H = cfg_.n_heads, dh = D / H;
  if (tokens.rank() != 3 || tokens.dim(2) != D || objects <= 0 || objects > T)
    throw ShapeError("ssr forward: bad token tensor " + shape_str(tokens.shape()));
  auto split_heads = [&](const Var<Scalar>& qkv, Index offset) {
    return transpose(reshape(slice(qkv, 2, offset, D), {B, T, H, dh}), {0, 2, 1, 3});
  };
  Var<Scalar> x = tokens;
  for (const Block& blk : blocks_) {
    const Var<Scalar> qkv = apply(p, blk.qkv, apply(p, blk.ln1, x));
    Var<Scalar> a = scaled_dot_attention(split_heads(qkv, 0), split_heads(qkv, D),
                                         split_heads(qkv, 2 * D));
    a = reshape(transpose(a, {0, 2, 1, 3}), {B, T, D});
    x = x + apply(p, blk.out, a);
    x = x + apply(p, blk.mlp2, relu(apply(p, blk.mlp1, apply(p, blk.ln2, x))));
  }
  Var<Scalar> objs = apply(p, final_ln_, slice(x, 1, T - objects, objects));
  Var<Scalar> s = apply(p, head_out_, relu(apply(p, head_hidden_, objs)));
  return reshape(s, {B, objects});
}

template <typename Scalar>
Var<Scalar> SSRModel<Scalar>::forward(ParameterBinding<Scalar>& p,
                                      const SSRBatch<Scalar>& batch) const {
  return forward_tokens(p, encode_tokens(p, batch), batch.objects);
}

template <typename Scalar>
Tensor<Scalar> SSRModel<Scalar>::scores(const SSRBatch<Scalar>& batch) const {
  Tape<Scalar> tape;
  ParameterBinding<Scalar> p(tape, params_, false);
  return forward(p, batch).value();
}

template <typename Scalar>
Var<Scalar> ssr_loss(const Var<Scalar>& scores, const Tensor<Scalar>& labels) {
  if (scores.shape() != labels.shape() || scores.rank() != 2)
    throw ShapeError("ssr_loss: scores " + shape_str(scores.shape()) + " vs labels " +
                     shape_str(labels.shape()));
  Tape<Scalar>& tape = scores.tape();
  const Var<Scalar> target = softmax(tape.constant(labels), -1);
  const Var<Scalar> diff = abs(softmax(scores, -1) - target);
  return scale(sum(diff), Scalar(1) / static_cast<Scalar>(scores.dim(0)));
}

std::vector<int> select_objects(std::span<const double> raw) {
  const std::size_t m = raw.size();
  if (m == 0) return {};
  const double mx = *std::max_element(raw.begin(), raw.end());
  std::vector<double> p(m);
  double z = 0;
  for (std::size_t i = 0; i < m; ++i) z += p[i] = std::exp(raw[i] - mx);
  std::vector<int> out;
  for (std::size_t i = 0; i < m; ++i)
    if (p[i] / z > 1.0 / static_cast<double>(m)) out.push_back(static_cast<int>(i));
  if (!out.empty()) return out;
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return raw[a] > raw[b]; });
  order.resize(std::min<std::size_t>(3, m));
  std::sort(order.begin(), order.end());
  return order;
}

template <typename Scalar>
double ssr_train_step(SSRModel<Scalar>& model, const SSRBatch<Scalar>& batch,
                      AdamState<Scalar>& adam) {
  if (batch.labels.empty()) throw ShapeError("ssr_train_step: batch has no labels");
  Tape<Scalar> tape;
  ParameterBinding<Scalar> p(tape, model.params());
  const Var<Scalar> loss = ssr_loss(model.forward(p, batch), batch.labels);
  tape.backward(loss);
  const auto grads = p.gradients();
  adam_step<Scalar>(model.params().tensors(), grads, adam);
  return static_cast<double>(loss.value().item());
}

void save_ssr(const std::filesystem::path& path, const SSRModel<float>& model,
              const nlohmann::json& extra) {
  Checkpoint ckpt;
  ckpt.magic = kSSRMagic;
  ckpt.config = extra;
  ckpt.config["ssr"] = model.config().to_json();
  append_parameters(ckpt, model.params());
  save_checkpoint(path, ckpt);
}

SSRModel<float> load_ssr(const std::filesystem::path& path, nlohmann::json* header) {
  const Checkpoint ckpt = load_checkpoint(path, kSSRMagic);
  SSRModel<float> model(SSRConfig::from_json(ckpt.config.at("ssr")), 0);
  assign_parameters(ckpt, model.params());
  if (header) *header = ckpt.config;
  return model;
}

#define RELMASK_SSR_INSTANTIATE(S)                                                         \
  template SSRBatch<S> make_ssr_batch<S>(std::span<const SSRInput>);                       \
  template class SSRModel<S>;                                                              \
  template Var<S> ssr_loss(const Var<S>&, const Tensor<S>&);                               \
  template double ssr_train_step(SSRModel<S>&, const SSRBatch<S>&, AdamState<S>&);

RELMASK_SSR_INSTANTIATE(float)
RELMASK_SSR_INSTANTIATE(double)

}  // namespace relmask
