#include "mst/model.hpp"

#include <bit>
#include <cmath>
#include <unordered_set>

#include "mst/errors.hpp"

namespace mst {

namespace {

std::size_t stage_count(const ModelConfig& c) { return static_cast<std::size_t>(std::countr_zero(c.map_x_stride)); }

}  // namespace

const char* branch_name(Branch b) { return b == Branch::position ? "position" : "orientation"; }

std::size_t ModelConfig::map_q_channels() const {
  return backbone_channels.at(static_cast<std::size_t>(std::countr_zero(map_q_stride)) - 1);
}

std::size_t ModelConfig::map_x_channels() const { return backbone_channels.back(); }

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (c_d == 0 || c_d % 2 != 0) fail("c_d must be even and positive");
  if (heads == 0 || c_d % heads != 0) fail("c_d must be divisible by heads");
  if (encoder_layers == 0 || decoder_layers == 0) fail("encoder/decoder layer counts must be >= 1");
  if (head_hidden == 0) fail("head_hidden must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
  if (n_scenes == 0) fail("n_scenes must be >= 1");
  if (!std::has_single_bit(map_q_stride) || map_q_stride < 2) fail("map_q_stride must be a power of two >= 2");
  if (map_x_stride != 2 * map_q_stride) fail("map_x_stride must be exactly 2 * map_q_stride");
  if (input_hw == 0 || input_hw % map_x_stride != 0 || input_hw % map_q_stride != 0) {
    fail("input_hw must be divisible by map_x_stride and map_q_stride");
  }
  if (backbone_channels.size() != stage_count(*this)) {
    fail("backbone_channels needs log2(map_x_stride) = " + std::to_string(stage_count(*this)) + " entries");
  }
  for (std::size_t ch : backbone_channels) {
    if (ch == 0) fail("backbone channel counts must be >= 1");
  }
}

template <typename T>
Tensor<T> positional_encoding(std::size_t h_a, std::size_t w_a, const Tensor<T>& e_u, const Tensor<T>& e_v) {
  if (e_u.rank() != 2 || e_v.rank() != 2 || e_u.dim(0) != w_a || e_v.dim(0) != h_a || e_u.dim(1) != e_v.dim(1)) {
    throw ShapeError("positional_encoding: e_u " + shape_str(e_u.shape()) + ", e_v " + shape_str(e_v.shape()) +
                     " for a " + std::to_string(h_a) + "x" + std::to_string(w_a) + " map");
  }
  const std::size_t half = e_u.dim(1);
  const std::size_t c = 2 * half;
  std::vector<T> y(h_a * w_a * c);
  const auto u = e_u.data();
  const auto v = e_v.data();
  for (std::size_t i = 0; i < h_a; ++i) {
    for (std::size_t j = 0; j < w_a; ++j) {
      T* row = y.data() + (i * w_a + j) * c;
      std::copy_n(u.begin() + j * half, half, row);
      std::copy_n(v.begin() + i * half, half, row + half);
    }
  }
  return make_result<T>("positional_encoding", {h_a * w_a, c}, std::move(y), {e_u, e_v},
                        [h_a, w_a, half, c](const TensorImpl<T>& out) {
                          TensorImpl<T>& U = *out.node->inputs[0];
                          TensorImpl<T>& V = *out.node->inputs[1];
                          T* gu = U.requires_grad ? U.grad_buffer().data() : nullptr;
                          T* gv = V.requires_grad ? V.grad_buffer().data() : nullptr;
                          for (std::size_t i = 0; i < h_a; ++i) {
                            for (std::size_t j = 0; j < w_a; ++j) {
                              const T* g = out.grad.data() + (i * w_a + j) * c;
                              for (std::size_t k = 0; k < half; ++k) {
                                if (gu) gu[j * half + k] += g[k];
                                if (gv) gv[i * half + k] += g[half + k];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> prepare_sequence(const Tensor<T>& activation, const Tensor<T>& proj_weight, const Tensor<T>& proj_bias,
                           const Tensor<T>& e_pos) {
  if (activation.rank() != 3) throw ShapeError("prepare_sequence: activation must be [h x w x c]");
  const Tensor<T> projected = conv2d(activation, proj_weight, proj_bias, 1, 0);
  const std::size_t tokens = activation.dim(0) * activation.dim(1);
  const Tensor<T> flat = reshape(projected, {tokens, projected.dim(2)});
  if (e_pos.shape() != flat.shape()) {
    throw ShapeError("prepare_sequence: positional encoding " + shape_str(e_pos.shape()) + " vs sequence " +
                     shape_str(flat.shape()));
  }
  return add(flat, e_pos);
}

namespace {

template <typename T>
Tensor<T> norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  return layer_norm(x, p.gamma, p.beta);
}

template <typename T>
Tensor<T> drop(const Tensor<T>& x, double p, const ForwardContext& ctx) {
  if (!ctx.training) return x;
  if (ctx.rng == nullptr) throw ContractError("training forward needs an RNG");
  return dropout(x, p, *ctx.rng, true);
}

template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const LinearParams<T>& fc1, const LinearParams<T>& fc2, double p,
              const ForwardContext& ctx) {
  return linear(drop(gelu(linear(x, fc1.weight, fc1.bias)), p, ctx), fc2.weight, fc2.bias);
}

}  // namespace

template <typename T>
EncoderResult<T> encoder_forward(const Tensor<T>& z0, const Tensor<T>& e_pos,
                                 const std::vector<EncoderLayerParams<T>>& layers, const LayerNormParams<T>& final_norm,
                                 std::size_t heads, double dropout_p, const ForwardContext& ctx) {
  if (z0.rank() != 2 || z0.shape() != e_pos.shape()) {
    throw ShapeError("encoder_forward: sequence " + shape_str(z0.shape()) + " vs positions " + shape_str(e_pos.shape()));
  }
  EncoderResult<T> r;
  Tensor<T> z = z0;
  for (const auto& layer : layers) {
    const Tensor<T> h = norm(z, layer.norm1);
    const Tensor<T> qk = add(h, e_pos);
    auto attn = multi_head_attention(qk, qk, h, heads, layer.self_attn);
    z = add(z, drop(attn.out, dropout_p, ctx));
    r.self_attn.push_back(attn.attn);
    z = add(z, drop(mlp(norm(z, layer.norm2), layer.fc1, layer.fc2, dropout_p, ctx), dropout_p, ctx));
  }
  r.out = norm(z, final_norm);
  if (!r.self_attn.empty()) r.last_attn = r.self_attn.back();
  return r;
}

template <typename T>
DecoderResult<T> decoder_forward(const Tensor<T>& queries, const Tensor<T>& memory, const Tensor<T>& e_pos,
                                 const std::vector<DecoderLayerParams<T>>& layers, const LayerNormParams<T>& final_norm,
                                 std::size_t heads, double dropout_p, const ForwardContext& ctx) {
  if (queries.rank() != 2 || memory.rank() != 2 || memory.shape() != e_pos.shape() ||
      queries.dim(1) != memory.dim(1)) {
    throw ShapeError("decoder_forward: queries " + shape_str(queries.shape()) + ", memory " +
                     shape_str(memory.shape()) + ", positions " + shape_str(e_pos.shape()));
  }
  DecoderResult<T> r;
  const Tensor<T> keys = add(memory, e_pos);
  Tensor<T> t = queries;
  for (const auto& layer : layers) {
    const Tensor<T> h1 = norm(t, layer.norm1);
    const Tensor<T> qk = add(h1, queries);
    auto self = multi_head_attention(qk, qk, h1, heads, layer.self_attn);
    t = add(t, drop(self.out, dropout_p, ctx));
    r.self_attn.push_back(self.attn);

    const Tensor<T> h2 = norm(t, layer.norm2);
    auto cross = multi_head_attention(add(h2, queries), keys, memory, heads, layer.cross_attn);
    t = add(t, drop(cross.out, dropout_p, ctx));
    r.cross_attn.push_back(cross.attn);

    t = add(t, drop(mlp(norm(t, layer.norm3), layer.fc1, layer.fc2, dropout_p, ctx), dropout_p, ctx));
  }
  r.out = norm(t, final_norm);
  return r;
}

template <typename T>
Tensor<T> classify_scene(const Tensor<T>& x_outputs, const Tensor<T>& q_outputs, const LinearParams<T>& fc) {
  if (x_outputs.rank() != 2 || q_outputs.rank() != 2 || x_outputs.dim(0) != q_outputs.dim(0)) {
    throw ContractError("classify_scene: slot counts differ, " + shape_str(x_outputs.shape()) + " vs " +
                        shape_str(q_outputs.shape()));
  }
  const std::size_t n = x_outputs.dim(0);
  const Tensor<T> scores = linear(concat<T>({x_outputs, q_outputs}, 1), fc.weight, fc.bias);
  return log_softmax(reshape(scores, {n}), 0);
}

template <typename T>
std::size_t argmax_scene(const Tensor<T>& logprobs) {
  const auto v = logprobs.data();
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

template <typename T>
Tensor<T> regression_head(const Tensor<T>& slot, const LinearParams<T>& fc1, const LinearParams<T>& fc2) {
  const Tensor<T> y = linear(gelu(linear(slot, fc1.weight, fc1.bias)), fc2.weight, fc2.bias);
  return reshape(y, {y.numel()});
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  RngState rng{seed, 0};

  std::size_t in_ch = 3;
  for (std::size_t s = 0; s < config_.backbone_channels.size(); ++s) {
    const std::size_t out_ch = config_.backbone_channels[s];
    const std::string prefix = "backbone.stage" + std::to_string(s);
    // He-normal init.
    const double he_std = std::sqrt(2.0 / static_cast<double>(9 * in_ch));
    backbone_.push_back({add_param(prefix + ".weight", {3, 3, in_ch, out_ch}, he_std, rng),
                         add_const_param(prefix + ".bias", {out_ch}, T(0))});
    in_ch = out_ch;
  }
  build_branch(x_, "x", config_.map_x_channels(), config_.map_x_side(), 3, rng);
  build_branch(q_, "q", config_.map_q_channels(), config_.map_q_side(), 4, rng);
  classifier_ = {add_param("classifier.weight", {2 * config_.c_d, 1}, 0.02, rng),
                 add_const_param("classifier.bias", {1}, T(0))};
}

template <typename T>
Tensor<T> Model<T>::add_param(const std::string& name, Shape shape, double init_std, RngState& rng) {
  std::vector<T> data(shape_numel(shape));
  for (T& v : data) v = static_cast<T>(init_std * rng.normal());
  Tensor<T> t = Tensor<T>::leaf(std::move(shape), std::move(data));
  params_.push_back({name, t});
  return t;
}

template <typename T>
Tensor<T> Model<T>::add_const_param(const std::string& name, Shape shape, T value) {
  Tensor<T> t = Tensor<T>::leaf(shape, std::vector<T>(shape_numel(shape), value));
  params_.push_back({name, t});
  return t;
}

template <typename T>
void Model<T>::build_branch(BranchParams<T>& p, const std::string& prefix, std::size_t channels, std::size_t side,
                            std::size_t out_dim, RngState& rng) {
  const std::size_t c = config_.c_d;
  const std::size_t hidden = config_.mlp_width();
  auto layer_norm_params = [&](const std::string& name) {
    return LayerNormParams<T>{add_const_param(name + ".gamma", {c}, T(1)), add_const_param(name + ".beta", {c}, T(0))};
  };
  auto linear_params = [&](const std::string& name, std::size_t in, std::size_t out) {
    return LinearParams<T>{add_param(name + ".weight", {in, out}, 0.02, rng), add_const_param(name + ".bias", {out}, T(0))};
  };
  auto attention_params = [&](const std::string& name) {
    AttentionParams<T> a;
    a.wq = add_param(name + ".wq", {c, c}, 0.02, rng);
    a.bq = add_const_param(name + ".bq", {c}, T(0));
    a.wk = add_param(name + ".wk", {c, c}, 0.02, rng);
    a.bk = add_const_param(name + ".bk", {c}, T(0));
    a.wv = add_param(name + ".wv", {c, c}, 0.02, rng);
    a.bv = add_const_param(name + ".bv", {c}, T(0));
    a.wo = add_param(name + ".wo", {c, c}, 0.02, rng);
    a.bo = add_const_param(name + ".bo", {c}, T(0));
    return a;
  };

  p.proj_weight = add_param(prefix + ".proj.weight", {1, 1, channels, c}, 0.02, rng);
  p.proj_bias = add_const_param(prefix + ".proj.bias", {c}, T(0));
  p.e_u = add_param(prefix + ".pos.e_u", {side, c / 2}, 0.02, rng);
  p.e_v = add_param(prefix + ".pos.e_v", {side, c / 2}, 0.02, rng);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string n = prefix + ".encoder." + std::to_string(l);
    EncoderLayerParams<T> layer;
    layer.norm1 = layer_norm_params(n + ".norm1");
    layer.self_attn = attention_params(n + ".self_attn");
    layer.norm2 = layer_norm_params(n + ".norm2");
    layer.fc1 = linear_params(n + ".fc1", c, hidden);
    layer.fc2 = linear_params(n + ".fc2", hidden, c);
    p.encoder.push_back(std::move(layer));
  }
  p.encoder_norm = layer_norm_params(prefix + ".encoder.norm");
  p.queries = add_param(prefix + ".queries", {config_.n_scenes, c}, 0.02, rng);
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string n = prefix + ".decoder." + std::to_string(l);
    DecoderLayerParams<T> layer;
    layer.norm1 = layer_norm_params(n + ".norm1");
    layer.self_attn = attention_params(n + ".self_attn");
    layer.norm2 = layer_norm_params(n + ".norm2");
    layer.cross_attn = attention_params(n + ".cross_attn");
    layer.norm3 = layer_norm_params(n + ".norm3");
    layer.fc1 = linear_params(n + ".fc1", c, hidden);
    layer.fc2 = linear_params(n + ".fc2", hidden, c);
    p.decoder.push_back(std::move(layer));
  }
  p.decoder_norm = layer_norm_params(prefix + ".decoder.norm");
  p.head_fc1 = linear_params(prefix + ".head.fc1", c, config_.head_hidden);
  p.head_fc2 = linear_params(prefix + ".head.fc2", config_.head_hidden, out_dim);
}

template <typename T>
Parameter<T>* Model<T>::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
ActivationPair<T> Model<T>::backbone_forward(const Tensor<T>& image) const {
  const std::size_t hw = config_.input_hw;
  if (image.shape() != Shape{hw, hw, 3}) {
    throw ShapeError("backbone: expected image " + shape_str({hw, hw, 3}) + ", got " + shape_str(image.shape()));
  }
  const std::size_t q_stage = static_cast<std::size_t>(std::countr_zero(config_.map_q_stride)) - 1;
  ActivationPair<T> out;
  Tensor<T> h = image;
  for (std::size_t s = 0; s < backbone_.size(); ++s) {
    h = gelu(conv2d(h, backbone_[s].weight, backbone_[s].bias, 2, 1));
    if (s == q_stage) out.a_q = h;
  }
  out.a_x = h;
  return out;
}

template <typename T>
ForwardOutput<T> Model<T>::select_and_regress(const Tensor<T>& x_outputs, const Tensor<T>& q_outputs,
                                              const Tensor<T>& logprobs, std::optional<std::size_t> override) const {
  const std::size_t n = logprobs.numel();
  if (override && *override >= n) {
    throw ContractError("scene override " + std::to_string(*override) + " out of range for " + std::to_string(n) +
                        " scenes");
  }
  ForwardOutput<T> out;
  out.selected_scene = override ? *override : argmax_scene(logprobs);
  out.scene_logprobs = logprobs;
  out.decoder_x = x_outputs;
  out.decoder_q = q_outputs;
  out.x_hat = regression_head(slice(x_outputs, 0, out.selected_scene, 1), x_.head_fc1, x_.head_fc2);
  out.q_hat = regression_head(slice(q_outputs, 0, out.selected_scene, 1), q_.head_fc1, q_.head_fc2);
  return out;
}

template <typename T>
ForwardOutput<T> Model<T>::forward(const Tensor<T>& image, std::optional<std::size_t> gt_scene,
                                   const ForwardContext& ctx) const {
  const ActivationPair<T> maps = backbone_forward(image);
  std::vector<Tensor<T>> attention;

  auto run_branch = [&](const BranchParams<T>& p, const Tensor<T>& activation, Tensor<T>& last_attn) {
    const Tensor<T> pos = positional_encoding(activation.dim(0), activation.dim(1), p.e_u, p.e_v);
    const Tensor<T> z0 = prepare_sequence(activation, p.proj_weight, p.proj_bias, pos);
    auto enc = encoder_forward(z0, pos, p.encoder, p.encoder_norm, config_.heads, config_.dropout_p, ctx);
    auto dec = decoder_forward(p.queries, enc.out, pos, p.decoder, p.decoder_norm, config_.heads, config_.dropout_p, ctx);
    last_attn = enc.last_attn;
    for (auto* list : {&enc.self_attn, &dec.self_attn, &dec.cross_attn})
      attention.insert(attention.end(), list->begin(), list->end());
    return dec.out;
  };

  Tensor<T> attn_x, attn_q;
  const Tensor<T> dec_x = run_branch(x_, maps.a_x, attn_x);
  const Tensor<T> dec_q = run_branch(q_, maps.a_q, attn_q);
  const Tensor<T> logprobs = classify_scene(dec_x, dec_q, classifier_);

  ForwardOutput<T> out = select_and_regress(dec_x, dec_q, logprobs, gt_scene);
  out.encoder_attn_x = attn_x;
  out.encoder_attn_q = attn_q;
  out.attention_maps = std::move(attention);
  return out;
}

template class Model<float>;
template class Model<double>;

#define MST_INSTANTIATE(T)                                                                                     \
  template Tensor<T> positional_encoding<T>(std::size_t, std::size_t, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> prepare_sequence<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template EncoderResult<T> encoder_forward<T>(const Tensor<T>&, const Tensor<T>&,                             \
                                               const std::vector<EncoderLayerParams<T>>&,                      \
                                               const LayerNormParams<T>&, std::size_t, double,                 \
                                               const ForwardContext&);                                         \
  template DecoderResult<T> decoder_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                               const std::vector<DecoderLayerParams<T>>&,                      \
                                               const LayerNormParams<T>&, std::size_t, double,                 \
                                               const ForwardContext&);                                         \
  template Tensor<T> classify_scene<T>(const Tensor<T>&, const Tensor<T>&, const LinearParams<T>&);            \
  template std::size_t argmax_scene<T>(const Tensor<T>&);                                                      \
  template Tensor<T> regression_head<T>(const Tensor<T>&, const LinearParams<T>&, const LinearParams<T>&);
MST_INSTANTIATE(float)
MST_INSTANTIATE(double)
#undef MST_INSTANTIATE

}  // namespace mst
