#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mst/ops.hpp"
#include "mst/rng.hpp"
#include "mst/tensor.hpp"

namespace mst {

struct ModelConfig {
  std::size_t c_d = 256;
  std::size_t heads = 4;
  std::size_t encoder_layers = 6;
  std::size_t decoder_layers = 6;
  std::size_t mlp_hidden = 0;  // 0 = same as c_d
  std::size_t head_hidden = 1024;
  double dropout_p = 0.1;
  std::size_t n_scenes = 1;
  std::size_t input_hw = 224;
  /// One entry per stride-2 stage; the stage count is log2(map_x_stride).
  std::vector<std::size_t> backbone_channels{16, 24, 40, 112};
  std::size_t map_x_stride = 16;
  std::size_t map_q_stride = 8;

  std::size_t mlp_width() const { return mlp_hidden == 0 ? c_d : mlp_hidden; }
  std::size_t map_x_side() const { return input_hw / map_x_stride; }
  std::size_t map_q_side() const { return input_hw / map_q_stride; }
  /// Channel count of the stride-8 (orientation) and stride-16 (position) taps.
  std::size_t map_q_channels() const;
  std::size_t map_x_channels() const;
  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class Branch { position, orientation };

const char* branch_name(Branch b);

struct ForwardContext {
  bool training = false;
  RngState* rng = nullptr;  // required when training
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;
};

template <typename T>
struct LinearParams {
  Tensor<T> weight, bias;  // [in x out], [out]
};

template <typename T>
struct EncoderLayerParams {
  LayerNormParams<T> norm1;
  AttentionParams<T> self_attn;
  LayerNormParams<T> norm2;
  LinearParams<T> fc1, fc2;
};

template <typename T>
struct DecoderLayerParams {
  LayerNormParams<T> norm1;
  AttentionParams<T> self_attn;
  LayerNormParams<T> norm2;
  AttentionParams<T> cross_attn;
  LayerNormParams<T> norm3;
  LinearParams<T> fc1, fc2;
};

template <typename T>
struct BranchParams {
  Tensor<T> proj_weight, proj_bias;  // 1x1 conv: [1 x 1 x c_a x c_d], [c_d]
  Tensor<T> e_u, e_v;                // [w_a x c_d/2], [h_a x c_d/2]
  std::vector<EncoderLayerParams<T>> encoder;
  LayerNormParams<T> encoder_norm;
  Tensor<T> queries;  // [N x c_d]
  std::vector<DecoderLayerParams<T>> decoder;
  LayerNormParams<T> decoder_norm;
  LinearParams<T> head_fc1, head_fc2;  // c_d -> head_hidden -> 3 or 4
};

template <typename T>
struct BackboneStage {
  Tensor<T> weight, bias;  // 3x3 stride-2 conv
};

template <typename T>
struct ActivationPair {
  Tensor<T> a_x;  // [H/16 x W/16 x C1]
  Tensor<T> a_q;  // [H/8 x W/8 x C2]
};

template <typename T>
struct EncoderResult {
  Tensor<T> out;
  Tensor<T> last_attn;                // [heads x S x S]
  std::vector<Tensor<T>> self_attn;   // one per layer
};

template <typename T>
struct DecoderResult {
  Tensor<T> out;  // [N x c_d]
  std::vector<Tensor<T>> self_attn;   // [heads x N x N] per layer
  std::vector<Tensor<T>> cross_attn;  // [heads x N x S] per layer
};

template <typename T>
struct ForwardOutput {
  Tensor<T> x_hat;           // [3]
  Tensor<T> q_hat;           // [4], not normalized
  Tensor<T> scene_logprobs;  // [N]
  std::size_t selected_scene = 0;
  Tensor<T> encoder_attn_x, encoder_attn_q;  // final encoder layer
  Tensor<T> decoder_x, decoder_q;            // [N x c_d]
  /// Every attention map produced by the pass (encoder self, decoder self,
  /// decoder cross, both branches).
  std::vector<Tensor<T>> attention_maps;
};

/// Separable learned encoding: row i*w_a + j is [e_u[j]; e_v[i]].
template <typename T>
Tensor<T> positional_encoding(std::size_t h_a, std::size_t w_a, const Tensor<T>& e_u, const Tensor<T>& e_v);

/// Projects an activation map with a 1x1 conv, flattens row-major and adds
/// the positional encoding.
template <typename T>
Tensor<T> prepare_sequence(const Tensor<T>& activation, const Tensor<T>& proj_weight, const Tensor<T>& proj_bias,
                           const Tensor<T>& e_pos);

/// Pre-norm encoder stack followed by a final LayerNorm. `e_pos` is added to
/// the query and key inputs of every self-attention.
template <typename T>
EncoderResult<T> encoder_forward(const Tensor<T>& z0, const Tensor<T>& e_pos,
                                 const std::vector<EncoderLayerParams<T>>& layers, const LayerNormParams<T>& final_norm,
                                 std::size_t heads, double dropout_p, const ForwardContext& ctx);

/// Parallel (non-autoregressive) decoder over the learnt scene queries. The
/// slot state starts as the queries, which are also added to the attention
/// queries/keys as the slots' positional terms.
template <typename T>
DecoderResult<T> decoder_forward(const Tensor<T>& queries, const Tensor<T>& memory, const Tensor<T>& e_pos,
                                 const std::vector<DecoderLayerParams<T>>& layers, const LayerNormParams<T>& final_norm,
                                 std::size_t heads, double dropout_p, const ForwardContext& ctx);

/// Scores each slot's [X_i; Q_i] with one shared linear unit and returns the
/// log-softmax over slots.
template <typename T>
Tensor<T> classify_scene(const Tensor<T>& x_outputs, const Tensor<T>& q_outputs, const LinearParams<T>& fc);

/// Lowest index of the maximum.
template <typename T>
std::size_t argmax_scene(const Tensor<T>& logprobs);

template <typename T>
Tensor<T> regression_head(const Tensor<T>& slot, const LinearParams<T>& fc1, const LinearParams<T>& fc2);

/// Multi-scene pose regressor with separate position and orientation
/// transformers over a shared convolutional trunk. Parameters are owned by
/// the instance; it is not copyable.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  /// nullptr if absent.
  Parameter<T>* find(const std::string& name);
  std::size_t parameter_count() const;
  void zero_grad();

  const BranchParams<T>& branch(Branch b) const { return b == Branch::position ? x_ : q_; }

  ActivationPair<T> backbone_forward(const Tensor<T>& image) const;

  /// Override, when given, selects the regressed slot (ground-truth scene at
  /// train time); otherwise the argmax of the scene log-probabilities.
  ForwardOutput<T> select_and_regress(const Tensor<T>& x_outputs, const Tensor<T>& q_outputs,
                                      const Tensor<T>& logprobs, std::optional<std::size_t> override) const;

  ForwardOutput<T> forward(const Tensor<T>& image, std::optional<std::size_t> gt_scene,
                           const ForwardContext& ctx = {}) const;

 private:
  Tensor<T> add_param(const std::string& name, Shape shape, double init_std, RngState& rng);
  Tensor<T> add_const_param(const std::string& name, Shape shape, T value);
  void build_branch(BranchParams<T>& p, const std::string& prefix, std::size_t channels, std::size_t side,
                    std::size_t out_dim, RngState& rng);

  ModelConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<BackboneStage<T>> backbone_;
  BranchParams<T> x_, q_;
  LinearParams<T> classifier_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace mst
