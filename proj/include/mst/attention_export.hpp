#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "mst/model.hpp"

namespace mst {

/// Mean over heads and query rows of a [heads x S x S] attention tensor,
/// laid out as an h_a x w_a map, bilinearly upsampled to out_hw x out_hw and
/// min-max normalized to [0, 1]. A constant map normalizes to all zeros.
std::vector<double> attention_heatmap(const Tensor<float>& attn, std::size_t h_a, std::size_t w_a, std::size_t out_hw);

/// L2 norm of each decoder output row (one per scene slot).
std::vector<double> decoder_row_norms(const Tensor<float>& decoder_outputs);

struct AttentionFiles {
  std::filesystem::path heatmap;      // 8-bit P5, input_hw x input_hw
  std::filesystem::path decoder_csv;  // scene_id,l2_norm
};

/// Writes the heatmap to `target` and the per-scene decoder activations to
/// `<target stem>_decoder.csv` next to it.
AttentionFiles export_attention(const ForwardOutput<float>& out, const ModelConfig& config, Branch branch,
                                const std::filesystem::path& target);

}  // namespace mst
