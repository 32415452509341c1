#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sesf/adam.hpp"
#include "sesf/ops.hpp"
#include "sesf/tensor.hpp"

namespace sesf {

enum class Variant { kVanilla, kSts, kStsDw, kSes };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  std::size_t joints = 15;    // V
  std::size_t observed = 10;  // T, input frames
  std::size_t forecast = 25;  // K, predicted frames
  // Per-layer channel widths; channels[0] is the 3 input coordinates and
  // channels.size()-1 is the encoder depth.
  std::vector<std::size_t> channels = {3, 64, 64, 64, 64, 64};
  std::size_t tcn_layers = 4;
  std::size_t tcn_kernel = 3;
  // Number of groups in the depth-wise step; 0 means one group per channel
  // (pure depth-wise).
  std::size_t alpha = 0;
  Variant variant = Variant::kSes;

  std::size_t gcn_layers() const { return channels.empty() ? 0 : channels.size() - 1; }
  std::size_t groups_for(std::size_t c_in) const { return alpha == 0 ? c_in : alpha; }
  void validate() const;
};

// Binary spatial/temporal masks derived from a teacher; entries in {0,1}.
struct MaskPair {
  Tensor spatial;   // [V,V,T]
  Tensor temporal;  // [T,T,V]
  double epsilon_spatial = 0.0;
  double epsilon_temporal = 0.0;
  std::string teacher_id;
};

struct GcnLayer {
  Tensor full_adjacency;  // [V*T, V*T], vanilla only
  Tensor adj_spatial;     // [V,V,T], factored variants
  Tensor adj_temporal;    // [T,T,V]
  Tensor weight;          // [C_out, C_in] vanilla/sts
  Tensor weight_bias;
  Tensor w_dw;  // [C_in, C_in/groups] depth-wise variants
  Tensor w_dw_bias;
  Tensor w_mlp;  // [C_out, C_in]
  Tensor w_mlp_bias;
  Tensor prelu_slope;  // [C_out]
  Tensor bn_gamma, bn_beta;
  Tensor bn_mean, bn_var;  // running buffers
  Tensor residual_w;       // [C_out, C_in] projection when widths differ
  std::optional<MaskPair> masks;
};

struct TcnDecoder {
  Tensor remap_w;  // [K, T]
  Tensor remap_bias;
  std::vector<Tensor> conv_w;  // [C, C, kernel] each
  std::vector<Tensor> conv_bias;
  std::vector<Tensor> prelu_slopes;  // one per temporal conv
  Tensor out_w;  // [3, C]
  Tensor out_bias;
};

struct ParameterBreakdown {
  std::size_t adjacency = 0;    // learnable adjacency entries (masked ones excluded)
  std::size_t weights = 0;      // every other learnable scalar
  std::size_t masks_spared = 0; // adjacency entries pinned to zero by masks
  std::size_t total() const { return adjacency + weights; }
};

// Spec'd layer forwards. All take batched features x[B,C,V,T]; weights are
// [C_out, C_in] channel maps with optional bias, sigma is PReLU.
Tensor gcn_layer_forward(const Tensor& x, const Tensor& full_adjacency, const Tensor& weight,
                         const std::optional<Tensor>& bias, const Tensor& prelu_slope);
Tensor sts_layer_forward(const Tensor& x, const Tensor& adj_spatial, const Tensor& adj_temporal,
                         const Tensor& weight, const std::optional<Tensor>& bias,
                         const Tensor& prelu_slope);
Tensor dw_block_forward(const Tensor& x, const Tensor& adj_spatial, const Tensor& adj_temporal,
                        const Tensor& w_dw, const std::optional<Tensor>& w_dw_bias,
                        std::size_t groups, const Tensor& w_mlp,
                        const std::optional<Tensor>& w_mlp_bias, const Tensor& prelu_slope);
Tensor ses_block_forward(const Tensor& x, const Tensor& adj_spatial, const Tensor& adj_temporal,
                         const MaskPair& masks, const Tensor& w_dw,
                         const std::optional<Tensor>& w_dw_bias, std::size_t groups,
                         const Tensor& w_mlp, const std::optional<Tensor>& w_mlp_bias,
                         const Tensor& prelu_slope);

// Expands factored adjacency (A_s, A_t) into the equivalent full [V*T, V*T]
// block matrix under the temporal-then-spatial contraction order.
Tensor expand_adjacency_factors(const Tensor& adj_spatial, const Tensor& adj_temporal);

class SesGcnModel {
 public:
  SesGcnModel(ModelConfig config, std::uint64_t seed);
  SesGcnModel(ModelConfig config, std::vector<MaskPair> masks, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<GcnLayer>& layers() { return layers_; }
  const std::vector<GcnLayer>& layers() const { return layers_; }
  TcnDecoder& decoder() { return decoder_; }
  const TcnDecoder& decoder() const { return decoder_; }

  // x[B,3,V,T] -> [B,C_last,V,T]
  Tensor encoder_forward(const Tensor& x, bool training);
  // h[B,C_last,V,T] -> [B,3,V,K]
  Tensor tcn_decode(const Tensor& h);
  // x[B,3,V,T] -> [B,3,V,K]
  Tensor forward(const Tensor& x, bool training);
  // Single sequence [3,V,T] -> [3,V,K], evaluation mode.
  Tensor forward_single(const Tensor& x);

  std::vector<NamedTensor> named_parameters();
  std::vector<NamedTensor> named_buffers();
  ParameterBreakdown count_parameters() const;

  void save(const std::filesystem::path& checkpoint_path) const;
  static SesGcnModel load(const std::filesystem::path& checkpoint_path);

 private:
  void init_parameters(std::uint64_t seed);
  Tensor block_forward(std::size_t layer, const Tensor& x);

  ModelConfig config_;
  std::vector<GcnLayer> layers_;
  TcnDecoder decoder_;
};

}  // namespace sesf
