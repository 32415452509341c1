#include "sesf/model.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sesf/checkpoint.hpp"

namespace sesf {

using json = nlohmann::json;

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kVanilla: return "vanilla";
    case Variant::kSts: return "sts";
    case Variant::kStsDw: return "sts_dw";
    case Variant::kSes: return "ses";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "vanilla") return Variant::kVanilla;
  if (name == "sts") return Variant::kSts;
  if (name == "sts_dw") return Variant::kStsDw;
  if (name == "ses") return Variant::kSes;
  throw ConfigError("unknown model variant '" + name + "'");
}

void ModelConfig::validate() const {
  if (channels.size() < 2) throw ConfigError("model: need at least one encoder layer");
  if (channels[0] != 3) {
    throw ConfigError("model: channels[0] must be 3 (3D coordinates), got " +
                      std::to_string(channels[0]));
  }
  if (joints == 0 || observed < 2 || forecast < 1) {
    throw ConfigError("model: need V >= 1, T >= 2, K >= 1");
  }
  if (tcn_layers < 1) throw ConfigError("model: need at least one TCN layer");
  if (tcn_kernel % 2 == 0) throw ConfigError("model: tcn_kernel must be odd");
  if (tcn_kernel > forecast) {
    throw ConfigError("model: tcn_kernel " + std::to_string(tcn_kernel) +
                      " wider than forecast horizon " + std::to_string(forecast));
  }
  if (variant == Variant::kStsDw || variant == Variant::kSes) {
    for (std::size_t l = 0; l + 1 < channels.size(); ++l) {
      const std::size_t g = groups_for(channels[l]);
      if (g == 0 || channels[l] % g != 0) {
        throw ConfigError("model: alpha=" + std::to_string(alpha) + " does not divide C=" +
                          std::to_string(channels[l]) + " at layer " + std::to_string(l));
      }
    }
  }
}

namespace {

void require_mask_congruent(const MaskPair& masks, const Tensor& adj_spatial,
                            const Tensor& adj_temporal) {
  if (masks.spatial.shape() != adj_spatial.shape() ||
      masks.temporal.shape() != adj_temporal.shape()) {
    throw ContractViolation("masks are not shape-congruent with adjacency factors");
  }
}

}  // namespace

Tensor gcn_layer_forward(const Tensor& x, const Tensor& full_adjacency, const Tensor& weight,
                         const std::optional<Tensor>& bias, const Tensor& prelu_slope) {
  Tensor mixed = full_adjacency_apply(full_adjacency, x);
  Tensor mapped = channel_map(weight, bias, mixed, 1);
  return prelu(mapped, prelu_slope, 1);
}

Tensor sts_layer_forward(const Tensor& x, const Tensor& adj_spatial, const Tensor& adj_temporal,
                         const Tensor& weight, const std::optional<Tensor>& bias,
                         const Tensor& prelu_slope) {
  Tensor mixed = contract_spatial(adj_spatial, contract_temporal(adj_temporal, x));
  Tensor mapped = channel_map(weight, bias, mixed, 1);
  return prelu(mapped, prelu_slope, 1);
}

Tensor dw_block_forward(const Tensor& x, const Tensor& adj_spatial, const Tensor& adj_temporal,
                        const Tensor& w_dw, const std::optional<Tensor>& w_dw_bias,
                        std::size_t groups, const Tensor& w_mlp,
                        const std::optional<Tensor>& w_mlp_bias, const Tensor& prelu_slope) {
  Tensor mixed = contract_spatial(adj_spatial, contract_temporal(adj_temporal, x));
  Tensor hidden = relu6(channel_map(w_dw, w_dw_bias, mixed, groups));
  Tensor mapped = channel_map(w_mlp, w_mlp_bias, hidden, 1);
  return prelu(mapped, prelu_slope, 1);
}

Tensor ses_block_forward(const Tensor& x, const Tensor& adj_spatial, const Tensor& adj_temporal,
                         const MaskPair& masks, const Tensor& w_dw,
                         const std::optional<Tensor>& w_dw_bias, std::size_t groups,
                         const Tensor& w_mlp, const std::optional<Tensor>& w_mlp_bias,
                         const Tensor& prelu_slope) {
  require_mask_congruent(masks, adj_spatial, adj_temporal);
  Tensor spared_s = apply_mask(masks.spatial, adj_spatial);
  Tensor spared_t = apply_mask(masks.temporal, adj_temporal);
  return dw_block_forward(x, spared_s, spared_t, w_dw, w_dw_bias, groups, w_mlp, w_mlp_bias,
                          prelu_slope);
}

Tensor expand_adjacency_factors(const Tensor& adj_spatial, const Tensor& adj_temporal) {
  const std::size_t V = adj_spatial.shape()[0];
  const std::size_t T = adj_temporal.shape()[0];
  if (adj_spatial.shape() != Shape{V, V, T} || adj_temporal.shape() != Shape{T, T, V}) {
    throw ContractViolation("expand_adjacency_factors: factors are not [V,V,T]/[T,T,V]");
  }
  // out[(v,t),(u,s)] = A_s[v,u,t] * A_t[t,s,u]: temporal mixing per joint
  // first, spatial mixing per frame second.
  const std::size_t n = V * T;
  std::vector<double> full(n * n, 0.0);
  const auto sv = adj_spatial.values();
  const auto tv = adj_temporal.values();
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t u = 0; u < V; ++u) {
        for (std::size_t s = 0; s < T; ++s) {
          full[(v * T + t) * n + (u * T + s)] = sv[(v * V + u) * T + t] * tv[(t * T + s) * V + u];
        }
      }
    }
  }
  return Tensor::from_values({n, n}, std::move(full));
}

SesGcnModel::SesGcnModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  if (config_.variant == Variant::kSes) {
    throw ConfigError("ses variant requires masks; use the mask constructor");
  }
  init_parameters(seed);
}

SesGcnModel::SesGcnModel(ModelConfig config, std::vector<MaskPair> masks, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  if (config_.variant != Variant::kSes) {
    throw ConfigError("mask constructor is only for the ses variant");
  }
  if (masks.size() != config_.gcn_layers()) {
    throw ContractViolation("expected " + std::to_string(config_.gcn_layers()) +
                            " mask pairs, got " + std::to_string(masks.size()));
  }
  init_parameters(seed);
  const std::size_t V = config_.joints, T = config_.observed;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (masks[l].spatial.shape() != Shape{V, V, T} || masks[l].temporal.shape() != Shape{T, T, V}) {
      throw ContractViolation("mask pair " + std::to_string(l) +
                              " is not shape-congruent with the adjacency factors");
    }
    // Masked adjacency entries are constants: pin them to zero at build time.
    auto pin = [](const Tensor& mask, Tensor& adjacency) {
      const auto mv = mask.values();
      auto av = adjacency.values_mut();
      for (std::size_t i = 0; i < av.size(); ++i) {
        if (mv[i] != 0.0 && mv[i] != 1.0) {
          throw ContractViolation("mask entries must be binary");
        }
        if (mv[i] == 0.0) av[i] = 0.0;
      }
    };
    pin(masks[l].spatial, layers_[l].adj_spatial);
    pin(masks[l].temporal, layers_[l].adj_temporal);
    layers_[l].masks = std::move(masks[l]);
  }
}

void SesGcnModel::init_parameters(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t V = config_.joints;
  const std::size_t T = config_.observed;
  const std::size_t K = config_.forecast;
  auto uniform_fan = [&rng](Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), bound, rng, /*requires_grad=*/true);
  };

  layers_.clear();
  for (std::size_t l = 0; l < config_.gcn_layers(); ++l) {
    const std::size_t c_in = config_.channels[l];
    const std::size_t c_out = config_.channels[l + 1];
    GcnLayer layer;
    if (config_.variant == Variant::kVanilla) {
      layer.full_adjacency = uniform_fan({V * T, V * T}, V * T);
    } else {
      layer.adj_spatial = uniform_fan({V, V, T}, V);
      layer.adj_temporal = uniform_fan({T, T, V}, T);
    }
    if (config_.variant == Variant::kVanilla || config_.variant == Variant::kSts) {
      layer.weight = uniform_fan({c_out, c_in}, c_in);
      layer.weight_bias = Tensor::zeros({c_out}, true);
    } else {
      const std::size_t groups = config_.groups_for(c_in);
      layer.w_dw = uniform_fan({c_in, c_in / groups}, c_in / groups);
      layer.w_dw_bias = Tensor::zeros({c_in}, true);
      layer.w_mlp = uniform_fan({c_out, c_in}, c_in);
      layer.w_mlp_bias = Tensor::zeros({c_out}, true);
    }
    layer.prelu_slope = Tensor::full({c_out}, 0.25, true);
    layer.bn_gamma = Tensor::full({c_out}, 1.0, true);
    layer.bn_beta = Tensor::zeros({c_out}, true);
    layer.bn_mean = Tensor::zeros({c_out});
    layer.bn_var = Tensor::full({c_out}, 1.0);
    if (c_in != c_out) {
      layer.residual_w = uniform_fan({c_out, c_in}, c_in);
    }
    layers_.push_back(std::move(layer));
  }

  const std::size_t c_last = config_.channels.back();
  decoder_.remap_w = uniform_fan({K, T}, T);
  decoder_.remap_bias = Tensor::zeros({K}, true);
  decoder_.prelu_slopes.push_back(Tensor::full({c_last}, 0.25, true));
  for (std::size_t i = 1; i < config_.tcn_layers; ++i) {
    decoder_.conv_w.push_back(uniform_fan({c_last, c_last, config_.tcn_kernel},
                                          c_last * config_.tcn_kernel));
    decoder_.conv_bias.push_back(Tensor::zeros({c_last}, true));
    decoder_.prelu_slopes.push_back(Tensor::full({c_last}, 0.25, true));
  }
  decoder_.out_w = uniform_fan({3, c_last}, c_last);
  decoder_.out_bias = Tensor::zeros({3}, true);
}

Tensor SesGcnModel::block_forward(std::size_t l, const Tensor& x) {
  GcnLayer& layer = layers_[l];
  const std::size_t c_in = config_.channels[l];
  switch (config_.variant) {
    case Variant::kVanilla:
      return gcn_layer_forward(x, layer.full_adjacency, layer.weight, layer.weight_bias,
                               layer.prelu_slope);
    case Variant::kSts:
      return sts_layer_forward(x, layer.adj_spatial, layer.adj_temporal, layer.weight,
                               layer.weight_bias, layer.prelu_slope);
    case Variant::kStsDw:
      return dw_block_forward(x, layer.adj_spatial, layer.adj_temporal, layer.w_dw,
                              layer.w_dw_bias, config_.groups_for(c_in), layer.w_mlp,
                              layer.w_mlp_bias, layer.prelu_slope);
    case Variant::kSes:
      return ses_block_forward(x, layer.adj_spatial, layer.adj_temporal, *layer.masks, layer.w_dw,
                               layer.w_dw_bias, config_.groups_for(c_in), layer.w_mlp,
                               layer.w_mlp_bias, layer.prelu_slope);
  }
  throw ConfigError("unreachable variant");
}

Tensor SesGcnModel::encoder_forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.shape()[1] != 3 || x.shape()[2] != config_.joints ||
      x.shape()[3] != config_.observed) {
    throw ContractViolation("encoder_forward: input " + shape_str(x.shape()) +
                            " does not match config [B,3," + std::to_string(config_.joints) +
                            "," + std::to_string(config_.observed) + "]");
  }
  Tensor h = x;
  BatchNormAttrs bn_attrs;
  bn_attrs.training = training;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    GcnLayer& layer = layers_[l];
    Tensor block = block_forward(l, h);
    Tensor normed =
        batch_norm(block, layer.bn_gamma, layer.bn_beta, layer.bn_mean, layer.bn_var, bn_attrs);
    Tensor residual =
        layer.residual_w.defined() ? channel_map(layer.residual_w, std::nullopt, h, 1) : h;
    h = add(normed, residual);
  }
  return h;
}

Tensor SesGcnModel::tcn_decode(const Tensor& h) {
  Tensor z = time_remap(decoder_.remap_w, decoder_.remap_bias, h);
  z = prelu(z, decoder_.prelu_slopes[0], 1);
  for (std::size_t i = 0; i < decoder_.conv_w.size(); ++i) {
    z = conv_time(decoder_.conv_w[i], decoder_.conv_bias[i], z);
    z = prelu(z, decoder_.prelu_slopes[i + 1], 1);
  }
  return channel_map(decoder_.out_w, decoder_.out_bias, z, 1);
}

Tensor SesGcnModel::forward(const Tensor& x, bool training) {
  return tcn_decode(encoder_forward(x, training));
}

Tensor SesGcnModel::forward_single(const Tensor& x) {
  if (x.rank() != 3) throw ContractViolation("forward_single expects [3,V,T]");
  NoGradGuard no_grad;
  Shape batched{1, x.shape()[0], x.shape()[1], x.shape()[2]};
  Tensor out = forward(reshape(x, batched), /*training=*/false);
  return reshape(out, {out.shape()[1], out.shape()[2], out.shape()[3]});
}

std::vector<NamedTensor> SesGcnModel::named_parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = "gcn" + std::to_string(l) + ".";
    GcnLayer& layer = layers_[l];
    auto push = [&out](const std::string& name, const Tensor& t) {
      if (t.defined()) out.emplace_back(name, t);
    };
    push(p + "adj_full", layer.full_adjacency);
    push(p + "adj_s", layer.adj_spatial);
    push(p + "adj_t", layer.adj_temporal);
    push(p + "w", layer.weight);
    push(p + "w_b", layer.weight_bias);
    push(p + "w_dw", layer.w_dw);
    push(p + "w_dw_b", layer.w_dw_bias);
    push(p + "w_mlp", layer.w_mlp);
    push(p + "w_mlp_b", layer.w_mlp_bias);
    push(p + "prelu", layer.prelu_slope);
    push(p + "bn_g", layer.bn_gamma);
    push(p + "bn_b", layer.bn_beta);
    push(p + "res_w", layer.residual_w);
  }
  out.emplace_back("tcn.remap_w", decoder_.remap_w);
  out.emplace_back("tcn.remap_b", decoder_.remap_bias);
  for (std::size_t i = 0; i < decoder_.conv_w.size(); ++i) {
    out.emplace_back("tcn.conv" + std::to_string(i) + "_w", decoder_.conv_w[i]);
    out.emplace_back("tcn.conv" + std::to_string(i) + "_b", decoder_.conv_bias[i]);
  }
  for (std::size_t i = 0; i < decoder_.prelu_slopes.size(); ++i) {
    out.emplace_back("tcn.prelu" + std::to_string(i), decoder_.prelu_slopes[i]);
  }
  out.emplace_back("tcn.out_w", decoder_.out_w);
  out.emplace_back("tcn.out_b", decoder_.out_bias);
  return out;
}

std::vector<NamedTensor> SesGcnModel::named_buffers() {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = "gcn" + std::to_string(l) + ".";
    GcnLayer& layer = layers_[l];
    out.emplace_back(p + "bn_rm", layer.bn_mean);
    out.emplace_back(p + "bn_rv", layer.bn_var);
    if (layer.masks) {
      out.emplace_back(p + "mask_s", layer.masks->spatial);
      out.emplace_back(p + "mask_t", layer.masks->temporal);
    }
  }
  return out;
}

ParameterBreakdown SesGcnModel::count_parameters() const {
  ParameterBreakdown bd;
  auto count_adj = [&bd](const Tensor& adjacency, const Tensor* mask) {
    if (!adjacency.defined()) return;
    if (mask) {
      for (double m : mask->values()) {
        if (m != 0.0) {
          bd.adjacency += 1;
        } else {
          bd.masks_spared += 1;
        }
      }
    } else {
      bd.adjacency += adjacency.size();
    }
  };
  for (const GcnLayer& layer : layers_) {
    const Tensor* mask_s = layer.masks ? &layer.masks->spatial : nullptr;
    const Tensor* mask_t = layer.masks ? &layer.masks->temporal : nullptr;
    count_adj(layer.full_adjacency, nullptr);
    count_adj(layer.adj_spatial, mask_s);
    count_adj(layer.adj_temporal, mask_t);
    for (const Tensor* t : {&layer.weight, &layer.weight_bias, &layer.w_dw, &layer.w_dw_bias,
                            &layer.w_mlp, &layer.w_mlp_bias, &layer.prelu_slope, &layer.bn_gamma,
                            &layer.bn_beta, &layer.residual_w}) {
      if (t->defined()) bd.weights += t->size();
    }
  }
  bd.weights += decoder_.remap_w.size() + decoder_.remap_bias.size();
  for (const Tensor& t : decoder_.conv_w) bd.weights += t.size();
  for (const Tensor& t : decoder_.conv_bias) bd.weights += t.size();
  for (const Tensor& t : decoder_.prelu_slopes) bd.weights += t.size();
  bd.weights += decoder_.out_w.size() + decoder_.out_bias.size();
  return bd;
}

void SesGcnModel::save(const std::filesystem::path& checkpoint_path) const {
  auto* self = const_cast<SesGcnModel*>(this);
  std::vector<NamedTensor> entries = self->named_parameters();
  for (auto& entry : self->named_buffers()) entries.push_back(std::move(entry));
  save_checkpoint(checkpoint_path, entries);
  json sidecar;
  sidecar["format"] = 1;
  sidecar["config"] = {
      {"joints", config_.joints},         {"observed", config_.observed},
      {"forecast", config_.forecast},     {"channels", config_.channels},
      {"tcn_layers", config_.tcn_layers}, {"tcn_kernel", config_.tcn_kernel},
      {"alpha", config_.alpha},           {"variant", variant_name(config_.variant)},
  };
  std::ofstream out(checkpoint_path.string() + ".json", std::ios::trunc);
  if (!out) throw ParseError("cannot write model sidecar for " + checkpoint_path.string());
  out << sidecar.dump(2) << "\n";
}

SesGcnModel SesGcnModel::load(const std::filesystem::path& checkpoint_path) {
  std::ifstream side(checkpoint_path.string() + ".json");
  if (!side) throw ParseError("missing model sidecar " + checkpoint_path.string() + ".json");
  json sidecar = json::parse(side);
  const auto& jc = sidecar.at("config");
  ModelConfig config;
  config.joints = jc.at("joints").get<std::size_t>();
  config.observed = jc.at("observed").get<std::size_t>();
  config.forecast = jc.at("forecast").get<std::size_t>();
  config.channels = jc.at("channels").get<std::vector<std::size_t>>();
  config.tcn_layers = jc.at("tcn_layers").get<std::size_t>();
  config.tcn_kernel = jc.at("tcn_kernel").get<std::size_t>();
  config.alpha = jc.at("alpha").get<std::size_t>();
  config.variant = variant_from_name(jc.at("variant").get<std::string>());

  auto entries = load_checkpoint(checkpoint_path);
  auto find = [&entries, &checkpoint_path](const std::string& name) -> Tensor {
    for (auto& [n, t] : entries) {
      if (n == name) return t;
    }
    throw ParseError("checkpoint " + checkpoint_path.string() + " lacks tensor '" + name + "'");
  };

  std::optional<SesGcnModel> model;
  if (config.variant == Variant::kSes) {
    std::vector<MaskPair> masks;
    for (std::size_t l = 0; l < config.gcn_layers(); ++l) {
      const std::string p = "gcn" + std::to_string(l) + ".";
      MaskPair pair;
      pair.spatial = find(p + "mask_s");
      pair.temporal = find(p + "mask_t");
      masks.push_back(std::move(pair));
    }
    model.emplace(config, std::move(masks), /*seed=*/0);
  } else {
    model.emplace(config, /*seed=*/0);
  }
  auto restore = [&find](std::vector<NamedTensor> targets) {
    for (auto& [name, tensor] : targets) {
      Tensor stored = find(name);
      if (stored.shape() != tensor.shape()) {
        throw ParseError("checkpoint tensor '" + name + "' has shape " +
                         shape_str(stored.shape()) + ", expected " + shape_str(tensor.shape()));
      }
      auto dst = tensor.values_mut();
      const auto src = stored.values();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  };
  restore(model->named_parameters());
  restore(model->named_buffers());
  return std::move(*model);
}

}  // namespace sesf
