#include "sesf/ops.hpp"

#include <algorithm>
#include <cmath>

namespace sesf {

namespace {

using detail::BackwardCtx;
using detail::NodePtr;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(rank) +
                            ", got shape " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  NodePtr an = a.node(), bn = b.node();
  return detail::make_op_output("add", a.shape(), std::move(out), {an, bn},
                                [an, bn](BackwardCtx& ctx, const std::vector<double>& g) {
                                  auto& ga = ctx.grad_of(an);
                                  auto& gb = ctx.grad_of(bn);
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    ga[i] += g[i];
                                    gb[i] += g[i];
                                  }
                                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  NodePtr an = a.node(), bn = b.node();
  return detail::make_op_output("sub", a.shape(), std::move(out), {an, bn},
                                [an, bn](BackwardCtx& ctx, const std::vector<double>& g) {
                                  auto& ga = ctx.grad_of(an);
                                  auto& gb = ctx.grad_of(bn);
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    ga[i] += g[i];
                                    gb[i] -= g[i];
                                  }
                                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  NodePtr an = a.node(), bn = b.node();
  return detail::make_op_output("mul", a.shape(), std::move(out), {an, bn},
                                [an, bn](BackwardCtx& ctx, const std::vector<double>& g) {
                                  auto& ga = ctx.grad_of(an);
                                  auto& gb = ctx.grad_of(bn);
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    ga[i] += g[i] * bn->values[i];
                                    gb[i] += g[i] * an->values[i];
                                  }
                                });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  NodePtr an = a.node();
  return detail::make_op_output("scale", a.shape(), std::move(out), {an},
                                [an, s](BackwardCtx& ctx, const std::vector<double>& g) {
                                  auto& ga = ctx.grad_of(an);
                                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                                });
}

Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis) {
  require_rank("add_bias(bias)", bias, 1);
  if (axis >= x.rank() || x.shape()[axis] != bias.shape()[0]) {
    throw ContractViolation("add_bias: bias " + shape_str(bias.shape()) + " does not fit axis " +
                            std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  const std::size_t len = x.shape()[axis];
  std::vector<double> out(x.size());
  const auto xv = x.values();
  const auto bv = bias.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[(i / inner) % len];
  NodePtr xn = x.node(), bn = bias.node();
  return detail::make_op_output("add_bias", x.shape(), std::move(out), {xn, bn},
                                [xn, bn, inner, len](BackwardCtx& ctx, const std::vector<double>& g) {
                                  auto& gx = ctx.grad_of(xn);
                                  auto& gb = ctx.grad_of(bn);
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    gx[i] += g[i];
                                    gb[(i / inner) % len] += g[i];
                                  }
                                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul(a)", a, 2);
  require_rank("matmul(b)", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ContractViolation("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  NodePtr an = a.node(), bn = b.node();
  return detail::make_op_output(
      "matmul", {m, n}, std::move(out), {an, bn},
      [an, bn, m, k, n](BackwardCtx& ctx, const std::vector<double>& g) {
        auto& ga = ctx.grad_of(an);
        auto& gb = ctx.grad_of(bn);
        // dA = g * B^T, dB = A^T * g
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) {
              ga[i * k + p] += gij * bn->values[p * n + j];
              gb[p * n + j] += an->values[i * k + p] * gij;
            }
          }
        }
      });
}

namespace {

struct FeatureDims {
  std::size_t batch, channels, joints, frames;
};

FeatureDims feature_dims(const char* op, const Tensor& x) {
  require_rank(op, x, 4);
  return {x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]};
}

}  // namespace

Tensor full_adjacency_apply(const Tensor& adjacency, const Tensor& x) {
  const auto d = feature_dims("full_adjacency_apply(x)", x);
  require_rank("full_adjacency_apply(A)", adjacency, 2);
  const std::size_t nodes = d.joints * d.frames;
  if (adjacency.shape()[0] != nodes || adjacency.shape()[1] != nodes) {
    throw ContractViolation("full_adjacency_apply: adjacency " + shape_str(adjacency.shape()) +
                            " does not match V*T=" + std::to_string(nodes) + " of x " +
                            shape_str(x.shape()));
  }
  std::vector<double> out(x.size(), 0.0);
  const auto av = adjacency.values();
  const auto xv = x.values();
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const double* xrow = xv.data() + bc * nodes;
    double* orow = out.data() + bc * nodes;
    for (std::size_t p = 0; p < nodes; ++p) {
      const double* arow = av.data() + p * nodes;
      double acc = 0.0;
      for (std::size_t q = 0; q < nodes; ++q) acc += arow[q] * xrow[q];
      orow[p] = acc;
    }
  }
  NodePtr an = adjacency.node(), xn = x.node();
  const std::size_t planes = d.batch * d.channels;
  return detail::make_op_output(
      "full_adjacency_apply", x.shape(), std::move(out), {an, xn},
      [an, xn, planes, nodes](BackwardCtx& ctx, const std::vector<double>& g) {
        auto& ga = ctx.grad_of(an);
        auto& gx = ctx.grad_of(xn);
        for (std::size_t bc = 0; bc < planes; ++bc) {
          const double* xrow = xn->values.data() + bc * nodes;
          const double* grow = g.data() + bc * nodes;
          double* gxrow = gx.data() + bc * nodes;
          for (std::size_t p = 0; p < nodes; ++p) {
            const double gp = grow[p];
            const double* arow = an->values.data() + p * nodes;
            double* garow = ga.data() + p * nodes;
            for (std::size_t q = 0; q < nodes; ++q) {
              garow[q] += gp * xrow[q];
              gxrow[q] += arow[q] * gp;
            }
          }
        }
      });
}

Tensor contract_spatial(const Tensor& adjacency, const Tensor& x) {
  const auto d = feature_dims("contract_spatial(x)", x);
  require_rank("contract_spatial(A)", adjacency, 3);
  if (adjacency.shape()[0] != d.joints || adjacency.shape()[1] != d.joints ||
      adjacency.shape()[2] != d.frames) {
    throw ContractViolation("contract_spatial: adjacency " + shape_str(adjacency.shape()) +
                            " does not match x " + shape_str(x.shape()));
  }
  const std::size_t V = d.joints, T = d.frames;
  std::vector<double> out(x.size(), 0.0);
  const auto av = adjacency.values();
  const auto xv = x.values();
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const double* xp = xv.data() + bc * V * T;
    double* op = out.data() + bc * V * T;
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t u = 0; u < V; ++u) {
        const double* arow = av.data() + (v * V + u) * T;
        const double* xrow = xp + u * T;
        double* orow = op + v * T;
        for (std::size_t t = 0; t < T; ++t) orow[t] += arow[t] * xrow[t];
      }
    }
  }
  NodePtr an = adjacency.node(), xn = x.node();
  const std::size_t planes = d.batch * d.channels;
  return detail::make_op_output(
      "contract_spatial", x.shape(), std::move(out), {an, xn},
      [an, xn, planes, V, T](BackwardCtx& ctx, const std::vector<double>& g) {
        auto& ga = ctx.grad_of(an);
        auto& gx = ctx.grad_of(xn);
        for (std::size_t bc = 0; bc < planes; ++bc) {
          const double* xp = xn->values.data() + bc * V * T;
          const double* gp = g.data() + bc * V * T;
          double* gxp = gx.data() + bc * V * T;
          for (std::size_t v = 0; v < V; ++v) {
            const double* grow = gp + v * T;
            for (std::size_t u = 0; u < V; ++u) {
              const double* arow = an->values.data() + (v * V + u) * T;
              const double* xrow = xp + u * T;
              double* garow = ga.data() + (v * V + u) * T;
              double* gxrow = gxp + u * T;
              for (std::size_t t = 0; t < T; ++t) {
                garow[t] += grow[t] * xrow[t];
                gxrow[t] += arow[t] * grow[t];
              }
            }
          }
        }
      });
}

Tensor contract_temporal(const Tensor& adjacency, const Tensor& x) {
  const auto d = feature_dims("contract_temporal(x)", x);
  require_rank("contract_temporal(A)", adjacency, 3);
  if (adjacency.shape()[0] != d.frames || adjacency.shape()[1] != d.frames ||
      adjacency.shape()[2] != d.joints) {
    throw ContractViolation("contract_temporal: adjacency " + shape_str(adjacency.shape()) +
                            " does not match x " + shape_str(x.shape()));
  }
  const std::size_t V = d.joints, T = d.frames;
  std::vector<double> out(x.size(), 0.0);
  const auto av = adjacency.values();
  const auto xv = x.values();
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const double* xp = xv.data() + bc * V * T;
    double* op = out.data() + bc * V * T;
    for (std::size_t v = 0; v < V; ++v) {
      const double* xrow = xp + v * T;
      double* orow = op + v * T;
      for (std::size_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::size_t s = 0; s < T; ++s) acc += av[(t * T + s) * V + v] * xrow[s];
        orow[t] = acc;
      }
    }
  }
  NodePtr an = adjacency.node(), xn = x.node();
  const std::size_t planes = d.batch * d.channels;
  return detail::make_op_output(
      "contract_temporal", x.shape(), std::move(out), {an, xn},
      [an, xn, planes, V, T](BackwardCtx& ctx, const std::vector<double>& g) {
        auto& ga = ctx.grad_of(an);
        auto& gx = ctx.grad_of(xn);
        for (std::size_t bc = 0; bc < planes; ++bc) {
          const double* xp = xn->values.data() + bc * V * T;
          const double* gp = g.data() + bc * V * T;
          double* gxp = gx.data() + bc * V * T;
          for (std::size_t v = 0; v < V; ++v) {
            const double* xrow = xp + v * T;
            const double* grow = gp + v * T;
            double* gxrow = gxp + v * T;
            for (std::size_t t = 0; t < T; ++t) {
              const double gt = grow[t];
              for (std::size_t s = 0; s < T; ++s) {
                ga[(t * T + s) * V + v] += gt * xrow[s];
                gxrow[s] += an->values[(t * T + s) * V + v] * gt;
              }
            }
          }
        }
      });
}

Tensor channel_map(const Tensor& weight, const std::optional<Tensor>& bias, const Tensor& x,
                   std::size_t groups) {
  const auto d = feature_dims("channel_map(x)", x);
  require_rank("channel_map(W)", weight, 2);
  const std::size_t c_out = weight.shape()[0];
  const std::size_t group_in = weight.shape()[1];
  if (groups == 0 || d.channels % groups != 0 || c_out % groups != 0) {
    throw ConfigError("channel_map: groups=" + std::to_string(groups) + " must divide C_in=" +
                      std::to_string(d.channels) + " and C_out=" + std::to_string(c_out));
  }
  if (group_in != d.channels / groups) {
    throw ContractViolation("channel_map: weight " + shape_str(weight.shape()) +
                            " does not match C_in/groups=" + std::to_string(d.channels / groups));
  }
  if (bias) require_rank("channel_map(bias)", *bias, 1);
  if (bias && bias->shape()[0] != c_out) {
    throw ContractViolation("channel_map: bias " + shape_str(bias->shape()) + " vs C_out=" +
                            std::to_string(c_out));
  }
  const std::size_t plane = d.joints * d.frames;
  const std::size_t out_per_group = c_out / groups;
  std::vector<double> out(d.batch * c_out * plane, 0.0);
  const auto wv = weight.values();
  const auto xv = x.values();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < c_out; ++o) {
      const std::size_t cbase = (o / out_per_group) * group_in;
      double* orow = out.data() + (b * c_out + o) * plane;
      if (bias) {
        const double bo = bias->values()[o];
        for (std::size_t i = 0; i < plane; ++i) orow[i] = bo;
      }
      for (std::size_t j = 0; j < group_in; ++j) {
        const double w = wv[o * group_in + j];
        const double* xrow = xv.data() + (b * d.channels + cbase + j) * plane;
        for (std::size_t i = 0; i < plane; ++i) orow[i] += w * xrow[i];
      }
    }
  }
  NodePtr wn = weight.node(), xn = x.node();
  NodePtr biasn = bias ? bias->node() : nullptr;
  std::vector<NodePtr> inputs{wn, xn};
  if (biasn) inputs.push_back(biasn);
  const std::size_t B = d.batch, Cin = d.channels;
  return detail::make_op_output(
      "channel_map", {B, c_out, d.joints, d.frames}, std::move(out), std::move(inputs),
      [wn, xn, biasn, B, Cin, c_out, group_in, out_per_group, plane](BackwardCtx& ctx,
                                                                    const std::vector<double>& g) {
        auto& gw = ctx.grad_of(wn);
        auto& gx = ctx.grad_of(xn);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t o = 0; o < c_out; ++o) {
            const std::size_t cbase = (o / out_per_group) * group_in;
            const double* grow = g.data() + (b * c_out + o) * plane;
            for (std::size_t j = 0; j < group_in; ++j) {
              const double w = wn->values[o * group_in + j];
              const double* xrow = xn->values.data() + (b * Cin + cbase + j) * plane;
              double* gxrow = gx.data() + (b * Cin + cbase + j) * plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) {
                acc += grow[i] * xrow[i];
                gxrow[i] += w * grow[i];
              }
              gw[o * group_in + j] += acc;
            }
          }
        }
        if (biasn) {
          auto& gb = ctx.grad_of(biasn);
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t o = 0; o < c_out; ++o) {
              const double* grow = g.data() + (b * c_out + o) * plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += grow[i];
              gb[o] += acc;
            }
          }
        }
      });
}

Tensor time_remap(const Tensor& weight, const std::optional<Tensor>& bias, const Tensor& x) {
  const auto d = feature_dims("time_remap(x)", x);
  require_rank("time_remap(W)", weight, 2);
  const std::size_t K = weight.shape()[0], T = weight.shape()[1];
  if (T != d.frames) {
    throw ContractViolation("time_remap: weight " + shape_str(weight.shape()) +
                            " does not match T=" + std::to_string(d.frames));
  }
  if (bias && (bias->rank() != 1 || bias->shape()[0] != K)) {
    throw ContractViolation("time_remap: bias must be [K]");
  }
  const std::size_t rows = d.batch * d.channels * d.joints;
  std::vector<double> out(rows * K, 0.0);
  const auto wv = weight.values();
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xrow = xv.data() + r * T;
    double* orow = out.data() + r * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double* wrow = wv.data() + k * T;
      double acc = bias ? bias->values()[k] : 0.0;
      for (std::size_t t = 0; t < T; ++t) acc += wrow[t] * xrow[t];
      orow[k] = acc;
    }
  }
  NodePtr wn = weight.node(), xn = x.node();
  NodePtr biasn = bias ? bias->node() : nullptr;
  std::vector<NodePtr> inputs{wn, xn};
  if (biasn) inputs.push_back(biasn);
  return detail::make_op_output(
      "time_remap", {d.batch, d.channels, d.joints, K}, std::move(out), std::move(inputs),
      [wn, xn, biasn, rows, K, T](BackwardCtx& ctx, const std::vector<double>& g) {
        auto& gw = ctx.grad_of(wn);
        auto& gx = ctx.grad_of(xn);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xrow = xn->values.data() + r * T;
          const double* grow = g.data() + r * K;
          double* gxrow = gx.data() + r * T;
          for (std::size_t k = 0; k < K; ++k) {
            const double gk = grow[k];
            const double* wrow = wn->values.data() + k * T;
            double* gwrow = gw.data() + k * T;
            for (std::size_t t = 0; t < T; ++t) {
              gwrow[t] += gk * xrow[t];
              gxrow[t] += wrow[t] * gk;
            }
          }
        }
        if (biasn) {
          auto& gb = ctx.grad_of(biasn);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* grow = g.data() + r * K;
            for (std::size_t k = 0; k < K; ++k) gb[k] += grow[k];
          }
        }
      });
}

Tensor conv_time(const Tensor& weight, const std::optional<Tensor>& bias, const Tensor& x) {
  const auto d = feature_dims("conv_time(x)", x);
  require_rank("conv_time(W)", weight, 3);
  const std::size_t c_out = weight.shape()[0];
  const std::size_t c_in = weight.shape()[1];
  const std::size_t kern = weight.shape()[2];
  if (c_in != d.channels) {
    throw ContractViolation("conv_time: weight C_in=" + std::to_string(c_in) + " vs x " +
                            shape_str(x.shape()));
  }
  if (kern % 2 == 0) throw ConfigError("conv_time: kernel width must be odd");
  if (kern > d.frames) {
    throw ConfigError("conv_time: kernel " + std::to_string(kern) + " wider than time axis " +
                      std::to_string(d.frames));
  }
  if (bias && (bias->rank() != 1 || bias->shape()[0] != c_out)) {
    throw ContractViolation("conv_time: bias must be [C_out]");
  }
  const std::size_t T = d.frames, V = d.joints;
  const std::size_t off = (kern - 1) / 2;
  std::vector<double> out(d.batch * c_out * V * T, 0.0);
  const auto wv = weight.values();
  const auto xv = x.values();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < c_out; ++o) {
      double* oplane = out.data() + (b * c_out + o) * V * T;
      if (bias) {
        const double bo = bias->values()[o];
        for (std::size_t i = 0; i < V * T; ++i) oplane[i] = bo;
      }
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* xplane = xv.data() + (b * c_in + ci) * V * T;
        for (std::size_t j = 0; j < kern; ++j) {
          const double w = wv[(o * c_in + ci) * kern + j];
          if (w == 0.0) continue;
          // source index t + j - off must land in [0, T)
          const std::size_t t_lo = (j >= off) ? 0 : off - j;
          const std::size_t t_hi = (j <= off) ? T : T + off - j;
          for (std::size_t v = 0; v < V; ++v) {
            const double* xrow = xplane + v * T;
            double* orow = oplane + v * T;
            for (std::size_t t = t_lo; t < t_hi; ++t) orow[t] += w * xrow[t + j - off];
          }
        }
      }
    }
  }
  NodePtr wn = weight.node(), xn = x.node();
  NodePtr biasn = bias ? bias->node() : nullptr;
  std::vector<NodePtr> inputs{wn, xn};
  if (biasn) inputs.push_back(biasn);
  const std::size_t B = d.batch;
  return detail::make_op_output(
      "conv_time", {B, c_out, V, T}, std::move(out), std::move(inputs),
      [wn, xn, biasn, B, c_out, c_in, kern, off, V, T](BackwardCtx& ctx,
                                                       const std::vector<double>& g) {
        auto& gw = ctx.grad_of(wn);
        auto& gx = ctx.grad_of(xn);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t o = 0; o < c_out; ++o) {
            const double* gplane = g.data() + (b * c_out + o) * V * T;
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const double* xplane = xn->values.data() + (b * c_in + ci) * V * T;
              double* gxplane = gx.data() + (b * c_in + ci) * V * T;
              for (std::size_t j = 0; j < kern; ++j) {
                const double w = wn->values[(o * c_in + ci) * kern + j];
                const std::size_t t_lo = (j >= off) ? 0 : off - j;
                const std::size_t t_hi = (j <= off) ? T : T + off - j;
                double acc = 0.0;
                for (std::size_t v = 0; v < V; ++v) {
                  const double* xrow = xplane + v * T;
                  double* gxrow = gxplane + v * T;
                  const double* grow = gplane + v * T;
                  for (std::size_t t = t_lo; t < t_hi; ++t) {
                    acc += grow[t] * xrow[t + j - off];
                    gxrow[t + j - off] += w * grow[t];
                  }
                }
                gw[(o * c_in + ci) * kern + j] += acc;
              }
            }
          }
        }
        if (biasn) {
          auto& gb = ctx.grad_of(biasn);
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t o = 0; o < c_out; ++o) {
              const double* gplane = g.data() + (b * c_out + o) * V * T;
              double acc = 0.0;
              for (std::size_t i = 0; i < V * T; ++i) acc += gplane[i];
              gb[o] += acc;
            }
          }
        }
      });
}

Tensor prelu(const Tensor& x, const Tensor& slope, std::size_t channel_axis) {
  require_rank("prelu(slope)", slope, 1);
  if (channel_axis >= x.rank() || x.shape()[channel_axis] != slope.shape()[0]) {
    throw ContractViolation("prelu: slope " + shape_str(slope.shape()) + " does not fit axis " +
                            std::to_string(channel_axis) + " of " + shape_str(x.shape()));
  }
  std::size_t inner = 1;
  for (std::size_t d = channel_axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  const std::size_t len = x.shape()[channel_axis];
  std::vector<double> out(x.size());
  const auto xv = x.values();
  const auto sv = slope.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    out[i] = v > 0.0 ? v : sv[(i / inner) % len] * v;
  }
  NodePtr xn = x.node(), sn = slope.node();
  return detail::make_op_output(
      "prelu", x.shape(), std::move(out), {xn, sn},
      [xn, sn, inner, len](BackwardCtx& ctx, const std::vector<double>& g) {
        auto& gx = ctx.grad_of(xn);
        auto& gs = ctx.grad_of(sn);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = xn->values[i];
          const std::size_t c = (i / inner) % len;
          if (v > 0.0) {
            gx[i] += g[i];
          } else {
            gx[i] += g[i] * sn->values[c];
            gs[c] += g[i] * v;
          }
        }
      });
}

Tensor relu6(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xv[i], 0.0, 6.0);
  NodePtr xn = x.node();
  return detail::make_op_output("relu6", x.shape(), std::move(out), {xn},
                                [xn](BackwardCtx& ctx, const std::vector<double>& g) {
                                  auto& gx = ctx.grad_of(xn);
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    const double v = xn->values[i];
                                    if (v > 0.0 && v < 6.0) gx[i] += g[i];
                                  }
                                });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, const BatchNormAttrs& attrs) {
  if (x.rank() < 2) throw ContractViolation("batch_norm: input must have a channel axis 1");
  const std::size_t C = x.shape()[1];
  for (const Tensor* t : {&gamma, &beta, &running_mean, &running_var}) {
    if (t->rank() != 1 || t->shape()[0] != C) {
      throw ContractViolation("batch_norm: per-channel tensors must be [C=" + std::to_string(C) +
                              "]");
    }
  }
  const std::size_t B = x.shape()[0];
  std::size_t plane = 1;
  for (std::size_t d = 2; d < x.rank(); ++d) plane *= x.shape()[d];
  const std::size_t n_per_channel = B * plane;
  const auto xv = x.values();

  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (attrs.training) {
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        const double* row = xv.data() + (b * C + c) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += row[i];
        mean[c] += acc;
      }
    }
    for (std::size_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(n_per_channel);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        const double* row = xv.data() + (b * C + c) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          const double dlt = row[i] - mean[c];
          acc += dlt * dlt;
        }
        var[c] += acc;
      }
    }
    for (std::size_t c = 0; c < C; ++c) var[c] /= static_cast<double>(n_per_channel);
    auto rm = running_mean.values_mut();
    auto rv = running_var.values_mut();
    for (std::size_t c = 0; c < C; ++c) {
      rm[c] = (1.0 - attrs.momentum) * rm[c] + attrs.momentum * mean[c];
      rv[c] = (1.0 - attrs.momentum) * rv[c] + attrs.momentum * var[c];
    }
  } else {
    std::copy(running_mean.values().begin(), running_mean.values().end(), mean.begin());
    std::copy(running_var.values().begin(), running_var.values().end(), var.begin());
  }

  std::vector<double> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + attrs.epsilon);

  std::vector<double> xhat(x.size());
  std::vector<double> out(x.size());
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = xv.data() + (b * C + c) * plane;
      double* hrow = xhat.data() + (b * C + c) * plane;
      double* orow = out.data() + (b * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (row[i] - mean[c]) * inv_std[c];
        hrow[i] = h;
        orow[i] = gv[c] * h + bv[c];
      }
    }
  }

  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  const bool training = attrs.training;
  return detail::make_op_output(
      "batch_norm", x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, plane, training,
       n_per_channel](BackwardCtx& ctx, const std::vector<double>& g) {
        auto& gx = ctx.grad_of(xn);
        auto& gg = ctx.grad_of(gn);
        auto& gb = ctx.grad_of(bn);
        const double inv_n = 1.0 / static_cast<double>(n_per_channel);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[base + i];
              sum_gh += g[base + i] * xhat[base + i];
            }
          }
          gb[c] += sum_g;
          gg[c] += sum_gh;
          const double k = gn->values[c] * inv_std[c];
          if (training) {
            const double mean_g = sum_g * inv_n;
            const double mean_gh = sum_gh * inv_n;
            for (std::size_t b = 0; b < B; ++b) {
              const std::size_t base = (b * C + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                gx[base + i] += k * (g[base + i] - mean_g - xhat[base + i] * mean_gh);
              }
            }
          } else {
            for (std::size_t b = 0; b < B; ++b) {
              const std::size_t base = (b * C + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) gx[base + i] += k * g[base + i];
            }
          }
        }
      });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  NodePtr xn = x.node();
  return detail::make_op_output("sum_all", {1}, {acc}, {xn},
                                [xn](BackwardCtx& ctx, const std::vector<double>& g) {
                                  auto& gx = ctx.grad_of(xn);
                                  for (double& v : gx) v += g[0];
                                });
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_size(new_shape) != x.size()) {
    throw ContractViolation("reshape: " + shape_str(x.shape()) + " cannot become " +
                            shape_str(new_shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  NodePtr xn = x.node();
  return detail::make_op_output("reshape", std::move(new_shape), std::move(out), {xn},
                                [xn](BackwardCtx& ctx, const std::vector<double>& g) {
                                  auto& gx = ctx.grad_of(xn);
                                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                });
}

Tensor apply_mask(const Tensor& mask, const Tensor& x) {
  require_same_shape("apply_mask", mask, x);
  const auto mv = mask.values();
  const auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mv[i] != 0.0 && mv[i] != 1.0) {
      throw ContractViolation("apply_mask: non-binary mask entry " + std::to_string(mv[i]) +
                              " at index " + std::to_string(i));
    }
    out[i] = mv[i] != 0.0 ? xv[i] : 0.0;
  }
  NodePtr mn = mask.node(), xn = x.node();
  return detail::make_op_output("apply_mask", x.shape(), std::move(out), {mn, xn},
                                [mn, xn](BackwardCtx& ctx, const std::vector<double>& g) {
                                  auto& gx = ctx.grad_of(xn);
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    if (mn->values[i] != 0.0) gx[i] += g[i];
                                  }
                                });
}

Tensor euclid_seq_loss(const Tensor& pred, const Tensor& truth) {
  require_same_shape("euclid_seq_loss", pred, truth);
  require_rank("euclid_seq_loss", pred, 4);
  const std::size_t B = pred.shape()[0], C = pred.shape()[1];
  const std::size_t plane = pred.shape()[2] * pred.shape()[3];
  const auto pv = pred.values();
  const auto tv = truth.values();
  const std::size_t n_norms = B * plane;
  std::vector<double> norms(n_norms, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* prow = pv.data() + (b * C + c) * plane;
      const double* trow = tv.data() + (b * C + c) * plane;
      double* nrow = norms.data() + b * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double dlt = prow[i] - trow[i];
        nrow[i] += dlt * dlt;
      }
    }
  }
  double acc = 0.0;
  for (double& v : norms) {
    v = std::sqrt(v);
    acc += v;
  }
  const double inv_n = 1.0 / static_cast<double>(n_norms);
  NodePtr pn = pred.node(), tn = truth.node();
  return detail::make_op_output(
      "euclid_seq_loss", {1}, {acc * inv_n}, {pn, tn},
      [pn, tn, norms = std::move(norms), B, C, plane, inv_n](BackwardCtx& ctx,
                                                             const std::vector<double>& g) {
        auto& gp = ctx.grad_of(pn);
        const double s = g[0] * inv_n;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * plane;
            const double* nrow = norms.data() + b * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (nrow[i] > 0.0) {
                gp[base + i] += s * (pn->values[base + i] - tn->values[base + i]) / nrow[i];
              }
            }
          }
        }
      });
}

double finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                               double h) {
  if (h <= 0.0) throw ContractViolation("finite_difference_check: h must be positive");
  for (Tensor& p : params) p.zero_grad();
  Tensor root = f();
  if (root.size() != 1) {
    throw ContractViolation("finite_difference_check: f must be scalar-valued");
  }
  backward(root);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    if (analytic.back().empty()) analytic.back().assign(p.size(), 0.0);
  }
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto vals = params[pi].values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double f_plus = f().item();
      vals[i] = saved - h;
      const double f_minus = f().item();
      vals[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double err = std::abs(analytic[pi][i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace sesf
