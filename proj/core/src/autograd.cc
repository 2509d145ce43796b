#include "ansel/autograd.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ansel/errors.h"
#include "ansel/rng.h"

namespace ansel {

Parameter::Parameter(Tensor initial)
    : value(std::move(initial)),
      gradient(Tensor::zeros(value.shape())),
      adam_m(Tensor::zeros(value.shape())),
      adam_v(Tensor::zeros(value.shape())) {}

void Parameter::zero_grad() {
  std::fill(gradient.data().begin(), gradient.data().end(), 0.0);
}

void Parameter::reset_optimizer_state() {
  zero_grad();
  std::fill(adam_m.data().begin(), adam_m.data().end(), 0.0);
  std::fill(adam_v.data().begin(), adam_v.data().end(), 0.0);
  step_count = 0;
}

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& param) {
  Node node;
  node.value = param.value;
  node.requires_grad = true;
  node.param = &param;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(const char* op, Tensor value,
                  std::initializer_list<Var> inputs, Backward backward) {
  return record(op, std::move(value),
                std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Graph::record(const char* op, Tensor value, std::span<const Var> inputs,
                  Backward backward) {
  if (backward_done_) {
    throw GraphError(std::string(op) + ": tape already consumed by backward");
  }
  value.check_finite(op);
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](Var v) {
    return nodes_[v.id()].requires_grad;
  });
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor Graph::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.has_grad) return node.grad;
  return Tensor::zeros(node.value.shape());
}

void Graph::accumulate(Var v, const Tensor& g) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = g;
    node.has_grad = true;
  } else {
    add_into(node.grad, g);
  }
}

void Graph::backward(Var scalar) {
  if (backward_done_) {
    throw GraphError("backward called twice on the same trace");
  }
  if (value(scalar).size() != 1) {
    throw DimensionError("backward needs a scalar, got shape " +
                         shape_to_string(value(scalar).shape()));
  }
  backward_done_ = true;
  accumulate(scalar, Tensor::filled(value(scalar).shape(), 1.0));
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) add_into(node.param->gradient, node.grad);
  }
}

void backward(const LossValue& loss) { loss.var.graph().backward(loss.var); }

Var matmul(Var a, Var b) {
  Graph& g = a.graph();
  return g.record("matmul", matmul(a.value(), b.value()), {a, b},
                  [a, b](Graph& g, const Tensor& dy) {
                    if (g.requires_grad(a)) {
                      g.accumulate(a, matmul_nt(dy, g.value(b)).reshaped(g.value(a).shape()));
                    }
                    if (g.requires_grad(b)) {
                      g.accumulate(b, matmul_tn(g.value(a), dy).reshaped(g.value(b).shape()));
                    }
                  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = a.graph();
  return g.record("matmul_nt", matmul_nt(a.value(), b.value()), {a, b},
                  [a, b](Graph& g, const Tensor& dy) {
                    // y = a b^T: da = dy b, db = dy^T a
                    if (g.requires_grad(a)) {
                      g.accumulate(a, matmul(dy, g.value(b)).reshaped(g.value(a).shape()));
                    }
                    if (g.requires_grad(b)) {
                      g.accumulate(b, matmul_tn(dy, g.value(a)).reshaped(g.value(b).shape()));
                    }
                  });
}

Var add(Var a, Var b) {
  Graph& g = a.graph();
  return g.record("add", add(a.value(), b.value()), {a, b},
                  [a, b](Graph& g, const Tensor& dy) {
                    g.accumulate(a, dy);
                    g.accumulate(b, dy);
                  });
}

Var add_row_bias(Var x, Var bias) {
  Graph& g = x.graph();
  return g.record("add_row_bias", add_row_bias(x.value(), bias.value()),
                  {x, bias}, [x, bias](Graph& g, const Tensor& dy) {
                    g.accumulate(x, dy);
                    if (g.requires_grad(bias)) {
                      Tensor db = Tensor::zeros(g.value(bias).shape());
                      for (std::size_t i = 0; i < dy.rows(); ++i) {
                        auto r = dy.row(i);
                        for (std::size_t j = 0; j < r.size(); ++j) db[j] += r[j];
                      }
                      g.accumulate(bias, db);
                    }
                  });
}

Var add_constant(Var x, const Tensor& c) {
  Graph& g = x.graph();
  return g.record("add_constant", add(x.value(), c), {x},
                  [x](Graph& g, const Tensor& dy) { g.accumulate(x, dy); });
}

Var scale(Var x, double factor) {
  Graph& g = x.graph();
  return g.record("scale", scale(x.value(), factor), {x},
                  [x, factor](Graph& g, const Tensor& dy) {
                    g.accumulate(x, scale(dy, factor));
                  });
}

Var multiply(Var a, Var b) {
  Graph& g = a.graph();
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError("multiply: incompatible shapes " +
                         shape_to_string(a.value().shape()) + " and " +
                         shape_to_string(b.value().shape()));
  }
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return g.record("multiply", std::move(y), {a, b},
                  [a, b](Graph& g, const Tensor& dy) {
                    Tensor da = dy, db = dy;
                    for (std::size_t i = 0; i < dy.size(); ++i) {
                      da[i] *= g.value(b)[i];
                      db[i] *= g.value(a)[i];
                    }
                    g.accumulate(a, da);
                    g.accumulate(b, db);
                  });
}

Var softmax_rows(Var x) {
  Graph& g = x.graph();
  Tensor y = softmax_rows(x.value());
  const std::size_t out_id = g.size();
  return g.record("softmax_rows", std::move(y), {x},
                  [x, out_id](Graph& g, const Tensor& dy) {
                    const Tensor& y = g.value(Var(&g, out_id));
                    Tensor dx = dy;
                    for (std::size_t i = 0; i < y.rows(); ++i) {
                      auto yr = y.row(i);
                      auto dyr = dy.row(i);
                      double dot = 0.0;
                      for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * dyr[j];
                      auto dxr = dx.row(i);
                      for (std::size_t j = 0; j < yr.size(); ++j) dxr[j] = yr[j] * (dyr[j] - dot);
                    }
                    g.accumulate(x, dx);
                  });
}

Var gelu(Var x) {
  Graph& g = x.graph();
  Tensor y = x.value();
  for (auto& v : y.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  return g.record("gelu", std::move(y), {x}, [x](Graph& g, const Tensor& dy) {
    const Tensor& in = g.value(x);
    Tensor dx = dy;
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = in[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx[i] *= cdf + v * pdf;
    }
    g.accumulate(x, dx);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = x.graph();
  const Tensor& in = x.value();
  const std::size_t m = in.rows(), n = in.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layer_norm: gain/bias " +
                         shape_to_string(gain.value().shape()) +
                         " do not match input " + shape_to_string(in.shape()));
  }
  Tensor normalized(in.shape());
  std::vector<double> inv_std(m);
  Tensor y(in.shape());
  for (std::size_t i = 0; i < m; ++i) {
    auto r = in.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (r[j] - mean) * inv_std[i];
      normalized.at(i, j) = xhat;
      y.at(i, j) = xhat * gain.value()[j] + bias.value()[j];
    }
  }
  return g.record(
      "layer_norm", std::move(y), {x, gain, bias},
      [x, gain, bias, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](Graph& g, const Tensor& dy) {
        const std::size_t m = dy.rows(), n = dy.cols();
        const Tensor& gamma = g.value(gain);
        Tensor dgain = Tensor::zeros(gamma.shape());
        Tensor dbias = Tensor::zeros(gamma.shape());
        Tensor dx(dy.shape());
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = dy.at(i, j);
            const double xhat = normalized.at(i, j);
            dgain[j] += d * xhat;
            dbias[j] += d;
            dxhat[j] = d * gamma[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat;
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            dx.at(i, j) = inv_std[i] * (dxhat[j] - mean_d - normalized.at(i, j) * mean_dx);
          }
        }
        g.accumulate(x, dx);
        g.accumulate(gain, dgain);
        g.accumulate(bias, dbias);
      });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  Graph& g = x.graph();
  Tensor mask(x.value().shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& v : mask.data()) v = rng.bernoulli(rate) ? 0.0 : keep_scale;
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return g.record("dropout", std::move(y), {x},
                  [x, mask = std::move(mask)](Graph& g, const Tensor& dy) {
                    Tensor dx = dy;
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask[i];
                    g.accumulate(x, dx);
                  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Graph& g = table.graph();
  std::vector<int> index(ids.begin(), ids.end());
  return g.record("gather_rows", gather_rows(table.value(), ids), {table},
                  [table, index = std::move(index)](Graph& g, const Tensor& dy) {
                    Tensor dt = Tensor::zeros(g.value(table).shape());
                    for (std::size_t i = 0; i < index.size(); ++i) {
                      auto src = dy.row(i);
                      auto dst = dt.row(static_cast<std::size_t>(index[i]));
                      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                    }
                    g.accumulate(table, dt);
                  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Graph& g = parts.front().graph();
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (Var v : parts) values.push_back(v.value());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record("concat_cols", concat_cols(values), parts,
                  [inputs](Graph& g, const Tensor& dy) {
                    std::size_t offset = 0;
                    for (Var v : inputs) {
                      const std::size_t width = g.value(v).cols();
                      if (g.requires_grad(v)) {
                        g.accumulate(v, slice_cols(dy, offset, offset + width)
                                            .reshaped(g.value(v).shape()));
                      }
                      offset += width;
                    }
                  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Graph& g = parts.front().graph();
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (Var v : parts) values.push_back(v.value());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record("concat_rows", concat_rows(values), parts,
                  [inputs](Graph& g, const Tensor& dy) {
                    std::size_t offset = 0;
                    const std::size_t n = dy.cols();
                    for (Var v : inputs) {
                      const Tensor& val = g.value(v);
                      const std::size_t count = val.size();
                      if (g.requires_grad(v)) {
                        std::vector<double> chunk(
                            dy.data().begin() + static_cast<std::ptrdiff_t>(offset * n),
                            dy.data().begin() + static_cast<std::ptrdiff_t>(offset * n + count));
                        g.accumulate(v, Tensor(val.shape(), std::move(chunk)));
                      }
                      offset += val.rows();
                    }
                  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Graph& g = x.graph();
  return g.record("slice_cols", slice_cols(x.value(), begin, end), {x},
                  [x, begin](Graph& g, const Tensor& dy) {
                    Tensor dx = Tensor::zeros(g.value(x).shape());
                    for (std::size_t i = 0; i < dy.rows(); ++i) {
                      auto src = dy.row(i);
                      auto dst = dx.row(i);
                      std::copy(src.begin(), src.end(),
                                dst.begin() + static_cast<std::ptrdiff_t>(begin));
                    }
                    g.accumulate(x, dx);
                  });
}

Var sum(Var x) {
  Graph& g = x.graph();
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return g.record("sum", Tensor({1}, {total}), {x},
                  [x](Graph& g, const Tensor& dy) {
                    g.accumulate(x, Tensor::filled(g.value(x).shape(), dy[0]));
                  });
}

LossValue cross_entropy(Var probabilities, std::span<const int> labels) {
  Graph& g = probabilities.graph();
  const Tensor& p = probabilities.value();
  const std::size_t batch = p.rows(), k = p.cols();
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for predictions of shape " +
                         shape_to_string(p.shape()));
  }
  std::vector<int> targets(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k) {
      throw DataError("cross_entropy: label " + std::to_string(targets[i]) +
                      " outside [0, " + std::to_string(k) + ")");
    }
    total -= std::log(std::max(p.at(i, static_cast<std::size_t>(targets[i])),
                               kProbabilityFloor));
  }
  const double mean = total / static_cast<double>(batch);
  Var out = g.record(
      "cross_entropy", Tensor({1}, {mean}), {probabilities},
      [probabilities, targets = std::move(targets)](Graph& g, const Tensor& dy) {
        const Tensor& p = g.value(probabilities);
        Tensor dp = Tensor::zeros(p.shape());
        const double inv_batch = 1.0 / static_cast<double>(p.rows());
        for (std::size_t i = 0; i < p.rows(); ++i) {
          const auto col = static_cast<std::size_t>(targets[i]);
          const double prob = p.at(i, col);
          // The floor is flat below kProbabilityFloor, so no gradient there.
          if (prob > kProbabilityFloor) dp.at(i, col) = -dy[0] * inv_batch / prob;
        }
        g.accumulate(probabilities, dp);
      });
  return LossValue{out, mean, batch};
}

}  // namespace ansel
