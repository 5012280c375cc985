#include "peftkit/graph.hpp"

#include <cmath>
#include <sstream>

namespace peftkit {

const Graph::Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw ContractError("graph node id out of range");
  return nodes_[id];
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::leaf(Tensor value, bool trainable) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  n.trainable = trainable;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  Node n;
  n.op = Op::matmul;
  n.inputs = {a, b};
  n.value = peftkit::matmul(value(a), value(b));
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  Node n;
  n.op = Op::add;
  n.inputs = {a, b};
  n.value = peftkit::add(value(a), value(b));
  return push(std::move(n));
}

NodeId Graph::add_n(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw ContractError("add_n needs at least one input");
  Tensor acc = value(xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) acc = peftkit::add(acc, value(xs[i]));
  Node n;
  n.op = Op::add_n;
  n.inputs = xs;
  n.value = std::move(acc);
  return push(std::move(n));
}

NodeId Graph::subtract(NodeId a, NodeId b) {
  Node n;
  n.op = Op::subtract;
  n.inputs = {a, b};
  n.value = peftkit::subtract(value(a), value(b));
  return push(std::move(n));
}

NodeId Graph::hadamard(NodeId a, NodeId b) {
  Node n;
  n.op = Op::hadamard;
  n.inputs = {a, b};
  n.value = peftkit::hadamard(value(a), value(b));
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double c) {
  Node n;
  n.op = Op::scale;
  n.inputs = {x};
  n.attr = c;
  n.value = peftkit::scale(value(x), c);
  return push(std::move(n));
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
  Node n;
  n.op = Op::add_bias;
  n.inputs = {x, bias};
  n.value = peftkit::add_row_bias(value(x), value(bias));
  return push(std::move(n));
}

NodeId Graph::nonlinearity(NodeId x, Nonlinearity f) {
  Node n;
  n.op = Op::nonlin;
  n.inputs = {x};
  n.f = f;
  n.value = peftkit::nonlinearity(value(x), f);
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId x) {
  Node n;
  n.op = Op::transpose;
  n.inputs = {x};
  n.value = peftkit::transpose(value(x));
  return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId x, std::size_t first, std::size_t count) {
  const Tensor& v = value(x);
  if (v.rank() != 2 || first + count > v.cols() || count == 0) {
    throw DimensionError("slice_cols out of range on " + v.shape_str());
  }
  std::vector<double> out(v.rows() * count);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = v.at(i, first + j);
  Node n;
  n.op = Op::slice_cols;
  n.inputs = {x};
  n.i0 = first;
  n.i1 = count;
  n.value = Tensor({v.rows(), count}, std::move(out));
  return push(std::move(n));
}

NodeId Graph::concat_cols(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw ContractError("concat_cols needs at least one input");
  const std::size_t m = value(xs[0]).rows();
  std::size_t total = 0;
  for (NodeId id : xs) {
    if (value(id).rank() != 2 || value(id).rows() != m) {
      throw DimensionError("concat_cols row mismatch");
    }
    total += value(id).cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (NodeId id : xs) {
    const Tensor& v = value(id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out[i * total + off + j] = v.at(i, j);
    off += v.cols();
  }
  Node n;
  n.op = Op::concat_cols;
  n.inputs = xs;
  n.value = Tensor({m, total}, std::move(out));
  return push(std::move(n));
}

NodeId Graph::take_row(NodeId x, std::size_t row) {
  const Tensor& v = value(x);
  if (v.rank() != 2 || row >= v.rows()) throw DimensionError("take_row out of range");
  std::vector<double> out(v.cols());
  for (std::size_t j = 0; j < v.cols(); ++j) out[j] = v.at(row, j);
  Node n;
  n.op = Op::take_row;
  n.inputs = {x};
  n.i0 = row;
  n.value = Tensor({1, v.cols()}, std::move(out));
  return push(std::move(n));
}

NodeId Graph::as_row(NodeId x) {
  const Tensor& v = value(x);
  if (v.rank() != 1) throw DimensionError("as_row expects rank 1, got " + v.shape_str());
  Node n;
  n.op = Op::as_row;
  n.inputs = {x};
  n.value = Tensor({1, v.numel()}, v.data());
  return push(std::move(n));
}

NodeId Graph::as_vector(NodeId x) {
  const Tensor& v = value(x);
  if (v.rank() != 2 || v.rows() != 1) {
    throw DimensionError("as_vector expects [1,n], got " + v.shape_str());
  }
  Node n;
  n.op = Op::as_vector;
  n.inputs = {x};
  n.value = Tensor({v.cols()}, v.data());
  return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId x) {
  const Tensor& v = value(x);
  if (v.rank() != 2) throw DimensionError("softmax_rows expects rank 2");
  std::vector<double> out(v.numel());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    double mx = v.at(i, 0);
    for (std::size_t j = 1; j < v.cols(); ++j) mx = std::max(mx, v.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < v.cols(); ++j) {
      out[i * v.cols() + j] = std::exp(v.at(i, j) - mx);
      denom += out[i * v.cols() + j];
    }
    for (std::size_t j = 0; j < v.cols(); ++j) out[i * v.cols() + j] /= denom;
  }
  Node n;
  n.op = Op::softmax_rows;
  n.inputs = {x};
  n.value = Tensor(v.shape(), std::move(out));
  return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId weight, NodeId bias, double eps) {
  const Tensor& v = value(x);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  if (v.rank() != 2 || w.rank() != 1 || b.rank() != 1 || w.numel() != v.cols() ||
      b.numel() != v.cols()) {
    throw DimensionError("layer_norm shape mismatch: " + v.shape_str() + ", " + w.shape_str() +
                         ", " + b.shape_str());
  }
  const std::size_t m = v.rows(), d = v.cols();
  std::vector<double> out(v.numel());
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += v.at(i, j);
    mean /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = v.at(i, j) - mean;
      var += c * c;
    }
    var /= double(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = (v.at(i, j) - mean) * inv * w.at(j) + b.at(j);
    }
  }
  Node n;
  n.op = Op::layer_norm;
  n.inputs = {x, weight, bias};
  n.attr = eps;
  n.value = Tensor(v.shape(), std::move(out));
  return push(std::move(n));
}

NodeId Graph::embedding(NodeId table, std::vector<std::size_t> ids) {
  const Tensor& t = value(table);
  if (t.rank() != 2) throw DimensionError("embedding table must be rank 2");
  if (ids.empty()) throw ContractError("embedding lookup needs at least one id");
  std::vector<double> out(ids.size() * t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= t.rows()) throw ContractError("embedding id out of range");
    for (std::size_t j = 0; j < t.cols(); ++j) out[i * t.cols() + j] = t.at(ids[i], j);
  }
  Node n;
  n.op = Op::embedding;
  n.inputs = {table};
  n.ids = std::move(ids);
  n.value = Tensor({n.ids.size(), t.cols()}, std::move(out));
  return push(std::move(n));
}

NodeId Graph::sum_all(NodeId x) {
  const Tensor& v = value(x);
  double s = 0.0;
  for (double e : v.data()) s += e;
  Node n;
  n.op = Op::sum_all;
  n.inputs = {x};
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Graph::mean_all(NodeId x) {
  const Tensor& v = value(x);
  double s = 0.0;
  for (double e : v.data()) s += e;
  Node n;
  n.op = Op::mean_all;
  n.inputs = {x};
  n.value = Tensor::scalar(s / double(v.numel()));
  return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId logits, std::size_t label) {
  const Tensor& v = value(logits);
  if (v.rank() == 2 && v.rows() != 1) throw DimensionError("cross_entropy expects a single row");
  if (label >= v.numel()) throw ContractError("cross_entropy label out of range");
  double mx = v.at(std::size_t{0});
  for (std::size_t j = 1; j < v.numel(); ++j) mx = std::max(mx, v.at(j));
  double denom = 0.0;
  for (std::size_t j = 0; j < v.numel(); ++j) denom += std::exp(v.at(j) - mx);
  const double loss = mx + std::log(denom) - v.at(label);
  Node n;
  n.op = Op::cross_entropy;
  n.inputs = {logits};
  n.i0 = label;
  n.value = Tensor::scalar(loss);
  return push(std::move(n));
}

NodeId Graph::squared_error(NodeId pred, double target) {
  const Tensor& v = value(pred);
  if (v.numel() != 1) throw DimensionError("squared_error expects a scalar prediction");
  const double diff = v.at(std::size_t{0}) - target;
  Node n;
  n.op = Op::squared_error;
  n.inputs = {pred};
  n.attr = target;
  n.value = Tensor::scalar(diff * diff);
  return push(std::move(n));
}

std::unordered_map<NodeId, Tensor> Graph::backward(NodeId loss) const {
  const Node& ln = node(loss);
  if (ln.value.numel() != 1) {
    throw ContractError("backward expects a scalar loss, got shape " + ln.value.shape_str());
  }

  std::vector<Tensor> grads(nodes_.size());
  std::vector<char> has(nodes_.size(), 0);
  auto accum = [&](NodeId id, Tensor g) {
    if (!has[id]) {
      grads[id] = std::move(g);
      has[id] = 1;
    } else {
      auto& dst = grads[id].data();
      const auto& src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  };

  grads[loss] = Tensor(ln.value.shape(), {1.0});
  has[loss] = 1;

  for (NodeId id = loss + 1; id-- > 0;) {
    if (!has[id]) continue;
    const Node& n = nodes_[id];
    const Tensor& g = grads[id];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        accum(n.inputs[0], peftkit::matmul(g, peftkit::transpose(b)));
        accum(n.inputs[1], peftkit::matmul(peftkit::transpose(a), g));
        break;
      }
      case Op::add:
        accum(n.inputs[0], g);
        accum(n.inputs[1], g);
        break;
      case Op::add_n:
        for (NodeId in : n.inputs) accum(in, g);
        break;
      case Op::subtract:
        accum(n.inputs[0], g);
        accum(n.inputs[1], peftkit::scale(g, -1.0));
        break;
      case Op::hadamard:
        accum(n.inputs[0], peftkit::hadamard(g, nodes_[n.inputs[1]].value));
        accum(n.inputs[1], peftkit::hadamard(g, nodes_[n.inputs[0]].value));
        break;
      case Op::scale:
        accum(n.inputs[0], peftkit::scale(g, n.attr));
        break;
      case Op::add_bias: {
        accum(n.inputs[0], g);
        const std::size_t m = g.rows(), d = g.cols();
        std::vector<double> gb(d, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
        accum(n.inputs[1], Tensor({d}, std::move(gb)));
        break;
      }
      case Op::nonlin: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        std::vector<double> gx(x.numel());
        for (std::size_t i = 0; i < gx.size(); ++i) {
          gx[i] = g.at(i) * nonlinearity_grad_scalar(x.at(i), n.f);
        }
        accum(n.inputs[0], Tensor(x.shape(), std::move(gx)));
        break;
      }
      case Op::transpose:
        accum(n.inputs[0], peftkit::transpose(g));
        break;
      case Op::slice_cols: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        Tensor gx = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gx.at(i, n.i0 + j) = g.at(i, j);
        accum(n.inputs[0], std::move(gx));
        break;
      }
      case Op::concat_cols: {
        std::size_t off = 0;
        for (NodeId in : n.inputs) {
          const Tensor& v = nodes_[in].value;
          std::vector<double> part(v.numel());
          for (std::size_t i = 0; i < v.rows(); ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) part[i * v.cols() + j] = g.at(i, off + j);
          accum(in, Tensor(v.shape(), std::move(part)));
          off += v.cols();
        }
        break;
      }
      case Op::take_row: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        Tensor gx = Tensor::zeros(x.shape());
        for (std::size_t j = 0; j < g.cols(); ++j) gx.at(n.i0, j) = g.at(std::size_t{0}, j);
        accum(n.inputs[0], std::move(gx));
        break;
      }
      case Op::as_row:
        accum(n.inputs[0], Tensor(nodes_[n.inputs[0]].value.shape(), g.data()));
        break;
      case Op::as_vector:
        accum(n.inputs[0], Tensor(nodes_[n.inputs[0]].value.shape(), g.data()));
        break;
      case Op::softmax_rows: {
        const Tensor& y = n.value;
        std::vector<double> gx(y.numel());
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) {
            gx[i * y.cols() + j] = y.at(i, j) * (g.at(i, j) - dot);
          }
        }
        accum(n.inputs[0], Tensor(y.shape(), std::move(gx)));
        break;
      }
      case Op::layer_norm: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        const Tensor& w = nodes_[n.inputs[1]].value;
        const std::size_t m = x.rows(), d = x.cols();
        std::vector<double> gx(x.numel()), gw(d, 0.0), gb(d, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          double mean = 0.0;
          for (std::size_t j = 0; j < d; ++j) mean += x.at(i, j);
          mean /= double(d);
          double var = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double c = x.at(i, j) - mean;
            var += c * c;
          }
          var /= double(d);
          const double inv = 1.0 / std::sqrt(var + n.attr);
          // xhat_j = (x_j - mean) * inv ; y = xhat*w + b
          double mean_gw = 0.0, mean_gwx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (x.at(i, j) - mean) * inv;
            const double gyw = g.at(i, j) * w.at(j);
            mean_gw += gyw;
            mean_gwx += gyw * xhat;
            gw[j] += g.at(i, j) * xhat;
            gb[j] += g.at(i, j);
          }
          mean_gw /= double(d);
          mean_gwx /= double(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (x.at(i, j) - mean) * inv;
            const double gyw = g.at(i, j) * w.at(j);
            gx[i * d + j] = (gyw - mean_gw - xhat * mean_gwx) * inv;
          }
        }
        accum(n.inputs[0], Tensor(x.shape(), std::move(gx)));
        accum(n.inputs[1], Tensor({d}, std::move(gw)));
        accum(n.inputs[2], Tensor({d}, std::move(gb)));
        break;
      }
      case Op::embedding: {
        const Tensor& t = nodes_[n.inputs[0]].value;
        Tensor gt = Tensor::zeros(t.shape());
        for (std::size_t i = 0; i < n.ids.size(); ++i)
          for (std::size_t j = 0; j < t.cols(); ++j) gt.at(n.ids[i], j) += g.at(i, j);
        accum(n.inputs[0], std::move(gt));
        break;
      }
      case Op::sum_all: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        accum(n.inputs[0], Tensor::full(x.shape(), g.at(std::size_t{0})));
        break;
      }
      case Op::mean_all: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        accum(n.inputs[0], Tensor::full(x.shape(), g.at(std::size_t{0}) / double(x.numel())));
        break;
      }
      case Op::cross_entropy: {
        const Tensor& l = nodes_[n.inputs[0]].value;
        double mx = l.at(std::size_t{0});
        for (std::size_t j = 1; j < l.numel(); ++j) mx = std::max(mx, l.at(j));
        double denom = 0.0;
        std::vector<double> gl(l.numel());
        for (std::size_t j = 0; j < l.numel(); ++j) {
          gl[j] = std::exp(l.at(j) - mx);
          denom += gl[j];
        }
        const double gs = g.at(std::size_t{0});
        for (std::size_t j = 0; j < l.numel(); ++j) {
          gl[j] = gs * (gl[j] / denom - (j == n.i0 ? 1.0 : 0.0));
        }
        accum(n.inputs[0], Tensor(l.shape(), std::move(gl)));
        break;
      }
      case Op::squared_error: {
        const Tensor& p = nodes_[n.inputs[0]].value;
        const double gp = g.at(std::size_t{0}) * 2.0 * (p.at(std::size_t{0}) - n.attr);
        accum(n.inputs[0], Tensor(p.shape(), {gp}));
        break;
      }
    }
  }

  std::unordered_map<NodeId, Tensor> out;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].op == Op::leaf && nodes_[id].trainable) {
      out.emplace(id, has[id] ? std::move(grads[id]) : Tensor::zeros(nodes_[id].value.shape()));
    }
  }
  return out;
}

Tensor finite_difference(const std::function<double(const Tensor&)>& fn, const Tensor& params,
                         double step) {
  if (!(step > 0.0)) throw ContractError("finite_difference step must be positive");
  Tensor probe = params;
  std::vector<double> grad(params.numel());
  for (std::size_t i = 0; i < params.numel(); ++i) {
    const double orig = probe.at(i);
    probe.at(i) = orig + step;
    const double hi = fn(probe);
    probe.at(i) = orig - step;
    const double lo = fn(probe);
    probe.at(i) = orig;
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return Tensor(params.shape(), std::move(grad));
}

}  // namespace peftkit
