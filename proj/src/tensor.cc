// Copyright 2026 The facedub Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "facedub/tensor.h"

#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace facedub::nn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor::Tensor(Matrix value, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m));
}

const Matrix& Tensor::grad() const {
  if (node_->grad.size() == 0) {
    node_->grad = Matrix::Zero(rows(), cols());
  }
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0, 0); }

double Tensor::item() const {
  require(rows() == 1 && cols() == 1, "item() needs a 1x1 tensor");
  return value()(0, 0);
}

void Tensor::backward() const {
  require(rows() == 1 && cols() == 1, "backward() needs a scalar tensor");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Matrix seed(1, 1);
  seed(0, 0) = 1.0;
  node_->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
  // Interior gradients are not needed after the sweep.
  for (Node* node : order) {
    if (node->backward) node->grad.resize(0, 0);
  }
}

namespace {
thread_local int no_grad_depth = 0;
}  // namespace

NoGrad::NoGrad() { ++no_grad_depth; }
NoGrad::~NoGrad() { --no_grad_depth; }

Tensor make_result(Matrix value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  if (no_grad_depth > 0) return Tensor(std::move(value), false);
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  Tensor out(std::move(value), needs);
  if (needs) {
    out.node_->inputs.reserve(inputs.size());
    for (auto& t : inputs) out.node_->inputs.push_back(t.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix v = a.value() * b.value();
  return make_result(std::move(v), {a, b}, [](Node& self) {
    Node& x = in(self, 0);
    Node& y = in(self, 1);
    if (x.requires_grad) x.accumulate(self.grad * y.value.transpose());
    if (y.requires_grad) y.accumulate(x.value.transpose() * self.grad);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Matrix v = a.value() * b.value().transpose();
  return make_result(std::move(v), {a, b}, [](Node& self) {
    Node& x = in(self, 0);
    Node& y = in(self, 1);
    if (x.requires_grad) x.accumulate(self.grad * y.value);
    if (y.requires_grad) y.accumulate(self.grad.transpose() * x.value);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix v = a.value() + b.value();
  return make_result(std::move(v), {a, b}, [](Node& self) {
    for (auto& p : self.inputs) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Matrix v = a.value() - b.value();
  return make_result(std::move(v), {a, b}, [](Node& self) {
    if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
    if (in(self, 1).requires_grad) in(self, 1).accumulate(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Matrix v = a.value().cwiseProduct(b.value());
  return make_result(std::move(v), {a, b}, [](Node& self) {
    Node& x = in(self, 0);
    Node& y = in(self, 1);
    if (x.requires_grad) x.accumulate(self.grad.cwiseProduct(y.value));
    if (y.requires_grad) y.accumulate(self.grad.cwiseProduct(x.value));
  });
}

Tensor scale(const Tensor& a, double s) {
  Matrix v = a.value() * s;
  return make_result(std::move(v), {a},
                     [s](Node& self) { in(self, 0).accumulate(self.grad * s); });
}

Tensor add_scalar(const Tensor& a, double s) {
  Matrix v = a.value().array() + s;
  return make_result(std::move(v), {a},
                     [](Node& self) { in(self, 0).accumulate(self.grad); });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(v), {a, row}, [](Node& self) {
    if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
    if (in(self, 1).requires_grad) {
      in(self, 1).accumulate(self.grad.colwise().sum());
    }
  });
}

Tensor mul_col(const Tensor& a, const Tensor& col) {
  require(col.cols() == 1 && col.rows() == a.rows(), "mul_col: shape mismatch");
  Matrix v = a.value().array().colwise() * col.value().col(0).array();
  return make_result(std::move(v), {a, col}, [](Node& self) {
    Node& x = in(self, 0);
    Node& c = in(self, 1);
    if (x.requires_grad) {
      Matrix g = self.grad.array().colwise() * c.value.col(0).array();
      x.accumulate(g);
    }
    if (c.requires_grad) {
      Matrix g = self.grad.cwiseProduct(x.value).rowwise().sum();
      c.accumulate(g);
    }
  });
}

Tensor transpose(const Tensor& a) {
  Matrix v = a.value().transpose();
  return make_result(std::move(v), {a}, [](Node& self) {
    in(self, 0).accumulate(self.grad.transpose());
  });
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename F, typename D>
Tensor pointwise(const Tensor& a, F f, D df) {
  Matrix v = a.value().unaryExpr(f);
  return make_result(std::move(v), {a}, [df](Node& self) {
    Node& x = in(self, 0);
    Matrix g = self.grad.binaryExpr(x.value, [&](double gi, double xi) {
      return gi * df(xi);
    });
    x.accumulate(g);
  });
}

}  // namespace

Tensor gelu(const Tensor& a) {
  return pointwise(
      a,
      [](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
      },
      [](double x) {
        const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        return 0.5 * (1.0 + t) +
               0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      });
}

Tensor tanh(const Tensor& a) {
  return pointwise(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Tensor sigmoid(const Tensor& a) {
  return pointwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s);
      });
}

Tensor square(const Tensor& a) {
  return pointwise(
      a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return pointwise(
      a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& a) {
  return pointwise(
      a, [](double x) { return std::sqrt(x); },
      [](double x) { return x > 0 ? 0.5 / std::sqrt(x) : 0.0; });
}

Tensor softmax_rows(const Tensor& a) {
  Matrix v(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    v.row(r) = (a.value().row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  return make_result(std::move(v), {a}, [](Node& self) {
    const Matrix& y = self.value;
    Eigen::VectorXd dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = y.array() * (self.grad.colwise() - dot).array();
    in(self, 0).accumulate(g);
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  Matrix v(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    const double lse = m + std::log((a.value().row(r).array() - m).exp().sum());
    v.row(r) = a.value().row(r).array() - lse;
  }
  return make_result(std::move(v), {a}, [](Node& self) {
    const Matrix p = self.value.array().exp();
    const Eigen::VectorXd total = self.grad.rowwise().sum();
    in(self, 0).accumulate(self.grad - Matrix(p.array().colwise() * total.array()));
  });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  const Index n = a.cols();
  Matrix v(a.rows(), n);
  Eigen::VectorXd inv_std(a.rows());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mu = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    v.row(r) = (a.value().row(r).array() - mu) * inv_std(r);
  }
  return make_result(std::move(v), {a}, [inv_std](Node& self) {
    const Matrix& xhat = self.value;
    const Matrix& g = self.grad;
    Eigen::VectorXd g_mean = g.rowwise().mean();
    Eigen::VectorXd gx_mean = g.cwiseProduct(xhat).rowwise().mean();
    Matrix dx(g.rows(), g.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      dx.row(r) = inv_std(r) * (g.row(r).array() - g_mean(r) -
                                xhat.row(r).array() * gx_mean(r));
    }
    in(self, 0).accumulate(dx);
  });
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  Eigen::VectorXd norms =
      (a.value().rowwise().squaredNorm().array() + eps).sqrt();
  Matrix v = a.value().array().colwise() / norms.array();
  return make_result(std::move(v), {a}, [norms](Node& self) {
    const Matrix& y = self.value;
    Eigen::VectorXd dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = self.grad - (y.array().colwise() * dot.array()).matrix();
    g.array().colwise() /= norms.array();
    in(self, 0).accumulate(g);
  });
}

Tensor row_norms(const Tensor& a) {
  Matrix v = a.value().rowwise().norm();
  return make_result(std::move(v), {a}, [](Node& self) {
    Node& x = in(self, 0);
    Matrix g(x.value.rows(), x.value.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      const double n = self.value(r, 0);
      if (n > 0) {
        g.row(r) = x.value.row(r) * (self.grad(r, 0) / n);
      } else {
        g.row(r).setZero();
      }
    }
    x.accumulate(g);
  });
}

Tensor sum(const Tensor& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return make_result(std::move(v), {a}, [](Node& self) {
    Node& x = in(self, 0);
    x.accumulate(Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  require(a.value().size() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Tensor mean_rows(const Tensor& a) {
  require(a.rows() > 0, "mean_rows: empty tensor");
  Matrix v = a.value().colwise().mean();
  return make_result(std::move(v), {a}, [](Node& self) {
    Node& x = in(self, 0);
    const double inv = 1.0 / static_cast<double>(x.value.rows());
    Matrix g = self.grad.replicate(x.value.rows(), 1) * inv;
    x.accumulate(g);
  });
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  require(rows * cols == a.value().size(), "reshape: element count mismatch");
  Matrix v = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_result(std::move(v), {a}, [](Node& self) {
    Node& x = in(self, 0);
    Matrix g = Eigen::Map<const Matrix>(self.grad.data(), x.value.rows(),
                                        x.value.cols());
    x.accumulate(g);
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_result(std::move(v), {parts.begin(), parts.end()}, [](Node& self) {
    Index c = 0;
    for (auto& p : self.inputs) {
      const Index w = p->value.cols();
      if (p->requires_grad) p->accumulate(self.grad.middleCols(c, w));
      c += w;
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_result(std::move(v), {parts.begin(), parts.end()}, [](Node& self) {
    Index r = 0;
    for (auto& p : self.inputs) {
      const Index h = p->value.rows();
      if (p->requires_grad) p->accumulate(self.grad.middleRows(r, h));
      r += h;
    }
  });
}

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.rows(),
          "slice_rows: out of range");
  Matrix v = a.value().middleRows(begin, count);
  return make_result(std::move(v), {a}, [begin, count](Node& self) {
    Node& x = in(self, 0);
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    g.middleRows(begin, count) = self.grad;
    x.accumulate(g);
  });
}

Tensor slice_cols(const Tensor& a, Index begin, Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.cols(),
          "slice_cols: out of range");
  Matrix v = a.value().middleCols(begin, count);
  return make_result(std::move(v), {a}, [begin, count](Node& self) {
    Node& x = in(self, 0);
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    g.middleCols(begin, count) = self.grad;
    x.accumulate(g);
  });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> rows) {
  std::vector<Index> idx(rows.begin(), rows.end());
  Matrix v(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < a.rows(), "gather_rows: index out of range");
    v.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  }
  return make_result(std::move(v), {a}, [idx = std::move(idx)](Node& self) {
    Node& x = in(self, 0);
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    }
    x.accumulate(g);
  });
}

Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::int64_t>> map,
              Index rows, Index cols) {
  require(static_cast<Index>(map->size()) == rows * cols,
          "gather: map size mismatch");
  Matrix v(rows, cols);
  const double* src = a.value().data();
  double* dst = v.data();
  const Index n = a.value().size();
  for (std::size_t i = 0; i < map->size(); ++i) {
    const std::int64_t j = (*map)[i];
    require(j < n, "gather: index out of range");
    dst[i] = j >= 0 ? src[j] : 0.0;
  }
  return make_result(std::move(v), {a}, [map](Node& self) {
    Node& x = in(self, 0);
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    double* gd = g.data();
    const double* sd = self.grad.data();
    for (std::size_t i = 0; i < map->size(); ++i) {
      const std::int64_t j = (*map)[i];
      if (j >= 0) gd[j] += sd[i];
    }
    x.accumulate(g);
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require(q.cols() == k.cols(), "attention: query/key width mismatch");
  require(k.rows() == v.rows(), "attention: key/value count mismatch");
  require(k.rows() >= 1, "attention: empty key set");
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return matmul(softmax_rows(scale(matmul_nt(q, k), inv)), v);
}

}  // namespace facedub::nn
