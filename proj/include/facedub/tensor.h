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

#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value in the networks is a 2-D matrix; spatial feature maps
// are stored as (positions x channels) with positions in row-major order.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace facedub::nn {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor constant(Matrix value) { return Tensor(std::move(value)); }
  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor scalar(double v);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero-filled if nothing has been accumulated yet.
  const Matrix& grad() const;
  void zero_grad();

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  double item() const;

  // Seeds d(this)/d(this) = 1 (requires a 1x1 tensor) and propagates.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Tensor make_result(Matrix value, std::vector<Tensor> inputs,
                            std::function<void(Node&)> backward);
  std::shared_ptr<Node> node_;
};

// While alive, ops on this thread record no graph.
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

// Builds an op output. The backward closure is dropped when no input needs
// gradients so that inference builds no graph.
Tensor make_result(Matrix value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

// Arithmetic.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_row(const Tensor& a, const Tensor& row);  // broadcast 1 x c over rows
Tensor mul_col(const Tensor& a, const Tensor& col);  // broadcast n x 1 over cols
Tensor transpose(const Tensor& a);

// Pointwise nonlinearities.
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
// sqrt with zero subgradient at 0.
Tensor sqrt(const Tensor& a);

// Row-wise operations.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-8);
// Euclidean norm of each row, n x 1; zero subgradient at the origin.
Tensor row_norms(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // 1 x c column means

// Shape manipulation.
Tensor reshape(const Tensor& a, Index rows, Index cols);  // row-major order
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, Index begin, Index count);
Tensor slice_cols(const Tensor& a, Index begin, Index count);
Tensor gather_rows(const Tensor& a, std::span<const Index> rows);
// out.data()[i] = a.data()[map[i]], or 0 when map[i] < 0. Backward scatters.
Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::int64_t>> map,
              Index rows, Index cols);

// softmax(q k^T / sqrt(d)) v with d = q.cols().
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace facedub::nn
