#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace hm::nn {

using Mat = Eigen::MatrixXd;

/// One value in a reverse-mode graph. Parents stay alive as long as the child.
struct Node {
  Mat value;
  Mat grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Mat& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    grad += g;
  }
};

using Var = std::shared_ptr<Node>;

Var constant(Mat value);
/// Leaf that collects gradients across backward passes until zeroed.
Var parameter(Mat value);

/// Back-propagates from a 1x1 node through everything reachable from it.
void backward(const Var& loss);

/// Variable-length sequences stored back to back as rows.
struct Segments {
  std::vector<int> offsets;
  std::vector<int> lengths;

  static Segments from_lengths(const std::vector<int>& lengths);
  int total_rows() const { return offsets.empty() ? 0 : offsets.back() + lengths.back(); }
  int count() const { return static_cast<int>(lengths.size()); }
};

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
/// x * W + b with b a 1 x out row broadcast over rows.
Var linear(const Var& x, const Var& w, const Var& b);
Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Scaled dot-product self-attention per segment and head. q, k, v are
/// (rows x d) with heads laid out as contiguous column groups.
Var attention(const Var& q, const Var& k, const Var& v, const Segments& seg, int heads);
/// Output row i = sources[index[i].first].row(index[i].second).
Var gather_rows(const std::vector<Var>& sources, const std::vector<std::pair<int, int>>& index);
/// Each row scaled to unit Euclidean norm.
Var normalize_rows(const Var& x);
/// Symmetric cross-entropy over a.b^T / tau with matches on the diagonal,
/// averaged over both directions. 1x1.
Var infonce(const Var& a, const Var& b, double tau);
/// Mean of squared differences over all entries. 1x1.
Var mse(const Var& pred, const Mat& target);

}  // namespace hm::nn
