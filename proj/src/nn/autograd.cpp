#include "handmotion/nn/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "handmotion/error.hpp"

namespace hm::nn {

void Node::accumulate(const Mat& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var constant(Mat value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Mat value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

namespace {

Var make(Mat value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(fn);
  }
  return n;
}

void check_shape(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::FeatureWidthMismatch, std::string(what) + ": operand shapes differ");
}

}  // namespace

void backward(const Var& loss) {
  if (loss->value.size() != 1) fail(ErrorCode::ConfigError, "backward needs a scalar loss");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS: graphs can be deep.
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  // Intermediate gradients are not needed after the pass.
  for (Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
}

Segments Segments::from_lengths(const std::vector<int>& lengths) {
  Segments s;
  int off = 0;
  for (int len : lengths) {
    s.offsets.push_back(off);
    s.lengths.push_back(len);
    off += len;
  }
  return s;
}

Var add(const Var& a, const Var& b) {
  check_shape(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "add");
  return make(a->value + b->value, {a, b}, [](Node& n) {
    for (const Var& p : n.parents) {
      if (p->requires_grad) p->accumulate(n.grad);
    }
  });
}

Var scale(const Var& a, double s) {
  return make(a->value * s, {a}, [s](Node& n) { n.parents[0]->accumulate_expr(n.grad * s); });
}

Var matmul(const Var& a, const Var& b) {
  check_shape(a->value.cols() == b->value.rows(), "matmul");
  return make(a->value * b->value, {a, b}, [](Node& n) {
    const Var& a = n.parents[0];
    const Var& b = n.parents[1];
    if (a->requires_grad) a->accumulate_expr(n.grad * b->value.transpose());
    if (b->requires_grad) b->accumulate_expr(a->value.transpose() * n.grad);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  check_shape(x->value.cols() == w->value.rows() && b->value.rows() == 1 && b->value.cols() == w->value.cols(),
              "linear");
  Mat out = x->value * w->value;
  out.rowwise() += b->value.row(0);
  return make(std::move(out), {x, w, b}, [](Node& n) {
    const Var& x = n.parents[0];
    const Var& w = n.parents[1];
    const Var& b = n.parents[2];
    if (x->requires_grad) x->accumulate_expr(n.grad * w->value.transpose());
    if (w->requires_grad) w->accumulate_expr(x->value.transpose() * n.grad);
    if (b->requires_grad) b->accumulate_expr(n.grad.colwise().sum());
  });
}

Var gelu(const Var& x) {
  const Mat& v = x->value;
  Mat out = v.unaryExpr([](double a) { return 0.5 * a * (1.0 + std::erf(a * M_SQRT1_2)); });
  return make(std::move(out), {x}, [](Node& n) {
    const Mat& v = n.parents[0]->value;
    const Mat d = v.unaryExpr([](double a) {
      const double cdf = 0.5 * (1.0 + std::erf(a * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
      return cdf + a * pdf;
    });
    n.parents[0]->accumulate_expr(n.grad.cwiseProduct(d));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index rows = x->value.rows();
  const Eigen::Index cols = x->value.cols();
  check_shape(gamma->value.cols() == cols && beta->value.cols() == cols, "layer_norm");
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x->value.row(r).mean();
    const double var = (x->value.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x->value.row(r).array() - mean) * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gamma->value.row(0).array()).rowwise() + beta->value.row(0).array();
  return make(std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
    const Var& x = n.parents[0];
    const Var& gamma = n.parents[1];
    const Var& beta = n.parents[2];
    if (gamma->requires_grad) gamma->accumulate_expr(n.grad.cwiseProduct(xhat).colwise().sum());
    if (beta->requires_grad) beta->accumulate_expr(n.grad.colwise().sum());
    if (x->requires_grad) {
      const Mat g = n.grad.array().rowwise() * gamma->value.row(0).array();
      const double c = static_cast<double>(g.cols());
      Mat dx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double mean_g = g.row(r).sum() / c;
        const double mean_gx = g.row(r).dot(xhat.row(r)) / c;
        dx.row(r) = inv_std(r) * (g.row(r).array() - mean_g - xhat.row(r).array() * mean_gx);
      }
      x->accumulate(dx);
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, const Segments& seg, int heads) {
  const Eigen::Index rows = q->value.rows();
  const Eigen::Index d = q->value.cols();
  check_shape(k->value.rows() == rows && v->value.rows() == rows && k->value.cols() == d && v->value.cols() == d,
              "attention");
  if (heads < 1 || d % heads != 0) fail(ErrorCode::ConfigError, "model width must be divisible by the head count");
  if (seg.total_rows() != rows) fail(ErrorCode::FeatureWidthMismatch, "attention: segments do not cover the rows");
  const int dh = static_cast<int>(d / heads);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat out = Mat::Zero(rows, d);
  std::vector<Mat> probs;
  probs.reserve(static_cast<std::size_t>(seg.count()) * heads);
  for (int s = 0; s < seg.count(); ++s) {
    const int o = seg.offsets[s];
    const int len = seg.lengths[s];
    for (int h = 0; h < heads; ++h) {
      const auto qs = q->value.block(o, h * dh, len, dh);
      const auto ks = k->value.block(o, h * dh, len, dh);
      const auto vs = v->value.block(o, h * dh, len, dh);
      Mat scores = (qs * ks.transpose()) * inv;
      for (int r = 0; r < len; ++r) {
        const double m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      out.block(o, h * dh, len, dh) = scores * vs;
      probs.push_back(std::move(scores));
    }
  }
  return make(std::move(out), {q, k, v}, [seg, heads, dh, inv, probs = std::move(probs)](Node& n) {
    const Var& q = n.parents[0];
    const Var& k = n.parents[1];
    const Var& v = n.parents[2];
    Mat dq = Mat::Zero(q->value.rows(), q->value.cols());
    Mat dk = dq;
    Mat dv = dq;
    std::size_t idx = 0;
    for (int s = 0; s < seg.count(); ++s) {
      const int o = seg.offsets[s];
      const int len = seg.lengths[s];
      for (int h = 0; h < heads; ++h, ++idx) {
        const Mat& p = probs[idx];
        const auto go = n.grad.block(o, h * dh, len, dh);
        const auto qs = q->value.block(o, h * dh, len, dh);
        const auto ks = k->value.block(o, h * dh, len, dh);
        const auto vs = v->value.block(o, h * dh, len, dh);
        dv.block(o, h * dh, len, dh) = p.transpose() * go;
        const Mat dp = go * vs.transpose();
        const Eigen::VectorXd rowdot = dp.cwiseProduct(p).rowwise().sum();
        const Mat ds = (p.array() * (dp.colwise() - rowdot).array()).matrix() * inv;
        dq.block(o, h * dh, len, dh) = ds * ks;
        dk.block(o, h * dh, len, dh) = ds.transpose() * qs;
      }
    }
    if (q->requires_grad) q->accumulate(dq);
    if (k->requires_grad) k->accumulate(dk);
    if (v->requires_grad) v->accumulate(dv);
  });
}

Var gather_rows(const std::vector<Var>& sources, const std::vector<std::pair<int, int>>& index) {
  if (sources.empty()) fail(ErrorCode::ConfigError, "gather_rows needs a source");
  const Eigen::Index cols = sources.front()->value.cols();
  for (const Var& s : sources) check_shape(s->value.cols() == cols, "gather_rows");
  Mat out(static_cast<Eigen::Index>(index.size()), cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto [src, row] = index[i];
    if (src < 0 || src >= static_cast<int>(sources.size()) || row < 0 || row >= sources[src]->value.rows()) {
      fail(ErrorCode::IndexOutOfRange, "gather_rows index out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = sources[src]->value.row(row);
  }
  return make(std::move(out), sources, [index](Node& n) {
    for (std::size_t i = 0; i < index.size(); ++i) {
      Node& src = *n.parents[index[i].first];
      if (!src.requires_grad) continue;
      if (src.grad.size() == 0) src.grad = Mat::Zero(src.value.rows(), src.value.cols());
      src.grad.row(index[i].second) += n.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var normalize_rows(const Var& x) {
  const Eigen::VectorXd norms = x->value.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > 0.0)) fail(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  }
  Mat y = x->value.array().colwise() / norms.array();
  return make(y, {x}, [y, norms](Node& n) {
    const Eigen::VectorXd dot = n.grad.cwiseProduct(y).rowwise().sum();
    Mat dx = n.grad - (y.array().colwise() * dot.array()).matrix();
    dx.array().colwise() /= norms.array();
    n.parents[0]->accumulate(dx);
  });
}

Var infonce(const Var& a, const Var& b, double tau) {
  const Eigen::Index batch = a->value.rows();
  check_shape(b->value.rows() == batch && a->value.cols() == b->value.cols(), "infonce");
  if (batch < 2) fail(ErrorCode::ConfigError, "contrastive loss needs a batch of at least 2");
  if (!(tau > 0.0)) fail(ErrorCode::ConfigError, "temperature must be positive");
  const Mat logits = a->value * b->value.transpose() / tau;
  auto softmax_rows = [](const Mat& l) {
    Mat p(l.rows(), l.cols());
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
      const double m = l.row(r).maxCoeff();
      p.row(r) = (l.row(r).array() - m).exp();
      p.row(r) /= p.row(r).sum();
    }
    return p;
  };
  auto lse_rows = [](const Mat& l) {
    Eigen::VectorXd out(l.rows());
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
      const double m = l.row(r).maxCoeff();
      out(r) = m + std::log((l.row(r).array() - m).exp().sum());
    }
    return out;
  };
  const double diag = logits.diagonal().sum();
  const double loss_ab = (lse_rows(logits).sum() - diag) / static_cast<double>(batch);
  const double loss_ba = (lse_rows(logits.transpose()).sum() - diag) / static_cast<double>(batch);
  Mat value(1, 1);
  value(0, 0) = 0.5 * (loss_ab + loss_ba);
  // dL/dlogits = (softmax_rows - I + (softmax_cols - I)) / (2B)
  Mat dlogits = softmax_rows(logits) + softmax_rows(logits.transpose()).transpose();
  dlogits.diagonal().array() -= 2.0;
  dlogits /= 2.0 * static_cast<double>(batch);
  return make(std::move(value), {a, b}, [dlogits = std::move(dlogits), tau](Node& n) {
    const double g = n.grad(0, 0) / tau;
    const Var& a = n.parents[0];
    const Var& b = n.parents[1];
    if (a->requires_grad) a->accumulate_expr(g * dlogits * b->value);
    if (b->requires_grad) b->accumulate_expr(g * dlogits.transpose() * a->value);
  });
}

Var mse(const Var& pred, const Mat& target) {
  check_shape(pred->value.rows() == target.rows() && pred->value.cols() == target.cols(), "mse");
  const double count = static_cast<double>(target.size());
  if (count == 0) fail(ErrorCode::ConfigError, "mse over an empty batch");
  Mat diff = pred->value - target;
  Mat value(1, 1);
  value(0, 0) = diff.squaredNorm() / count;
  return make(std::move(value), {pred}, [diff = std::move(diff), count](Node& n) {
    n.parents[0]->accumulate_expr(diff * (2.0 * n.grad(0, 0) / count));
  });
}

}  // namespace hm::nn
