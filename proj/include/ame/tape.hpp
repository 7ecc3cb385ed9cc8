#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ame/common.hpp"
#include "ame/tensor.hpp"

namespace ame {

// Reverse-mode tape over Mat<T> values. Each op appends a node holding the
// forward value and a closure that scatters the node's gradient into its
// inputs. backward(root) runs the closures in reverse creation order, which
// is a valid topological order because ops only consume existing nodes.
//
// Gradients are only materialized along subgraphs that reach a grad-enabled
// leaf, so large constant inputs stay cheap.
template <class T>
class Tape {
 public:
  int leaf(Mat<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Mat<T>(), requires_grad, nullptr});
    return int(nodes_.size()) - 1;
  }
  int constant(Mat<T> value) { return leaf(std::move(value), false); }

  const Mat<T>& val(int id) const { return nodes_[size_t(id)].val; }
  const Mat<T>& grad(int id) const { return nodes_[size_t(id)].grad; }
  bool requires_grad(int id) const { return nodes_[size_t(id)].rg; }
  size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  int add(int a, int b) {
    check_same(a, b, "add");
    Mat<T> out = val(a);
    const Mat<T>& vb = val(b);
    for (size_t i = 0; i < out.size(); ++i) out.d[i] += vb.d[i];
    return unary_or_binary(std::move(out), a, b, [this](int id, int a2, int b2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
      });
      acc(b2, [&](Mat<T>& gb) {
        for (size_t i = 0; i < g.size(); ++i) gb.d[i] += g.d[i];
      });
    });
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    Mat<T> out = val(a);
    const Mat<T>& vb = val(b);
    for (size_t i = 0; i < out.size(); ++i) out.d[i] -= vb.d[i];
    return unary_or_binary(std::move(out), a, b, [this](int id, int a2, int b2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
      });
      acc(b2, [&](Mat<T>& gb) {
        for (size_t i = 0; i < g.size(); ++i) gb.d[i] -= g.d[i];
      });
    });
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    Mat<T> out = val(a);
    const Mat<T>& vb = val(b);
    for (size_t i = 0; i < out.size(); ++i) out.d[i] *= vb.d[i];
    return unary_or_binary(std::move(out), a, b, [this](int id, int a2, int b2) {
      const Mat<T>& g = grad(id);
      const Mat<T>& va = val(a2);
      const Mat<T>& vb2 = val(b2);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * vb2.d[i];
      });
      acc(b2, [&](Mat<T>& gb) {
        for (size_t i = 0; i < g.size(); ++i) gb.d[i] += g.d[i] * va.d[i];
      });
    });
  }

  int smul(int a, double c) {
    Mat<T> out = val(a);
    for (auto& x : out.d) x = T(x * c);
    return unary(std::move(out), a, [this, c](int id, int a2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += T(g.d[i] * c);
      });
    });
  }

  int addc(int a, double c) {
    Mat<T> out = val(a);
    for (auto& x : out.d) x = T(x + c);
    return unary(std::move(out), a, [this](int id, int a2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
      });
    });
  }

  int log_clamped(int a) {
    Mat<T> out = val(a);
    for (auto& x : out.d) x = std::log(std::max(x, T(1e-30)));
    return unary(std::move(out), a, [this](int id, int a2) {
      const Mat<T>& g = grad(id);
      const Mat<T>& va = val(a2);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i)
          ga.d[i] += g.d[i] / std::max(va.d[i], T(1e-30));
      });
    });
  }

  int abs(int a) {
    Mat<T> out = val(a);
    for (auto& x : out.d) x = std::fabs(x);
    return unary(std::move(out), a, [this](int id, int a2) {
      const Mat<T>& g = grad(id);
      const Mat<T>& va = val(a2);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) {
          const T s = va.d[i] > T(0) ? T(1) : (va.d[i] < T(0) ? T(-1) : T(0));
          ga.d[i] += g.d[i] * s;
        }
      });
    });
  }

  int sqrt_op(int a) {
    Mat<T> out = val(a);
    for (auto& x : out.d) x = std::sqrt(x);
    const int id = unary(std::move(out), a, [this](int id2, int a2) {
      const Mat<T>& g = grad(id2);
      const Mat<T>& y = val(id2);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] / (T(2) * y.d[i]);
      });
    });
    return id;
  }

  int recip(int a) {
    Mat<T> out = val(a);
    for (auto& x : out.d) x = T(1) / x;
    return unary(std::move(out), a, [this](int id, int a2) {
      const Mat<T>& g = grad(id);
      const Mat<T>& y = val(id);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] -= g.d[i] * y.d[i] * y.d[i];
      });
    });
  }

  int gelu(int a) {
    Mat<T> out = val(a);
    for (auto& x : out.d) {
      const double xd = double(x);
      x = T(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865476)));
    }
    return unary(std::move(out), a, [this](int id, int a2) {
      const Mat<T>& g = grad(id);
      const Mat<T>& va = val(a2);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) {
          const double xd = double(va.d[i]);
          const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865476));
          const double pdf = 0.3989422804014327 * std::exp(-0.5 * xd * xd);
          ga.d[i] += g.d[i] * T(cdf + xd * pdf);
        }
      });
    });
  }

  int sigmoid(int a) {
    Mat<T> out = val(a);
    for (auto& x : out.d) x = T(1) / (T(1) + T(std::exp(double(-x))));
    return unary(std::move(out), a, [this](int id, int a2) {
      const Mat<T>& g = grad(id);
      const Mat<T>& y = val(id);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i)
          ga.d[i] += g.d[i] * y.d[i] * (T(1) - y.d[i]);
      });
    });
  }

  // ---- linear algebra ----

  int matmul(int a, int b) {
    const Mat<T>& va = val(a);
    const Mat<T>& vb = val(b);
    if (va.cols != vb.rows) fail(ErrorCode::shape_mismatch, "tape.matmul: inner dim mismatch");
    Mat<T> out(va.rows, vb.cols);
    matmul_acc(va, vb, out);
    return unary_or_binary(std::move(out), a, b, [this](int id, int a2, int b2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) { matmul_nt_acc(g, val(b2), ga); });
      acc(b2, [&](Mat<T>& gb) { matmul_tn_acc(val(a2), g, gb); });
    });
  }

  // a * b^T
  int matmul_nt(int a, int b) {
    const Mat<T>& va = val(a);
    const Mat<T>& vb = val(b);
    if (va.cols != vb.cols) fail(ErrorCode::shape_mismatch, "tape.matmul_nt: dim mismatch");
    Mat<T> out(va.rows, vb.rows);
    matmul_nt_acc(va, vb, out);
    return unary_or_binary(std::move(out), a, b, [this](int id, int a2, int b2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) { matmul_acc(g, val(b2), ga); });
      acc(b2, [&](Mat<T>& gb) { matmul_tn_acc(g, val(a2), gb); });
    });
  }

  int add_rowvec(int a, int v) {
    const Mat<T>& va = val(a);
    const Mat<T>& vv = val(v);
    if (vv.rows != 1 || vv.cols != va.cols)
      fail(ErrorCode::shape_mismatch, "tape.add_rowvec: bias shape mismatch");
    Mat<T> out = va;
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out(r, c) += vv(0, c);
    return unary_or_binary(std::move(out), a, v, [this](int id, int a2, int v2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
      });
      acc(v2, [&](Mat<T>& gv) {
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) gv(0, c) += g(r, c);
      });
    });
  }

  int broadcast_row(int v, int n_rows) {
    const Mat<T>& vv = val(v);
    if (vv.rows != 1) fail(ErrorCode::shape_mismatch, "tape.broadcast_row: need a row vector");
    Mat<T> out(n_rows, vv.cols);
    for (int r = 0; r < n_rows; ++r)
      for (int c = 0; c < vv.cols; ++c) out(r, c) = vv(0, c);
    return unary(std::move(out), v, [this](int id, int v2) {
      const Mat<T>& g = grad(id);
      acc(v2, [&](Mat<T>& gv) {
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) gv(0, c) += g(r, c);
      });
    });
  }

  int scale_rows(int a, int s) {
    const Mat<T>& va = val(a);
    const Mat<T>& vs = val(s);
    if (vs.cols != 1 || vs.rows != va.rows)
      fail(ErrorCode::shape_mismatch, "tape.scale_rows: scale must be [rows x 1]");
    Mat<T> out = va;
    for (int r = 0; r < out.rows; ++r) {
      const T sv = vs(r, 0);
      for (int c = 0; c < out.cols; ++c) out(r, c) *= sv;
    }
    return unary_or_binary(std::move(out), a, s, [this](int id, int a2, int s2) {
      const Mat<T>& g = grad(id);
      const Mat<T>& va2 = val(a2);
      const Mat<T>& vs2 = val(s2);
      acc(a2, [&](Mat<T>& ga) {
        for (int r = 0; r < g.rows; ++r) {
          const T sv = vs2(r, 0);
          for (int c = 0; c < g.cols; ++c) ga(r, c) += g(r, c) * sv;
        }
      });
      acc(s2, [&](Mat<T>& gs) {
        for (int r = 0; r < g.rows; ++r) {
          T dot = T(0);
          for (int c = 0; c < g.cols; ++c) dot += g(r, c) * va2(r, c);
          gs(r, 0) += dot;
        }
      });
    });
  }

  int rowsum(int a) {
    const Mat<T>& va = val(a);
    Mat<T> out(va.rows, 1);
    for (int r = 0; r < va.rows; ++r) {
      T acc0 = T(0);
      for (int c = 0; c < va.cols; ++c) acc0 += va(r, c);
      out(r, 0) = acc0;
    }
    return unary(std::move(out), a, [this](int id, int a2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) {
        for (int r = 0; r < ga.rows; ++r)
          for (int c = 0; c < ga.cols; ++c) ga(r, c) += g(r, 0);
      });
    });
  }

  int sum(int a) {
    const Mat<T>& va = val(a);
    Mat<T> out(1, 1);
    T acc0 = T(0);
    for (const T x : va.d) acc0 += x;
    out(0, 0) = acc0;
    return unary(std::move(out), a, [this](int id, int a2) {
      const T g = grad(id)(0, 0);
      acc(a2, [&](Mat<T>& ga) {
        for (auto& x : ga.d) x += g;
      });
    });
  }

  int row_softmax(int a) {
    Mat<T> out = val(a);
    for (int r = 0; r < out.rows; ++r) {
      T mx = out(r, 0);
      for (int c = 1; c < out.cols; ++c) mx = std::max(mx, out(r, c));
      T z = T(0);
      for (int c = 0; c < out.cols; ++c) {
        out(r, c) = T(std::exp(double(out(r, c) - mx)));
        z += out(r, c);
      }
      for (int c = 0; c < out.cols; ++c) out(r, c) /= z;
    }
    return unary(std::move(out), a, [this](int id, int a2) {
      const Mat<T>& g = grad(id);
      const Mat<T>& p = val(id);
      acc(a2, [&](Mat<T>& ga) {
        for (int r = 0; r < g.rows; ++r) {
          T dot = T(0);
          for (int c = 0; c < g.cols; ++c) dot += g(r, c) * p(r, c);
          for (int c = 0; c < g.cols; ++c) ga(r, c) += p(r, c) * (g(r, c) - dot);
        }
      });
    });
  }

  int layernorm(int a, int gamma, int beta, double eps = 1e-5) {
    const Mat<T>& va = val(a);
    const Mat<T>& vg = val(gamma);
    const Mat<T>& vb = val(beta);
    if (vg.rows != 1 || vg.cols != va.cols || vb.rows != 1 || vb.cols != va.cols)
      fail(ErrorCode::shape_mismatch, "tape.layernorm: affine shape mismatch");
    Mat<T> out(va.rows, va.cols);
    Mat<T> yhat(va.rows, va.cols);   // normalized pre-affine values
    Mat<T> inv_sd(va.rows, 1);
    const T n = T(va.cols);
    for (int r = 0; r < va.rows; ++r) {
      T mu = T(0);
      for (int c = 0; c < va.cols; ++c) mu += va(r, c);
      mu /= n;
      T var = T(0);
      for (int c = 0; c < va.cols; ++c) {
        const T d = va(r, c) - mu;
        var += d * d;
      }
      var /= n;
      const T isd = T(1) / T(std::sqrt(double(var) + eps));
      inv_sd(r, 0) = isd;
      for (int c = 0; c < va.cols; ++c) {
        yhat(r, c) = (va(r, c) - mu) * isd;
        out(r, c) = yhat(r, c) * vg(0, c) + vb(0, c);
      }
    }
    const int id = int(nodes_.size());
    nodes_.push_back(Node{std::move(out), Mat<T>(),
                          requires_grad(a) || requires_grad(gamma) || requires_grad(beta),
                          nullptr});
    nodes_[size_t(id)].back = [this, id, a, gamma, beta, yhat = std::move(yhat),
                               inv_sd = std::move(inv_sd)]() {
      const Mat<T>& g = grad(id);
      const Mat<T>& vg2 = val(gamma);
      acc(gamma, [&](Mat<T>& gg) {
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) gg(0, c) += g(r, c) * yhat(r, c);
      });
      acc(beta, [&](Mat<T>& gb) {
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) gb(0, c) += g(r, c);
      });
      acc(a, [&](Mat<T>& ga) {
        const T n2 = T(g.cols);
        for (int r = 0; r < g.rows; ++r) {
          T m1 = T(0), m2 = T(0);
          for (int c = 0; c < g.cols; ++c) {
            const T gy = g(r, c) * vg2(0, c);
            m1 += gy;
            m2 += gy * yhat(r, c);
          }
          m1 /= n2;
          m2 /= n2;
          for (int c = 0; c < g.cols; ++c) {
            const T gy = g(r, c) * vg2(0, c);
            ga(r, c) += (gy - m1 - yhat(r, c) * m2) * inv_sd(r, 0);
          }
        }
      });
    };
    return id;
  }

  // ---- indexing ----

  int gather_rows(int a, std::vector<int> idx) {
    const Mat<T>& va = val(a);
    Mat<T> out(int(idx.size()), va.cols);
    for (size_t i = 0; i < idx.size(); ++i)
      for (int c = 0; c < va.cols; ++c) out(int(i), c) = va(idx[i], c);
    return unary(std::move(out), a, [this, idx = std::move(idx)](int id, int a2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < idx.size(); ++i)
          for (int c = 0; c < g.cols; ++c) ga(idx[i], c) += g(int(i), c);
      });
    });
  }

  // out has n_rows rows; row idx[i] accumulates a's row i.
  int scatter_rows(int a, std::vector<int> idx, int n_rows) {
    const Mat<T>& va = val(a);
    if (int(idx.size()) != va.rows)
      fail(ErrorCode::shape_mismatch, "tape.scatter_rows: index count mismatch");
    Mat<T> out(n_rows, va.cols);
    for (size_t i = 0; i < idx.size(); ++i)
      for (int c = 0; c < va.cols; ++c) out(idx[i], c) += va(int(i), c);
    return unary(std::move(out), a, [this, idx = std::move(idx)](int id, int a2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) {
        for (size_t i = 0; i < idx.size(); ++i)
          for (int c = 0; c < ga.cols; ++c) ga(int(i), c) += g(idx[i], c);
      });
    });
  }

  int slice_cols(int a, int c0, int c1) {
    const Mat<T>& va = val(a);
    Mat<T> out(va.rows, c1 - c0);
    for (int r = 0; r < va.rows; ++r)
      for (int c = c0; c < c1; ++c) out(r, c - c0) = va(r, c);
    return unary(std::move(out), a, [this, c0](int id, int a2) {
      const Mat<T>& g = grad(id);
      acc(a2, [&](Mat<T>& ga) {
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) ga(r, c0 + c) += g(r, c);
      });
    });
  }

  int concat_cols(const std::vector<int>& parts) {
    int cols = 0;
    const int rows = val(parts[0]).rows;
    bool rg = false;
    for (const int p : parts) {
      cols += val(p).cols;
      rg = rg || requires_grad(p);
    }
    Mat<T> out(rows, cols);
    int off = 0;
    for (const int p : parts) {
      const Mat<T>& vp = val(p);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < vp.cols; ++c) out(r, off + c) = vp(r, c);
      off += vp.cols;
    }
    const int id = int(nodes_.size());
    nodes_.push_back(Node{std::move(out), Mat<T>(), rg, nullptr});
    nodes_[size_t(id)].back = [this, id, parts]() {
      const Mat<T>& g = grad(id);
      int off2 = 0;
      for (const int p : parts) {
        const int pc = val(p).cols;
        acc(p, [&](Mat<T>& gp) {
          for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < pc; ++c) gp(r, c) += g(r, off2 + c);
        });
        off2 += pc;
      }
    };
    return id;
  }

  // out(i, 0) = a(rows[i], cols[i])
  int take_entries(int a, std::vector<int> rows, std::vector<int> cols) {
    const Mat<T>& va = val(a);
    Mat<T> out(int(rows.size()), 1);
    for (size_t i = 0; i < rows.size(); ++i) out(int(i), 0) = va(rows[i], cols[i]);
    return unary(std::move(out), a,
                 [this, rows = std::move(rows), cols = std::move(cols)](int id, int a2) {
                   const Mat<T>& g = grad(id);
                   acc(a2, [&](Mat<T>& ga) {
                     for (size_t i = 0; i < rows.size(); ++i)
                       ga(rows[i], cols[i]) += g(int(i), 0);
                   });
                 });
  }

  // ---- backward ----

  void backward(int root) {
    Node& r = nodes_[size_t(root)];
    if (r.val.rows != 1 || r.val.cols != 1)
      fail(ErrorCode::invalid_argument, "tape.backward: root must be scalar");
    if (!r.rg) fail(ErrorCode::invalid_argument, "tape.backward: root has no grad path");
    ensure_grad(root);
    nodes_[size_t(root)].grad(0, 0) = T(1);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (n.rg && n.back && n.grad.size() > 0) n.back();
    }
  }

 private:
  struct Node {
    Mat<T> val;
    Mat<T> grad;
    bool rg = false;
    std::function<void()> back;
  };

  void check_same(int a, int b, const char* op) {
    if (!val(a).same_shape(val(b)))
      fail(ErrorCode::shape_mismatch, std::string("tape.") + op + ": shape mismatch");
  }

  void ensure_grad(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.size() == 0) n.grad = Mat<T>(n.val.rows, n.val.cols);
  }

  // Run fn on the grad buffer of id if it participates in the grad graph.
  template <class Fn>
  void acc(int id, Fn&& fn) {
    if (!nodes_[size_t(id)].rg) return;
    ensure_grad(id);
    fn(nodes_[size_t(id)].grad);
  }

  template <class Back>
  int unary(Mat<T> out, int a, Back&& back) {
    const int id = int(nodes_.size());
    nodes_.push_back(Node{std::move(out), Mat<T>(), requires_grad(a), nullptr});
    if (nodes_[size_t(id)].rg)
      nodes_[size_t(id)].back = [this, id, a, back = std::forward<Back>(back)]() {
        back(id, a);
      };
    return id;
  }

  template <class Back>
  int unary_or_binary(Mat<T> out, int a, int b, Back&& back) {
    const int id = int(nodes_.size());
    nodes_.push_back(
        Node{std::move(out), Mat<T>(), requires_grad(a) || requires_grad(b), nullptr});
    if (nodes_[size_t(id)].rg)
      nodes_[size_t(id)].back = [this, id, a, b, back = std::forward<Back>(back)]() {
        back(id, a, b);
      };
    return id;
  }

  std::vector<Node> nodes_;
};

}  // namespace ame
