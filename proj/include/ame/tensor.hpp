#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace ame {

// Dense row-major matrix. Vectors are [n x 1] or [1 x n] as noted at use
// sites. T is float for training/inference and double for gradient checks.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> d;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), d(size_t(r) * size_t(c), T(0)) {}

  static Mat filled(int r, int c, T v) {
    Mat m(r, c);
    for (auto& x : m.d) x = v;
    return m;
  }

  T& operator()(int r, int c) { return d[size_t(r) * size_t(cols) + size_t(c)]; }
  T operator()(int r, int c) const { return d[size_t(r) * size_t(cols) + size_t(c)]; }

  size_t size() const { return d.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// c += a * b
template <class T>
void matmul_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const T aik = a(i, k);
      if (aik == T(0)) continue;
      const T* brow = &b.d[size_t(k) * size_t(b.cols)];
      T* crow = &c.d[size_t(i) * size_t(c.cols)];
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c += a * b^T
template <class T>
void matmul_nt_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const T* arow = &a.d[size_t(i) * size_t(a.cols)];
    for (int j = 0; j < b.rows; ++j) {
      const T* brow = &b.d[size_t(j) * size_t(b.cols)];
      T acc = T(0);
      for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      c(i, j) += acc;
    }
  }
}

// c += a^T * b
template <class T>
void matmul_tn_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  for (int k = 0; k < a.rows; ++k) {
    const T* arow = &a.d[size_t(k) * size_t(a.cols)];
    const T* brow = &b.d[size_t(k) * size_t(b.cols)];
    for (int i = 0; i < a.cols; ++i) {
      const T aki = arow[i];
      if (aki == T(0)) continue;
      T* crow = &c.d[size_t(i) * size_t(c.cols)];
      for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
}

}  // namespace ame
