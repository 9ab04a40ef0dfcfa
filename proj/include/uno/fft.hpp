#pragma once

// Mixed-radix FFT with a Bluestein fallback for large prime factors, plus
// multi-dimensional real transforms over the trailing axes of a tensor.
//
// Conventions: forward transforms are unnormalized, inverse transforms divide
// by the number of transformed points.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "uno/tensor.hpp"

namespace uno::fft {

namespace detail {

inline std::vector<std::size_t> factorize(std::size_t n) {
  std::vector<std::size_t> f;
  for (std::size_t p : {4u, 2u, 3u, 5u}) {
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  }
  for (std::size_t p = 7; p * p <= n; p += 2) {
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  }
  if (n > 1) f.push_back(n);
  return f;
}

// Largest radix handled by the direct O(p^2) butterfly.
inline constexpr std::size_t kMaxDirectRadix = 31;

}  // namespace detail

/// Precomputed 1-D complex transform of a fixed length.
class Plan {
 public:
  explicit Plan(std::size_t n) : n_(n), factors_(detail::factorize(n)) {
    bool needs_bluestein = false;
    for (auto p : factors_) needs_bluestein |= p > detail::kMaxDirectRadix;
    if (needs_bluestein) {
      init_bluestein();
      return;
    }
    // Level l works on length len = n / (f_0 ... f_{l-1}) with radix p = f_l and
    // stores w_len^(q k) for 1 <= q < p, 0 <= k < len / p.
    std::size_t len = n;
    for (std::size_t p : factors_) {
      const std::size_t m = len / p;
      std::vector<cdouble> t((p - 1) * m);
      for (std::size_t q = 1; q < p; ++q)
        for (std::size_t k = 0; k < m; ++k)
          t[(q - 1) * m + k] = std::polar(1.0, -2.0 * std::numbers::pi * double(q * k) / double(len));
      level_twiddles_.push_back(std::move(t));
      if (p > 4 && radix_roots_.find(p) == radix_roots_.end()) {
        std::vector<cdouble> r(p);
        for (std::size_t j = 0; j < p; ++j) r[j] = std::polar(1.0, -2.0 * std::numbers::pi * double(j) / double(p));
        radix_roots_.emplace(p, std::move(r));
      }
      len = m;
    }
    scratch_.resize(n);
  }

  std::size_t size() const { return n_; }

  /// In-place unnormalized transform; `inverse` flips the exponent sign.
  void execute(cdouble* data, bool inverse) {
    if (n_ == 1) return;
    if (bluestein_) {
      run_bluestein(data, inverse);
      return;
    }
    recurse(data, 1, scratch_.data(), n_, 0, inverse);
    std::copy(scratch_.begin(), scratch_.end(), data);
  }

 private:
  static cdouble mul(cdouble a, cdouble b) {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
  }
  static cdouble mul_conj(cdouble a, cdouble b) {
    return {a.real() * b.real() + a.imag() * b.imag(), a.imag() * b.real() - a.real() * b.imag()};
  }

  // In-place DFT of length p on buf.
  void butterfly(cdouble* buf, std::size_t p, bool inverse) const {
    if (p == 2) {
      const cdouble a = buf[0], b = buf[1];
      buf[0] = a + b;
      buf[1] = a - b;
    } else if (p == 3) {
      constexpr double s = 0.86602540378443864676;
      const cdouble t1 = buf[1] + buf[2], t2 = buf[0] - 0.5 * t1, d = buf[1] - buf[2];
      // -i s d forward, +i s d inverse.
      const cdouble jd = inverse ? cdouble(-s * d.imag(), s * d.real()) : cdouble(s * d.imag(), -s * d.real());
      buf[0] += t1;
      buf[1] = t2 + jd;
      buf[2] = t2 - jd;
    } else if (p == 4) {
      const cdouble a = buf[0] + buf[2], b = buf[0] - buf[2];
      const cdouble c = buf[1] + buf[3], d = buf[1] - buf[3];
      const cdouble jd = inverse ? cdouble(-d.imag(), d.real()) : cdouble(d.imag(), -d.real());
      buf[0] = a + c;
      buf[1] = b + jd;
      buf[2] = a - c;
      buf[3] = b - jd;
    } else {
      const std::vector<cdouble>& root = radix_roots_.at(p);
      cdouble res[detail::kMaxDirectRadix];
      for (std::size_t r = 0; r < p; ++r) {
        cdouble s = buf[0];
        std::size_t idx = 0;
        for (std::size_t q = 1; q < p; ++q) {
          idx += r;
          if (idx >= p) idx -= p;
          s += inverse ? mul_conj(buf[q], root[idx]) : mul(buf[q], root[idx]);
        }
        res[r] = s;
      }
      std::copy_n(res, p, buf);
    }
  }

  // Decimation in time: out[0..n) receives the DFT of in[0], in[stride], ...
  void recurse(const cdouble* in, std::size_t stride, cdouble* out, std::size_t n, std::size_t level,
               bool inverse) {
    const std::size_t p = factors_[level];
    const std::size_t m = n / p;
    cdouble buf[detail::kMaxDirectRadix];
    if (m == 1) {
      for (std::size_t q = 0; q < p; ++q) buf[q] = in[q * stride];
      butterfly(buf, p, inverse);
      std::copy_n(buf, p, out);
      return;
    }
    for (std::size_t q = 0; q < p; ++q) recurse(in + q * stride, stride * p, out + q * m, m, level + 1, inverse);

    const cdouble* tw = level_twiddles_[level].data();
    for (std::size_t k = 0; k < m; ++k) {
      buf[0] = out[k];
      for (std::size_t q = 1; q < p; ++q) {
        const cdouble w = tw[(q - 1) * m + k];
        buf[q] = inverse ? mul_conj(out[q * m + k], w) : mul(out[q * m + k], w);
      }
      butterfly(buf, p, inverse);
      for (std::size_t r = 0; r < p; ++r) out[k + r * m] = buf[r];
    }
  }

  void init_bluestein() {
    std::size_t m = 1;
    while (m < 2 * n_ - 1) m <<= 1;
    bluestein_ = std::make_unique<Plan>(m);
    chirp_.resize(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      // j^2 mod 2n keeps the angle argument small.
      const std::size_t jj = (j * j) % (2 * n_);
      chirp_[j] = std::polar(1.0, -std::numbers::pi * double(jj) / double(n_));
    }
    kernel_fwd_.assign(m, cdouble{});
    kernel_inv_.assign(m, cdouble{});
    for (std::size_t j = 0; j < n_; ++j) {
      kernel_fwd_[j] = std::conj(chirp_[j]);
      kernel_inv_[j] = chirp_[j];
      if (j) {
        kernel_fwd_[m - j] = std::conj(chirp_[j]);
        kernel_inv_[m - j] = chirp_[j];
      }
    }
    bluestein_->execute(kernel_fwd_.data(), false);
    bluestein_->execute(kernel_inv_.data(), false);
    work_.resize(m);
  }

  void run_bluestein(cdouble* data, bool inverse) {
    const std::size_t m = bluestein_->size();
    std::fill(work_.begin(), work_.end(), cdouble{});
    for (std::size_t j = 0; j < n_; ++j) work_[j] = inverse ? mul_conj(data[j], chirp_[j]) : mul(data[j], chirp_[j]);
    bluestein_->execute(work_.data(), false);
    const auto& kernel = inverse ? kernel_inv_ : kernel_fwd_;
    for (std::size_t j = 0; j < m; ++j) work_[j] = mul(work_[j], kernel[j]);
    bluestein_->execute(work_.data(), true);
    const double scale = 1.0 / double(m);
    for (std::size_t j = 0; j < n_; ++j)
      data[j] = scale * (inverse ? mul_conj(work_[j], chirp_[j]) : mul(work_[j], chirp_[j]));
  }

  std::size_t n_;
  std::vector<std::size_t> factors_;
  std::vector<std::vector<cdouble>> level_twiddles_;
  std::unordered_map<std::size_t, std::vector<cdouble>> radix_roots_;
  std::vector<cdouble> scratch_;
  std::unique_ptr<Plan> bluestein_;
  std::vector<cdouble> chirp_, kernel_fwd_, kernel_inv_, work_;
};

/// Per-thread plan cache; plans hold scratch space so they are not shared.
inline Plan& plan_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<Plan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<Plan>(n);
  return *slot;
}

/// Unnormalized in-place transform of a contiguous line.
inline void transform(std::span<cdouble> line, bool inverse) {
  plan_for(line.size()).execute(line.data(), inverse);
}

/// In-place unnormalized transform along `axis` of a row-major complex array.
inline void transform_axis(std::span<cdouble> data, const Shape& shape,
                           std::size_t axis, bool inverse) {
  const std::size_t n = shape.at(axis);
  if (n == 1) return;
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::size_t outer = data.size() / (n * inner);
  Plan& plan = plan_for(n);
  // The transform of a zero line is zero; zero-padded spectra are mostly such lines.
  auto zero = [n](const cdouble* line) {
    return std::all_of(line, line + n, [](cdouble v) { return v == cdouble{}; });
  };
  if (inner == 1) {
    for (std::size_t o = 0; o < outer; ++o)
      if (!zero(data.data() + o * n)) plan.execute(data.data() + o * n, inverse);
    return;
  }
  // Columns are gathered in blocks so each row read is contiguous.
  constexpr std::size_t kBlock = 8;
  std::vector<cdouble> lines(kBlock * n);
  for (std::size_t o = 0; o < outer; ++o) {
    cdouble* base = data.data() + o * n * inner;
    for (std::size_t i0 = 0; i0 < inner; i0 += kBlock) {
      const std::size_t w = std::min(kBlock, inner - i0);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t b = 0; b < w; ++b) lines[b * n + j] = base[j * inner + i0 + b];
      for (std::size_t b = 0; b < w; ++b)
        if (!zero(lines.data() + b * n)) plan.execute(lines.data() + b * n, inverse);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t b = 0; b < w; ++b) base[j * inner + i0 + b] = lines[b * n + j];
    }
  }
}

/// Number of points in the trailing `naxes` axes.
inline std::size_t transformed_points(const Shape& shape, std::size_t naxes) {
  std::size_t n = 1;
  for (std::size_t a = shape.size() - naxes; a < shape.size(); ++a) n *= shape[a];
  return n;
}

/// Half-spectrum shape: last axis n -> n/2 + 1.
inline Shape half_spectrum_shape(Shape shape) {
  shape.back() = shape.back() / 2 + 1;
  return shape;
}

/// Complex full-spectrum transform over trailing axes (unnormalized both ways).
inline void transform_trailing(ComplexTensor& x, std::size_t naxes, bool inverse) {
  for (std::size_t a = x.rank() - naxes; a < x.rank(); ++a)
    transform_axis(x.data(), x.shape(), a, inverse);
}

/// Real line transforms; even lengths run a half-length complex transform.
class RealPlan {
 public:
  explicit RealPlan(std::size_t n) : n_(n), half_(n % 2 == 0 && n >= 4) {
    line_.resize(half_ ? n / 2 : n);
    if (half_) {
      twiddle_.resize(n / 2 + 1);
      for (std::size_t k = 0; k <= n / 2; ++k)
        twiddle_[k] = std::polar(1.0, -2.0 * std::numbers::pi * double(k) / double(n));
    }
  }

  /// out[0..n/2] = unnormalized DFT of x[0..n).
  void forward(const double* x, cdouble* out) {
    const std::size_t n = n_;
    if (!half_) {
      for (std::size_t j = 0; j < n; ++j) line_[j] = x[j];
      plan_for(n).execute(line_.data(), false);
      std::copy_n(line_.begin(), n / 2 + 1, out);
      return;
    }
    const std::size_t m = n / 2;
    for (std::size_t j = 0; j < m; ++j) line_[j] = cdouble(x[2 * j], x[2 * j + 1]);
    plan_for(m).execute(line_.data(), false);
    for (std::size_t k = 0; k <= m; ++k) {
      const cdouble zk = line_[k == m ? 0 : k], zc = std::conj(line_[k == 0 ? 0 : m - k]);
      const cdouble e = 0.5 * (zk + zc), d = 0.5 * (zk - zc);
      const cdouble o(d.imag(), -d.real());  // d / i
      const cdouble w = twiddle_[k];
      out[k] = e + cdouble(w.real() * o.real() - w.imag() * o.imag(), w.real() * o.imag() + w.imag() * o.real());
    }
  }

  /// x[0..n) = n times the real inverse DFT of the Hermitian extension of
  /// in[0..n/2]; imaginary parts of self-conjugate bins are ignored.
  void inverse(const cdouble* in, double* x) {
    const std::size_t n = n_;
    if (!half_) {
      const std::size_t h = n / 2 + 1;
      for (std::size_t k = 0; k < h; ++k) line_[k] = in[k];
      for (std::size_t k = h; k < n; ++k) line_[k] = std::conj(in[n - k]);
      plan_for(n).execute(line_.data(), true);
      for (std::size_t j = 0; j < n; ++j) x[j] = line_[j].real();
      return;
    }
    const std::size_t m = n / 2;
    auto bin = [&](std::size_t k) { return (k == 0 || k == m) ? cdouble(in[k].real(), 0.0) : in[k]; };
    for (std::size_t k = 0; k < m; ++k) {
      const cdouble xk = bin(k), xc = std::conj(bin(m - k));
      const cdouble e = 0.5 * (xk + xc), d = 0.5 * (xk - xc);
      const cdouble w = twiddle_[k];
      // o = d / w = d conj(w); z = e + i o.
      const cdouble o(d.real() * w.real() + d.imag() * w.imag(), d.imag() * w.real() - d.real() * w.imag());
      line_[k] = cdouble(e.real() - o.imag(), e.imag() + o.real());
    }
    plan_for(m).execute(line_.data(), true);
    for (std::size_t j = 0; j < m; ++j) {
      x[2 * j] = 2.0 * line_[j].real();
      x[2 * j + 1] = 2.0 * line_[j].imag();
    }
  }

 private:
  std::size_t n_;
  bool half_;
  std::vector<cdouble> twiddle_, line_;
};

inline RealPlan& real_plan_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<RealPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealPlan>(n);
  return *slot;
}

/// Real-to-complex transform over the trailing `naxes` axes; half spectrum in
/// the last axis.
inline ComplexTensor rfftn(const Tensor& x, std::size_t naxes) {
  if (naxes == 0 || naxes > x.rank()) throw ShapeError("rfftn: bad axis count");
  const std::size_t n = x.shape().back();
  const std::size_t h = n / 2 + 1;
  ComplexTensor out(half_spectrum_shape(x.shape()));
  const std::size_t lines = x.numel() / n;
  RealPlan& plan = real_plan_for(n);
  for (std::size_t l = 0; l < lines; ++l) plan.forward(x.data().data() + l * n, out.data().data() + l * h);
  for (std::size_t a = x.rank() - naxes; a + 1 < x.rank(); ++a)
    transform_axis(out.data(), out.shape(), a, false);
  return out;
}

/// Complex-to-real inverse of rfftn onto a grid whose last extent is
/// `last_extent`; divides by the number of transformed points.
inline Tensor irfftn(const ComplexTensor& spec, std::size_t naxes, std::size_t last_extent) {
  if (naxes == 0 || naxes > spec.rank()) throw ShapeError("irfftn: bad axis count");
  const std::size_t h = spec.shape().back();
  if (h != last_extent / 2 + 1)
    throw ShapeError("irfftn: half spectrum extent " + std::to_string(h) +
                     " inconsistent with output extent " + std::to_string(last_extent));
  ComplexTensor work = spec;
  for (std::size_t a = spec.rank() - naxes; a + 1 < spec.rank(); ++a)
    transform_axis(work.data(), work.shape(), a, true);
  Shape out_shape = spec.shape();
  out_shape.back() = last_extent;
  Tensor out(out_shape);
  const std::size_t n = last_extent;
  const std::size_t lines = work.numel() / h;
  const double scale = 1.0 / double(transformed_points(out_shape, naxes));
  RealPlan& plan = real_plan_for(n);
  double* dst = out.data().data();
  for (std::size_t l = 0; l < lines; ++l) {
    const cdouble* line = work.data().data() + l * h;
    if (std::any_of(line, line + h, [](cdouble v) { return v != cdouble{}; })) plan.inverse(line, dst + l * n);
  }
  for (std::size_t i = 0; i < out.numel(); ++i) dst[i] *= scale;
  return out;
}

/// Vector-Jacobian product of rfftn: x_bar = Re(unnormalized inverse of the
/// zero-filled full spectrum).
inline Tensor rfftn_adjoint(const ComplexTensor& grad, std::size_t naxes, std::size_t last_extent) {
  Shape full_shape = grad.shape();
  full_shape.back() = last_extent;
  ComplexTensor full(full_shape);
  const std::size_t h = grad.shape().back();
  const std::size_t lines = grad.numel() / h;
  for (std::size_t l = 0; l < lines; ++l)
    for (std::size_t k = 0; k < h; ++k) full[l * last_extent + k] = grad[l * h + k];
  transform_trailing(full, naxes, true);
  Tensor out(full_shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = full[i].real();
  return out;
}

/// Vector-Jacobian product of irfftn: (1/N) rfftn(y_bar) with the bins that
/// stand for a conjugate pair counted twice.
inline ComplexTensor irfftn_adjoint(const Tensor& grad, std::size_t naxes) {
  ComplexTensor out = rfftn(grad, naxes);
  const std::size_t n = grad.shape().back();
  const std::size_t h = n / 2 + 1;
  const double scale = 1.0 / double(transformed_points(grad.shape(), naxes));
  const std::size_t lines = out.numel() / h;
  for (std::size_t l = 0; l < lines; ++l)
    for (std::size_t k = 0; k < h; ++k) {
      const bool self_conjugate = k == 0 || 2 * k == n;
      out[l * h + k] *= scale * (self_conjugate ? 1.0 : 2.0);
    }
  return out;
}

}  // namespace uno::fft
