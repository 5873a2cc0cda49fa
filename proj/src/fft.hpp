#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace binloc::detail {

/// Real-input FFT of fixed length backed by FFTW. Plans are created once per
/// length under a lock; execution is thread-safe.
class RealFft {
 public:
  explicit RealFft(std::size_t n);

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// out[k] = sum_n in[n] e^{-j 2 pi k n / N}, k = 0..N/2.
  void forward(std::span<const double> in, std::span<std::complex<double>> out) const;

  /// Unnormalized inverse: out[n] = sum_k X[k] e^{+j 2 pi k n / N} over the
  /// full Hermitian spectrum (callers divide by N).
  void inverse(std::span<const std::complex<double>> in, std::span<double> out) const;

 private:
  std::size_t n_;
  void* forward_plan_;
  void* inverse_plan_;
};

}  // namespace binloc::detail
