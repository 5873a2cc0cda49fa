#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "binloc/error.hpp"

namespace binloc::detail {
namespace {

struct Plans {
  fftw_plan forward;
  fftw_plan inverse;
};

// Plans live for the life of the process; FFTW's planner is not re-entrant.
Plans plans_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, Plans> cache;
  std::lock_guard lock(mutex);
  if (auto it = cache.find(n); it != cache.end()) return it->second;
  std::vector<double> real(n);
  std::vector<std::complex<double>> spec(n / 2 + 1);
  const int len = static_cast<int>(n);
  auto* cplx = reinterpret_cast<fftw_complex*>(spec.data());
  Plans p{};
  p.forward = fftw_plan_dft_r2c_1d(len, real.data(), cplx, FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.inverse = fftw_plan_dft_c2r_1d(len, cplx, real.data(),
                                   FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_DESTROY_INPUT);
  if (p.forward == nullptr || p.inverse == nullptr) throw Error("FFTW planning failed");
  cache.emplace(n, p);
  return p;
}

}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  require(n >= 2 && n % 2 == 0, "RealFft: length must be even and >= 2");
  const Plans p = plans_for(n);
  forward_plan_ = p.forward;
  inverse_plan_ = p.inverse;
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) const {
  require(in.size() == n_ && out.size() == bins(), "RealFft::forward: size mismatch");
  // FFTW may not modify the input of an out-of-place r2c transform.
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) const {
  require(in.size() == bins() && out.size() == n_, "RealFft::inverse: size mismatch");
  // c2r destroys its input, so work on a copy.
  std::vector<std::complex<double>> scratch(in.begin(), in.end());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_),
                       reinterpret_cast<fftw_complex*>(scratch.data()), out.data());
}

}  // namespace binloc::detail
