#include "melodica/fft.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <utility>

#include <fftw3.h>

namespace melodica {

namespace {
// Only fftw_execute is thread-safe; planning and destruction are not.
std::mutex &planner_mutex() {
  static std::mutex m;
  return m;
}
} // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  if (n == 0)
    throw std::invalid_argument("fft length must be positive");
  std::lock_guard lock(planner_mutex());
  in_ = fftw_alloc_real(n);
  auto *out = fftw_alloc_complex(n / 2 + 1);
  out_ = out;
  plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  if (!plan_)
    return;
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(plan_));
  fftw_free(in_);
  fftw_free(out_);
}

RealFft::RealFft(RealFft &&other) noexcept
    : n_(other.n_), in_(std::exchange(other.in_, nullptr)),
      out_(std::exchange(other.out_, nullptr)), plan_(std::exchange(other.plan_, nullptr)) {}

RealFft &RealFft::operator=(RealFft &&other) noexcept {
  std::swap(n_, other.n_);
  std::swap(in_, other.in_);
  std::swap(out_, other.out_);
  std::swap(plan_, other.plan_);
  return *this;
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  if (in.size() != n_ || out.size() < bins())
    throw std::invalid_argument("fft buffer size mismatch");
  std::copy(in.begin(), in.end(), in_);
  fftw_execute(static_cast<fftw_plan>(plan_));
  const auto *res = static_cast<const fftw_complex *>(out_);
  for (std::size_t k = 0; k < bins(); ++k)
    out[k] = {res[k][0], res[k][1]};
}

ComplexFft::ComplexFft(std::size_t n) : n_(n) {
  if (n == 0)
    throw std::invalid_argument("fft length must be positive");
  std::lock_guard lock(planner_mutex());
  auto *buf = fftw_alloc_complex(n);
  buf_ = buf;
  fwd_ = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
  inv_ = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
}

ComplexFft::~ComplexFft() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(inv_));
  fftw_free(buf_);
}

void ComplexFft::run(void *plan, std::vector<std::complex<double>> &data) {
  if (data.size() != n_)
    throw std::invalid_argument("fft buffer size mismatch");
  // std::complex<double> is layout-compatible with fftw_complex.
  std::memcpy(buf_, data.data(), n_ * sizeof(fftw_complex));
  fftw_execute(static_cast<fftw_plan>(plan));
  std::memcpy(data.data(), buf_, n_ * sizeof(fftw_complex));
}

void ComplexFft::forward(std::vector<std::complex<double>> &data) { run(fwd_, data); }
void ComplexFft::inverse(std::vector<std::complex<double>> &data) { run(inv_, data); }

} // namespace melodica
