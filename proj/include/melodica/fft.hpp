#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace melodica {

/// Real-to-complex forward transform of a fixed length backed by FFTW.
/// Output holds n/2 + 1 bins with no normalization.
class RealFft {
public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft &) = delete;
  RealFft &operator=(const RealFft &) = delete;
  RealFft(RealFft &&other) noexcept;
  RealFft &operator=(RealFft &&other) noexcept;

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  void forward(std::span<const double> in, std::span<std::complex<double>> out);

private:
  std::size_t n_ = 0;
  double *in_ = nullptr;
  void *out_ = nullptr;
  void *plan_ = nullptr;
};

/// In-place complex transform of a fixed length. The inverse is unnormalized.
class ComplexFft {
public:
  explicit ComplexFft(std::size_t n);
  ~ComplexFft();
  ComplexFft(const ComplexFft &) = delete;
  ComplexFft &operator=(const ComplexFft &) = delete;

  std::size_t size() const noexcept { return n_; }
  void forward(std::vector<std::complex<double>> &data);
  void inverse(std::vector<std::complex<double>> &data);

private:
  void run(void *plan, std::vector<std::complex<double>> &data);
  std::size_t n_ = 0;
  void *buf_ = nullptr;
  void *fwd_ = nullptr;
  void *inv_ = nullptr;
};

} // namespace melodica
