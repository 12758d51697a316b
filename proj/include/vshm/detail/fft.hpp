#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace vshm::detail {

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// One-sided DFT of a real signal zero-padded to nfft (nfft/2+1 bins).
inline std::vector<std::complex<double>> rfft(const std::vector<double>& x, std::size_t nfft) {
    std::vector<double> padded(nfft, 0.0);
    std::copy(x.begin(), x.end(), padded.begin());
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> full;
    fft.fwd(full, padded);
    full.resize(nfft / 2 + 1);
    return full;
}

} // namespace vshm::detail
