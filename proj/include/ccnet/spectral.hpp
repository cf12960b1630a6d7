#pragma once

#include "ccnet/tensor.hpp"

#include <complex>
#include <vector>

namespace ccnet {

// In-place 2-D DFT of a row-major h x w complex plane. The inverse is scaled
// by 1/(h*w).
void fft2(std::vector<std::complex<double>>& plane, Index h, Index w, bool inverse = false);

// Per-channel |DFT2| of a [C,H,W] image.
Tensor amplitude_spectrum(const Tensor& image);

// Per channel: F = DFT2(image); out = Re IDFT2(((1-lambda)|F| + lambda*A) e^{i arg F}).
Tensor amplitude_mix(const Tensor& image, const Tensor& foreign_amplitude, double lambda);

}  // namespace ccnet
