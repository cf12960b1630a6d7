#include "ccnet/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <stdexcept>

namespace ccnet {

void fft2(std::vector<std::complex<double>>& plane, Index h, Index w, bool inverse) {
    if (static_cast<Index>(plane.size()) != h * w) throw std::invalid_argument("fft2: plane size mismatch");
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> line, out;
    line.resize(static_cast<std::size_t>(w));
    for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) line[static_cast<std::size_t>(c)] = plane[static_cast<std::size_t>(r * w + c)];
        if (inverse) fft.inv(out, line);
        else fft.fwd(out, line);
        for (Index c = 0; c < w; ++c) plane[static_cast<std::size_t>(r * w + c)] = out[static_cast<std::size_t>(c)];
    }
    line.resize(static_cast<std::size_t>(h));
    for (Index c = 0; c < w; ++c) {
        for (Index r = 0; r < h; ++r) line[static_cast<std::size_t>(r)] = plane[static_cast<std::size_t>(r * w + c)];
        if (inverse) fft.inv(out, line);
        else fft.fwd(out, line);
        for (Index r = 0; r < h; ++r) plane[static_cast<std::size_t>(r * w + c)] = out[static_cast<std::size_t>(r)];
    }
}

namespace {

void check_image(const Tensor& image) {
    if (image.rank() != 3) throw std::invalid_argument("expected a [C,H,W] image, got " + to_string(image.shape()));
}

std::vector<std::complex<double>> channel_spectrum(const Tensor& image, Index ch) {
    const Index h = image.dim(1), w = image.dim(2);
    std::vector<std::complex<double>> plane(static_cast<std::size_t>(h * w));
    for (Index i = 0; i < h * w; ++i) plane[static_cast<std::size_t>(i)] = image[ch * h * w + i];
    fft2(plane, h, w);
    return plane;
}

}  // namespace

Tensor amplitude_spectrum(const Tensor& image) {
    check_image(image);
    const Index h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    for (Index ch = 0; ch < image.dim(0); ++ch) {
        const auto plane = channel_spectrum(image, ch);
        for (Index i = 0; i < h * w; ++i) out[ch * h * w + i] = std::abs(plane[static_cast<std::size_t>(i)]);
    }
    return out;
}

Tensor amplitude_mix(const Tensor& image, const Tensor& foreign_amplitude, double lambda) {
    check_image(image);
    if (foreign_amplitude.shape() != image.shape()) {
        throw std::invalid_argument("amplitude_mix: image " + to_string(image.shape()) + " vs amplitude " +
                                    to_string(foreign_amplitude.shape()));
    }
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("amplitude_mix: lambda must be in [0, 1]");
    const Index h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    for (Index ch = 0; ch < image.dim(0); ++ch) {
        auto plane = channel_spectrum(image, ch);
        for (Index i = 0; i < h * w; ++i) {
            auto& f = plane[static_cast<std::size_t>(i)];
            const double amplitude = (1.0 - lambda) * std::abs(f) + lambda * foreign_amplitude[ch * h * w + i];
            f = std::polar(amplitude, std::arg(f));
        }
        fft2(plane, h, w, true);
        for (Index i = 0; i < h * w; ++i) out[ch * h * w + i] = plane[static_cast<std::size_t>(i)].real();
    }
    return out;
}

}  // namespace ccnet
