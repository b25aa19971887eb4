#pragma once

#include "oct/image.hpp"

namespace oct::imgproc {

ImageF gaussian_blur(const ImageF& img, float sigma);

struct Gradients {
    ImageF gx, gy, magnitude;
};
Gradients sobel(const ImageF& img);

// Canny: Gaussian smoothing, Sobel gradients, non-maximum suppression,
// hysteresis. Thresholds are fractions of the maximum gradient magnitude.
ImageU8 canny(const ImageF& img, float sigma = 1.5f, float low_frac = 0.1f,
              float high_frac = 0.2f);

// Binary morphology with a 3x3 cross element.
ImageU8 dilate(const ImageU8& mask, int iterations = 1);
ImageU8 erode(const ImageU8& mask, int iterations = 1);
inline ImageU8 close_(const ImageU8& m, int iterations) {
    return erode(dilate(m, iterations), iterations);
}

// 8-connected component labeling; label 0 = background.
Image<int> connected_components(const ImageU8& mask, int* n_components = nullptr);
ImageU8 largest_component(const ImageU8& mask);
ImageU8 remove_small_components(const ImageU8& mask, int min_pixels);

// Pixel < (mean of window x window around it) - offset. Window mean uses an
// integral image with border clamping.
ImageU8 adaptive_threshold_dark(const ImageF& img, int window = 15, float offset = 0.02f);

}  // namespace oct::imgproc
