#include "popcorn/kernels.hpp"

#include <atomic>
#include <cmath>

#include "popcorn/errors.hpp"

namespace popcorn::kernels {

namespace {
std::atomic<Exec> g_default_exec{Exec::Parallel};
}

void set_default_exec(Exec e) { g_default_exec.store(e); }
Exec default_exec() { return g_default_exec.load(); }

namespace detail {

Shape conv_out_shape(const Shape& x_shape, const Shape& w_shape, int stride, int pad) {
  if (stride < 1) throw Error("conv: stride must be >= 1");
  if (pad < 0) throw Error("conv: pad must be >= 0");
  const auto sr = static_cast<int>(x_shape.size()) - 1;  // spatial rank
  if (sr != 2 && sr != 3)
    throw Error("conv: input must be (C, spatial...) with spatial rank 2 or 3, got " +
                shape_str(x_shape));
  if (static_cast<int>(w_shape.size()) != sr + 2)
    throw Error("conv: weight rank must be spatial rank + 2, got " + shape_str(w_shape));
  if (w_shape[1] != x_shape[0])
    throw Error("conv: weight Cin " + std::to_string(w_shape[1]) + " != input channels " +
                std::to_string(x_shape[0]));
  Shape out(x_shape.size());
  out[0] = w_shape[0];
  for (int a = 0; a < sr; ++a) {
    const std::int64_t in = x_shape[static_cast<std::size_t>(a + 1)];
    const std::int64_t k = w_shape[static_cast<std::size_t>(a + 2)];
    const std::int64_t span = in + 2 * pad - k;
    if (span < 0)
      throw Error("conv: kernel larger than padded input on axis " + std::to_string(a));
    out[static_cast<std::size_t>(a + 1)] = span / stride + 1;
  }
  return out;
}

std::vector<double> gaussian_taps(double sigma) {
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::int64_t t = -radius; t <= radius; ++t) {
    const double w = std::exp(-static_cast<double>(t * t) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(t + radius)] = w;
    sum += w;
  }
  for (auto& w : taps) w /= sum;
  return taps;
}

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace detail

NdArray conv_forward(const NdArray& x, const NdArray& w, const std::vector<double>& bias,
                     int stride, int pad, Exec exec) {
  return exec == Exec::Serial ? detail::conv_forward_serial(x, w, bias, stride, pad)
                              : detail::conv_forward_parallel(x, w, bias, stride, pad);
}

NdArray conv_forward(const NdArray& x, const NdArray& w, const std::vector<double>& bias,
                     int stride, int pad) {
  return conv_forward(x, w, bias, stride, pad, default_exec());
}

NdArray conv_backward_input(const NdArray& grad_out, const NdArray& w, const Shape& in_spatial,
                            int stride, int pad, Exec exec) {
  return exec == Exec::Serial
             ? detail::conv_backward_input_serial(grad_out, w, in_spatial, stride, pad)
             : detail::conv_backward_input_parallel(grad_out, w, in_spatial, stride, pad);
}

NdArray conv_backward_input(const NdArray& grad_out, const NdArray& w, const Shape& in_spatial,
                            int stride, int pad) {
  return conv_backward_input(grad_out, w, in_spatial, stride, pad, default_exec());
}

std::pair<NdArray, std::vector<double>> conv_backward_params(const NdArray& grad_out,
                                                             const NdArray& x,
                                                             const Shape& w_shape, int stride,
                                                             int pad, Exec exec) {
  return exec == Exec::Serial
             ? detail::conv_backward_params_serial(grad_out, x, w_shape, stride, pad)
             : detail::conv_backward_params_parallel(grad_out, x, w_shape, stride, pad);
}

std::pair<NdArray, std::vector<double>> conv_backward_params(const NdArray& grad_out,
                                                             const NdArray& x,
                                                             const Shape& w_shape, int stride,
                                                             int pad) {
  return conv_backward_params(grad_out, x, w_shape, stride, pad, default_exec());
}

NdArray gaussian_blur(const NdArray& x, double sigma, Exec exec) {
  return exec == Exec::Serial ? detail::gaussian_blur_serial(x, sigma)
                              : detail::gaussian_blur_parallel(x, sigma);
}

NdArray gaussian_blur(const NdArray& x, double sigma) {
  return gaussian_blur(x, sigma, default_exec());
}

NdArray distance_matrix(const std::vector<std::vector<double>>& u,
                        const std::vector<std::vector<double>>& t, Exec exec) {
  return exec == Exec::Serial ? detail::distance_matrix_serial(u, t)
                              : detail::distance_matrix_parallel(u, t);
}

NdArray distance_matrix(const std::vector<std::vector<double>>& u,
                        const std::vector<std::vector<double>>& t) {
  return distance_matrix(u, t, default_exec());
}

}  // namespace popcorn::kernels
