#pragma once

#include <utility>
#include <vector>

#include "popcorn/nd.hpp"

// Hot numeric loops, each in two builds: a naive serial reference and an
// OpenMP version. Both compute every output element with the same inner
// summation order, so results are bit-identical and tests can compare the
// two implementations exactly. Tensor layout is channels-first row-major:
// inputs (C, spatial...), weights (Cout, Cin, k...), spatial rank 2 or 3.
namespace popcorn::kernels {

enum class Exec { Serial, Parallel };

void set_default_exec(Exec e);
Exec default_exec();

// Cross-correlation with square/cubic kernel, zero padding.
// Output spatial extent per axis: (in + 2*pad - k) / stride + 1.
NdArray conv_forward(const NdArray& x, const NdArray& w, const std::vector<double>& bias,
                     int stride, int pad);
NdArray conv_forward(const NdArray& x, const NdArray& w, const std::vector<double>& bias,
                     int stride, int pad, Exec exec);

// Gradient w.r.t. the input of conv_forward.
NdArray conv_backward_input(const NdArray& grad_out, const NdArray& w, const Shape& in_spatial,
                            int stride, int pad);
NdArray conv_backward_input(const NdArray& grad_out, const NdArray& w, const Shape& in_spatial,
                            int stride, int pad, Exec exec);

// Gradients w.r.t. weights and bias of conv_forward.
std::pair<NdArray, std::vector<double>> conv_backward_params(const NdArray& grad_out,
                                                             const NdArray& x,
                                                             const Shape& w_shape, int stride,
                                                             int pad);
std::pair<NdArray, std::vector<double>> conv_backward_params(const NdArray& grad_out,
                                                             const NdArray& x,
                                                             const Shape& w_shape, int stride,
                                                             int pad, Exec exec);

// Separable Gaussian blur over a plain spatial array (any rank >= 1).
// Kernel truncated at ceil(3*sigma) taps per side, renormalized to sum 1;
// boundaries reflect (i < 0 -> -1-i, i >= n -> 2n-1-i). sigma <= 0 is the
// identity.
NdArray gaussian_blur(const NdArray& x, double sigma);
NdArray gaussian_blur(const NdArray& x, double sigma, Exec exec);

// All-pairs squared euclidean distances: out[i][j] = ||u[i] - t[j]||^2.
NdArray distance_matrix(const std::vector<std::vector<double>>& u,
                        const std::vector<std::vector<double>>& t);
NdArray distance_matrix(const std::vector<std::vector<double>>& u,
                        const std::vector<std::vector<double>>& t, Exec exec);

namespace detail {
NdArray conv_forward_serial(const NdArray& x, const NdArray& w, const std::vector<double>& bias,
                            int stride, int pad);
NdArray conv_backward_input_serial(const NdArray& grad_out, const NdArray& w,
                                   const Shape& in_spatial, int stride, int pad);
std::pair<NdArray, std::vector<double>> conv_backward_params_serial(const NdArray& grad_out,
                                                                    const NdArray& x,
                                                                    const Shape& w_shape,
                                                                    int stride, int pad);
NdArray gaussian_blur_serial(const NdArray& x, double sigma);
NdArray distance_matrix_serial(const std::vector<std::vector<double>>& u,
                               const std::vector<std::vector<double>>& t);

NdArray conv_forward_parallel(const NdArray& x, const NdArray& w, const std::vector<double>& bias,
                              int stride, int pad);
NdArray conv_backward_input_parallel(const NdArray& grad_out, const NdArray& w,
                                     const Shape& in_spatial, int stride, int pad);
std::pair<NdArray, std::vector<double>> conv_backward_params_parallel(const NdArray& grad_out,
                                                                      const NdArray& x,
                                                                      const Shape& w_shape,
                                                                      int stride, int pad);
NdArray gaussian_blur_parallel(const NdArray& x, double sigma);
NdArray distance_matrix_parallel(const std::vector<std::vector<double>>& u,
                                 const std::vector<std::vector<double>>& t);

// Shared shape validation and output-extent arithmetic.
Shape conv_out_shape(const Shape& x_shape, const Shape& w_shape, int stride, int pad);
std::vector<double> gaussian_taps(double sigma);
std::int64_t reflect_index(std::int64_t i, std::int64_t n);
}  // namespace detail

}  // namespace popcorn::kernels
