#include <cmath>

#include "popcorn/errors.hpp"
#include "popcorn/kernels.hpp"

// Reference implementations: straight loops, no tiling, no pragmas. The
// OpenMP build must match these bit-for-bit, so per-output-element inner
// summation order here is the contract, not an implementation detail.
namespace popcorn::kernels::detail {

NdArray conv_forward_serial(const NdArray& x, const NdArray& w, const std::vector<double>& bias,
                            int stride, int pad) {
  const Shape out_shape = conv_out_shape(x.shape, w.shape, stride, pad);
  if (static_cast<std::int64_t>(bias.size()) != w.shape[0])
    throw Error("conv: bias length must equal Cout");
  NdArray y(out_shape);
  const std::int64_t cin = x.shape[0];

  if (x.rank() == 3) {
    const std::int64_t H = x.shape[1], W = x.shape[2];
    const std::int64_t kh = w.shape[2], kw = w.shape[3];
    const std::int64_t OH = out_shape[1], OW = out_shape[2];
    for (std::int64_t co = 0; co < out_shape[0]; ++co)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          double acc = bias[static_cast<std::size_t>(co)];
          for (std::int64_t ci = 0; ci < cin; ++ci)
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                acc += x[(ci * H + iy) * W + ix] * w[((co * cin + ci) * kh + ky) * kw + kx];
              }
            }
          y[(co * OH + oy) * OW + ox] = acc;
        }
    return y;
  }

  const std::int64_t D = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t kd = w.shape[2], kh = w.shape[3], kw = w.shape[4];
  const std::int64_t OD = out_shape[1], OH = out_shape[2], OW = out_shape[3];
  for (std::int64_t co = 0; co < out_shape[0]; ++co)
    for (std::int64_t oz = 0; oz < OD; ++oz)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          double acc = bias[static_cast<std::size_t>(co)];
          for (std::int64_t ci = 0; ci < cin; ++ci)
            for (std::int64_t kz = 0; kz < kd; ++kz) {
              const std::int64_t iz = oz * stride - pad + kz;
              if (iz < 0 || iz >= D) continue;
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  acc += x[((ci * D + iz) * H + iy) * W + ix] *
                         w[(((co * cin + ci) * kd + kz) * kh + ky) * kw + kx];
                }
              }
            }
          y[((co * OD + oz) * OH + oy) * OW + ox] = acc;
        }
  return y;
}

NdArray conv_backward_input_serial(const NdArray& grad_out, const NdArray& w,
                                   const Shape& in_spatial, int stride, int pad) {
  Shape x_shape;
  x_shape.push_back(w.shape[1]);
  for (auto d : in_spatial) x_shape.push_back(d);
  const Shape out_shape = conv_out_shape(x_shape, w.shape, stride, pad);
  if (grad_out.shape != out_shape)
    throw Error("conv_backward_input: grad shape " + shape_str(grad_out.shape) +
                " != expected " + shape_str(out_shape));
  NdArray gx(x_shape);
  const std::int64_t cout = w.shape[0], cin = w.shape[1];

  if (gx.rank() == 3) {
    const std::int64_t H = x_shape[1], W = x_shape[2];
    const std::int64_t kh = w.shape[2], kw = w.shape[3];
    const std::int64_t OH = out_shape[1], OW = out_shape[2];
    for (std::int64_t ci = 0; ci < cin; ++ci)
      for (std::int64_t iy = 0; iy < H; ++iy)
        for (std::int64_t ix = 0; ix < W; ++ix) {
          double acc = 0.0;
          for (std::int64_t co = 0; co < cout; ++co)
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t ty = iy + pad - ky;
              if (ty < 0 || ty % stride != 0) continue;
              const std::int64_t oy = ty / stride;
              if (oy >= OH) continue;
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t tx = ix + pad - kx;
                if (tx < 0 || tx % stride != 0) continue;
                const std::int64_t ox = tx / stride;
                if (ox >= OW) continue;
                acc += grad_out[(co * OH + oy) * OW + ox] *
                       w[((co * cin + ci) * kh + ky) * kw + kx];
              }
            }
          gx[(ci * H + iy) * W + ix] = acc;
        }
    return gx;
  }

  const std::int64_t D = x_shape[1], H = x_shape[2], W = x_shape[3];
  const std::int64_t kd = w.shape[2], kh = w.shape[3], kw = w.shape[4];
  const std::int64_t OD = out_shape[1], OH = out_shape[2], OW = out_shape[3];
  for (std::int64_t ci = 0; ci < cin; ++ci)
    for (std::int64_t iz = 0; iz < D; ++iz)
      for (std::int64_t iy = 0; iy < H; ++iy)
        for (std::int64_t ix = 0; ix < W; ++ix) {
          double acc = 0.0;
          for (std::int64_t co = 0; co < cout; ++co)
            for (std::int64_t kz = 0; kz < kd; ++kz) {
              const std::int64_t tz = iz + pad - kz;
              if (tz < 0 || tz % stride != 0) continue;
              const std::int64_t oz = tz / stride;
              if (oz >= OD) continue;
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t ty = iy + pad - ky;
                if (ty < 0 || ty % stride != 0) continue;
                const std::int64_t oy = ty / stride;
                if (oy >= OH) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t tx = ix + pad - kx;
                  if (tx < 0 || tx % stride != 0) continue;
                  const std::int64_t ox = tx / stride;
                  if (ox >= OW) continue;
                  acc += grad_out[((co * OD + oz) * OH + oy) * OW + ox] *
                         w[(((co * cin + ci) * kd + kz) * kh + ky) * kw + kx];
                }
              }
            }
          gx[((ci * D + iz) * H + iy) * W + ix] = acc;
        }
  return gx;
}

std::pair<NdArray, std::vector<double>> conv_backward_params_serial(const NdArray& grad_out,
                                                                    const NdArray& x,
                                                                    const Shape& w_shape,
                                                                    int stride, int pad) {
  const Shape out_shape = conv_out_shape(x.shape, w_shape, stride, pad);
  if (grad_out.shape != out_shape)
    throw Error("conv_backward_params: grad shape " + shape_str(grad_out.shape) +
                " != expected " + shape_str(out_shape));
  NdArray gw(w_shape);
  const std::int64_t cout = w_shape[0], cin = w_shape[1];
  std::vector<double> gb(static_cast<std::size_t>(cout), 0.0);

  if (x.rank() == 3) {
    const std::int64_t H = x.shape[1], W = x.shape[2];
    const std::int64_t kh = w_shape[2], kw = w_shape[3];
    const std::int64_t OH = out_shape[1], OW = out_shape[2];
    for (std::int64_t co = 0; co < cout; ++co) {
      for (std::int64_t ci = 0; ci < cin; ++ci)
        for (std::int64_t ky = 0; ky < kh; ++ky)
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            double acc = 0.0;
            for (std::int64_t oy = 0; oy < OH; ++oy) {
              const std::int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              for (std::int64_t ox = 0; ox < OW; ++ox) {
                const std::int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                acc += grad_out[(co * OH + oy) * OW + ox] * x[(ci * H + iy) * W + ix];
              }
            }
            gw[((co * cin + ci) * kh + ky) * kw + kx] = acc;
          }
      double acc = 0.0;
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) acc += grad_out[(co * OH + oy) * OW + ox];
      gb[static_cast<std::size_t>(co)] = acc;
    }
    return {std::move(gw), std::move(gb)};
  }

  const std::int64_t D = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t kd = w_shape[2], kh = w_shape[3], kw = w_shape[4];
  const std::int64_t OD = out_shape[1], OH = out_shape[2], OW = out_shape[3];
  for (std::int64_t co = 0; co < cout; ++co) {
    for (std::int64_t ci = 0; ci < cin; ++ci)
      for (std::int64_t kz = 0; kz < kd; ++kz)
        for (std::int64_t ky = 0; ky < kh; ++ky)
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            double acc = 0.0;
            for (std::int64_t oz = 0; oz < OD; ++oz) {
              const std::int64_t iz = oz * stride - pad + kz;
              if (iz < 0 || iz >= D) continue;
              for (std::int64_t oy = 0; oy < OH; ++oy) {
                const std::int64_t iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (std::int64_t ox = 0; ox < OW; ++ox) {
                  const std::int64_t ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  acc += grad_out[((co * OD + oz) * OH + oy) * OW + ox] *
                         x[((ci * D + iz) * H + iy) * W + ix];
                }
              }
            }
            gw[(((co * cin + ci) * kd + kz) * kh + ky) * kw + kx] = acc;
          }
    double acc = 0.0;
    for (std::int64_t oz = 0; oz < OD; ++oz)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox)
          acc += grad_out[((co * OD + oz) * OH + oy) * OW + ox];
    gb[static_cast<std::size_t>(co)] = acc;
  }
  return {std::move(gw), std::move(gb)};
}

NdArray gaussian_blur_serial(const NdArray& x, double sigma) {
  if (sigma <= 0.0) return x;
  const std::vector<double> taps = gaussian_taps(sigma);
  const auto radius = static_cast<std::int64_t>(taps.size() / 2);
  const int r = x.rank();

  std::vector<std::int64_t> stride(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) stride[i] = stride[i + 1] * x.shape[i + 1];

  NdArray cur = x;
  for (int axis = 0; axis < r; ++axis) {
    const std::int64_t n = x.shape[static_cast<std::size_t>(axis)];
    const std::int64_t s = stride[static_cast<std::size_t>(axis)];
    NdArray next(x.shape);
    // enumerate lines along `axis`: all index tuples with that coordinate 0
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    const std::int64_t n_lines = x.size() / n;
    for (std::int64_t line = 0; line < n_lines; ++line) {
      std::int64_t base = 0;
      for (int i = 0; i < r; ++i) base += idx[static_cast<std::size_t>(i)] * stride[static_cast<std::size_t>(i)];
      for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::int64_t t = -radius; t <= radius; ++t) {
          const std::int64_t j = reflect_index(i + t, n);
          acc += taps[static_cast<std::size_t>(t + radius)] * cur[base + j * s];
        }
        next[base + i * s] = acc;
      }
      for (int i = r - 1; i >= 0; --i) {
        if (i == axis) continue;
        if (++idx[static_cast<std::size_t>(i)] < x.shape[static_cast<std::size_t>(i)]) break;
        idx[static_cast<std::size_t>(i)] = 0;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

NdArray distance_matrix_serial(const std::vector<std::vector<double>>& u,
                               const std::vector<std::vector<double>>& t) {
  if (u.empty() || t.empty()) throw Error("distance_matrix: empty input");
  const std::size_t dim = u[0].size();
  for (const auto& v : u)
    if (v.size() != dim) throw Error("distance_matrix: inconsistent vector lengths");
  for (const auto& v : t)
    if (v.size() != dim) throw Error("distance_matrix: inconsistent vector lengths");
  NdArray out({static_cast<std::int64_t>(u.size()), static_cast<std::int64_t>(t.size())});
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < t.size(); ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = u[i][d] - t[j][d];
        acc += diff * diff;
      }
      out[static_cast<std::int64_t>(i * t.size() + j)] = acc;
    }
  return out;
}

}  // namespace popcorn::kernels::detail
