#include "popcorn/unet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "popcorn/errors.hpp"
#include "popcorn/kernels.hpp"

namespace popcorn {

using nlohmann::json;

void validate_model_config(const ModelConfig& c) {
  if (c.dims != 2 && c.dims != 3) throw ConfigError("model.dims: must be 2 or 3");
  if (c.in_channels < 1) throw ConfigError("model.in_channels: must be >= 1");
  if (c.base_filters < 4) throw ConfigError("model.base_filters: must be >= 4");
  if (c.depth < 2) throw ConfigError("model.depth: must be >= 2");
  if (static_cast<int>(c.patch_size.size()) != c.dims)
    throw ConfigError("model.patch_size: must have one entry per dimension");
  const std::int64_t div = std::int64_t{1} << c.depth;
  for (auto d : c.patch_size) {
    if (d < div || d % div != 0)
      throw ConfigError("model.patch_size: every axis must be a positive multiple of 2^depth (" +
                        std::to_string(div) + "), got " + shape_str(c.patch_size));
  }
}

std::int64_t Model::latent_dim() const {
  return static_cast<std::int64_t>(config.base_filters) << config.depth;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

namespace {

Shape conv_w_shape(const ModelConfig& c, std::int64_t cout, std::int64_t cin, std::int64_t k) {
  Shape s{cout, cin};
  for (int i = 0; i < c.dims; ++i) s.push_back(k);
  return s;
}

ConvLayer make_layer(const ModelConfig& c, std::int64_t cout, std::int64_t cin, std::int64_t k) {
  ConvLayer l;
  l.w = NdArray(conv_w_shape(c, cout, cin, k));
  l.b.assign(static_cast<std::size_t>(cout), 0.0);
  return l;
}

Model allocate_model(const ModelConfig& c) {
  validate_model_config(c);
  Model m;
  m.config = c;
  const auto f = [&](int s) { return static_cast<std::int64_t>(c.base_filters) << s; };
  for (int s = 0; s < c.depth; ++s) {
    const std::int64_t cin = s == 0 ? c.in_channels : f(s);
    m.enc_a.push_back(make_layer(c, f(s), cin, 3));
    m.enc_b.push_back(make_layer(c, f(s), f(s), 3));
    m.down.push_back(make_layer(c, f(s + 1), f(s), 2));
  }
  m.bot_a = make_layer(c, f(c.depth), f(c.depth), 3);
  m.bot_b = make_layer(c, f(c.depth), f(c.depth), 3);
  m.dec_up.resize(static_cast<std::size_t>(c.depth));
  m.dec_a.resize(static_cast<std::size_t>(c.depth));
  m.dec_b.resize(static_cast<std::size_t>(c.depth));
  for (int s = c.depth - 1; s >= 0; --s) {
    m.dec_up[static_cast<std::size_t>(s)] = make_layer(c, f(s), f(s + 1), 3);
    m.dec_a[static_cast<std::size_t>(s)] = make_layer(c, f(s), 2 * f(s), 3);
    m.dec_b[static_cast<std::size_t>(s)] = make_layer(c, f(s), f(s), 3);
  }
  m.out = make_layer(c, 1, f(0), 1);
  return m;
}

// Layer enumeration in execution order; everything parameter-ordered
// (init, Adam, checkpoints, hashes) goes through here.
template <typename ModelT, typename Fn>
void visit_layers(ModelT& m, Fn&& fn) {
  const int depth = m.config.depth;
  for (int s = 0; s < depth; ++s) {
    fn("enc" + std::to_string(s) + "a", m.enc_a[static_cast<std::size_t>(s)]);
    fn("enc" + std::to_string(s) + "b", m.enc_b[static_cast<std::size_t>(s)]);
    fn("down" + std::to_string(s), m.down[static_cast<std::size_t>(s)]);
  }
  fn("bot_a", m.bot_a);
  fn("bot_b", m.bot_b);
  for (int s = depth - 1; s >= 0; --s) {
    fn("dec" + std::to_string(s) + "_up", m.dec_up[static_cast<std::size_t>(s)]);
    fn("dec" + std::to_string(s) + "_a", m.dec_a[static_cast<std::size_t>(s)]);
    fn("dec" + std::to_string(s) + "_b", m.dec_b[static_cast<std::size_t>(s)]);
  }
  fn("out", m.out);
}

}  // namespace

void for_each_param(Model& m,
                    const std::function<void(const std::string&, std::span<double>)>& fn) {
  visit_layers(m, [&](const std::string& name, ConvLayer& l) {
    fn(name + "/w", std::span<double>(l.w.data));
    fn(name + "/b", std::span<double>(l.b));
  });
}

void for_each_param(const Model& m,
                    const std::function<void(const std::string&, std::span<const double>)>& fn) {
  visit_layers(m, [&](const std::string& name, const ConvLayer& l) {
    fn(name + "/w", std::span<const double>(l.w.data));
    fn(name + "/b", std::span<const double>(l.b));
  });
}

Model init_model(const ModelConfig& c, std::uint64_t seed) {
  Model m = allocate_model(c);
  Rng rng(seed);
  visit_layers(m, [&](const std::string&, ConvLayer& l) {
    std::int64_t fan_in = 1;
    for (std::size_t i = 1; i < l.w.shape.size(); ++i) fan_in *= l.w.shape[i];
    const double lim = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : l.w.data) v = rng.uniform(-lim, lim);
    // biases stay zero, no draws
  });
  return m;
}

Model zero_like(const Model& m) { return allocate_model(m.config); }

std::int64_t param_count(const Model& m) {
  std::int64_t n = 0;
  for_each_param(m, [&](const std::string&, std::span<const double> p) {
    n += static_cast<std::int64_t>(p.size());
  });
  return n;
}

std::uint64_t param_hash(const Model& m) {
  std::uint64_t h = 14695981039346656037ULL;
  for_each_param(m, [&](const std::string&, std::span<const double> p) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
    for (std::size_t i = 0; i < p.size_bytes(); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  });
  return h;
}

void scale_params(Model& m, double c) {
  for_each_param(m, [&](const std::string&, std::span<double> p) {
    for (auto& v : p) v *= c;
  });
}

namespace {

NdArray apply_gelu(const NdArray& z) {
  NdArray a(z.shape);
  for (std::int64_t i = 0; i < z.size(); ++i) a[i] = gelu(z[i]);
  return a;
}

// gz = g * gelu'(z), elementwise
NdArray gelu_backward(const NdArray& g, const NdArray& z) {
  NdArray gz(z.shape);
  for (std::int64_t i = 0; i < z.size(); ++i) gz[i] = g[i] * gelu_grad(z[i]);
  return gz;
}

NdArray upsample_nearest(const NdArray& in) {
  const int sr = in.rank() - 1;
  Shape out_shape = in.shape;
  for (int a = 1; a <= sr; ++a) out_shape[static_cast<std::size_t>(a)] *= 2;
  NdArray out(out_shape);
  const std::int64_t C = in.shape[0];
  if (sr == 2) {
    const std::int64_t H = in.shape[1], W = in.shape[2];
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < 2 * H; ++y)
        for (std::int64_t x = 0; x < 2 * W; ++x)
          out[(c * 2 * H + y) * 2 * W + x] = in[(c * H + y / 2) * W + x / 2];
  } else {
    const std::int64_t D = in.shape[1], H = in.shape[2], W = in.shape[3];
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t z = 0; z < 2 * D; ++z)
        for (std::int64_t y = 0; y < 2 * H; ++y)
          for (std::int64_t x = 0; x < 2 * W; ++x)
            out[((c * 2 * D + z) * 2 * H + y) * 2 * W + x] =
                in[((c * D + z / 2) * H + y / 2) * W + x / 2];
  }
  return out;
}

// adjoint of upsample_nearest: sum the 2^d children of each coarse cell
NdArray upsample_nearest_grad(const NdArray& g_out, const Shape& in_shape) {
  NdArray g_in(in_shape);
  const int sr = static_cast<int>(in_shape.size()) - 1;
  const std::int64_t C = in_shape[0];
  if (sr == 2) {
    const std::int64_t H = in_shape[1], W = in_shape[2];
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          double acc = 0.0;
          for (std::int64_t dy = 0; dy < 2; ++dy)
            for (std::int64_t dx = 0; dx < 2; ++dx)
              acc += g_out[(c * 2 * H + 2 * y + dy) * 2 * W + 2 * x + dx];
          g_in[(c * H + y) * W + x] = acc;
        }
  } else {
    const std::int64_t D = in_shape[1], H = in_shape[2], W = in_shape[3];
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
          for (std::int64_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (std::int64_t dz = 0; dz < 2; ++dz)
              for (std::int64_t dy = 0; dy < 2; ++dy)
                for (std::int64_t dx = 0; dx < 2; ++dx)
                  acc += g_out[((c * 2 * D + 2 * z + dz) * 2 * H + 2 * y + dy) * 2 * W + 2 * x + dx];
            g_in[((c * D + z) * H + y) * W + x] = acc;
          }
  }
  return g_in;
}

NdArray concat_channels(const NdArray& a, const NdArray& b) {
  Shape out_shape = a.shape;
  out_shape[0] += b.shape[0];
  NdArray out(out_shape);
  std::memcpy(out.data.data(), a.data.data(), a.data.size() * sizeof(double));
  std::memcpy(out.data.data() + a.data.size(), b.data.data(), b.data.size() * sizeof(double));
  return out;
}

// conv + GELU, caching input and pre-activation
NdArray conv_gelu(const ConvLayer& l, NdArray x, int stride, int pad, ConvCache& cache) {
  cache.z = kernels::conv_forward(x, l.w, l.b, stride, pad);
  cache.x = std::move(x);
  return apply_gelu(cache.z);
}

// backward through conv + GELU: returns grad w.r.t. the layer input,
// adding parameter gradients into g
NdArray conv_gelu_backward(const ConvLayer& l, ConvLayer& g, const ConvCache& cache,
                           const NdArray& grad_a, int stride, int pad) {
  const NdArray gz = gelu_backward(grad_a, cache.z);
  auto [gw, gb] = kernels::conv_backward_params(gz, cache.x, l.w.shape, stride, pad);
  for (std::int64_t i = 0; i < gw.size(); ++i) g.w[i] += gw[i];
  for (std::size_t i = 0; i < gb.size(); ++i) g.b[i] += gb[i];
  Shape in_spatial(cache.x.shape.begin() + 1, cache.x.shape.end());
  return kernels::conv_backward_input(gz, l.w, in_spatial, stride, pad);
}

}  // namespace

Activations forward_cached(const Model& m, const NdArray& x) {
  const ModelConfig& c = m.config;
  Shape expect{c.in_channels};
  for (auto d : c.patch_size) expect.push_back(d);
  if (x.shape != expect)
    throw Error("forward: input shape " + shape_str(x.shape) + " != expected " +
                shape_str(expect));

  Activations acts;
  const auto depth = static_cast<std::size_t>(c.depth);
  acts.enc_a.resize(depth);
  acts.enc_b.resize(depth);
  acts.down.resize(depth);
  acts.dec_up.resize(depth);
  acts.dec_a.resize(depth);
  acts.dec_b.resize(depth);

  std::vector<NdArray> skips(depth);
  NdArray cur = x;
  for (std::size_t s = 0; s < depth; ++s) {
    cur = conv_gelu(m.enc_a[s], std::move(cur), 1, 1, acts.enc_a[s]);
    cur = conv_gelu(m.enc_b[s], std::move(cur), 1, 1, acts.enc_b[s]);
    skips[s] = cur;
    cur = conv_gelu(m.down[s], std::move(cur), 2, 0, acts.down[s]);
  }
  cur = conv_gelu(m.bot_a, std::move(cur), 1, 1, acts.bot_a);
  cur = conv_gelu(m.bot_b, std::move(cur), 1, 1, acts.bot_b);
  acts.bottleneck = cur;

  const std::int64_t n_sp = acts.bottleneck.size() / acts.bottleneck.shape[0];
  acts.latent.assign(static_cast<std::size_t>(acts.bottleneck.shape[0]), 0.0);
  for (std::int64_t ch = 0; ch < acts.bottleneck.shape[0]; ++ch) {
    double sum = 0.0;
    for (std::int64_t i = 0; i < n_sp; ++i) sum += acts.bottleneck[ch * n_sp + i];
    acts.latent[static_cast<std::size_t>(ch)] = sum / static_cast<double>(n_sp);
  }

  for (int s = c.depth - 1; s >= 0; --s) {
    const auto si = static_cast<std::size_t>(s);
    cur = upsample_nearest(cur);
    cur = conv_gelu(m.dec_up[si], std::move(cur), 1, 1, acts.dec_up[si]);
    cur = concat_channels(skips[si], cur);
    cur = conv_gelu(m.dec_a[si], std::move(cur), 1, 1, acts.dec_a[si]);
    cur = conv_gelu(m.dec_b[si], std::move(cur), 1, 1, acts.dec_b[si]);
  }

  acts.out_layer.z = kernels::conv_forward(cur, m.out.w, m.out.b, 1, 0);
  acts.out_layer.x = std::move(cur);
  acts.probs = NdArray(acts.out_layer.z.shape);
  for (std::int64_t i = 0; i < acts.probs.size(); ++i)
    acts.probs[i] = 1.0 / (1.0 + std::exp(-acts.out_layer.z[i]));
  return acts;
}

std::pair<Prediction, LatentFeatures> forward(const Model& m, const Volume& patch) {
  if (m.config.in_channels != 1)
    throw Error("forward(Volume): model expects " + std::to_string(m.config.in_channels) +
                " channels; volumes are single-channel");
  Shape chan_shape{1};
  for (auto d : patch.voxels.shape) chan_shape.push_back(d);
  NdArray x(chan_shape);
  x.data = patch.voxels.data;
  Activations acts = forward_cached(m, x);
  Prediction pred;
  pred.probs = NdArray(patch.voxels.shape);
  pred.probs.data = std::move(acts.probs.data);
  return {std::move(pred), LatentFeatures{std::move(acts.latent)}};
}

void backward(const Model& m, const Activations& acts, const NdArray& grad_probs,
              std::span<const double> grad_latent, Model& grads) {
  const ModelConfig& c = m.config;
  const NdArray& z_out = acts.out_layer.z;

  NdArray gz_out(z_out.shape);
  if (grad_probs.size() > 0) {
    if (grad_probs.size() != z_out.size())
      throw Error("backward: grad_probs size mismatch");
    for (std::int64_t i = 0; i < z_out.size(); ++i) {
      const double p = acts.probs[i];
      gz_out[i] = grad_probs[i] * p * (1.0 - p);
    }
  }
  auto [gw_out, gb_out] =
      kernels::conv_backward_params(gz_out, acts.out_layer.x, m.out.w.shape, 1, 0);
  for (std::int64_t i = 0; i < gw_out.size(); ++i) grads.out.w[i] += gw_out[i];
  for (std::size_t i = 0; i < gb_out.size(); ++i) grads.out.b[i] += gb_out[i];
  Shape out_in_spatial(acts.out_layer.x.shape.begin() + 1, acts.out_layer.x.shape.end());
  NdArray g_cur = kernels::conv_backward_input(gz_out, m.out.w, out_in_spatial, 1, 0);

  std::vector<NdArray> g_skip(static_cast<std::size_t>(c.depth));
  for (int s = 0; s < c.depth; ++s) {
    const auto si = static_cast<std::size_t>(s);
    g_cur = conv_gelu_backward(m.dec_b[si], grads.dec_b[si], acts.dec_b[si], g_cur, 1, 1);
    NdArray g_concat =
        conv_gelu_backward(m.dec_a[si], grads.dec_a[si], acts.dec_a[si], g_cur, 1, 1);
    // split concat gradient: first half skip, second half the up-conv output
    const std::int64_t half = g_concat.shape[0] / 2;
    const std::int64_t n_sp = g_concat.size() / g_concat.shape[0];
    Shape half_shape = g_concat.shape;
    half_shape[0] = half;
    g_skip[si] = NdArray(half_shape);
    NdArray g_up_out(half_shape);
    std::memcpy(g_skip[si].data.data(), g_concat.data.data(),
                static_cast<std::size_t>(half * n_sp) * sizeof(double));
    std::memcpy(g_up_out.data.data(), g_concat.data.data() + half * n_sp,
                static_cast<std::size_t>(half * n_sp) * sizeof(double));
    NdArray g_upsampled =
        conv_gelu_backward(m.dec_up[si], grads.dec_up[si], acts.dec_up[si], g_up_out, 1, 1);
    Shape coarse_shape = g_upsampled.shape;
    for (std::size_t a = 1; a < coarse_shape.size(); ++a) coarse_shape[a] /= 2;
    g_cur = upsample_nearest_grad(g_upsampled, coarse_shape);
  }

  if (!grad_latent.empty()) {
    if (static_cast<std::int64_t>(grad_latent.size()) != acts.bottleneck.shape[0])
      throw Error("backward: grad_latent size mismatch");
    const std::int64_t n_sp = acts.bottleneck.size() / acts.bottleneck.shape[0];
    for (std::int64_t ch = 0; ch < acts.bottleneck.shape[0]; ++ch) {
      const double g = grad_latent[static_cast<std::size_t>(ch)] / static_cast<double>(n_sp);
      for (std::int64_t i = 0; i < n_sp; ++i) g_cur[ch * n_sp + i] += g;
    }
  }

  g_cur = conv_gelu_backward(m.bot_b, grads.bot_b, acts.bot_b, g_cur, 1, 1);
  g_cur = conv_gelu_backward(m.bot_a, grads.bot_a, acts.bot_a, g_cur, 1, 1);

  for (int s = c.depth - 1; s >= 0; --s) {
    const auto si = static_cast<std::size_t>(s);
    NdArray g_encb = conv_gelu_backward(m.down[si], grads.down[si], acts.down[si], g_cur, 2, 0);
    for (std::int64_t i = 0; i < g_encb.size(); ++i) g_encb[i] += g_skip[si][i];
    g_cur = conv_gelu_backward(m.enc_b[si], grads.enc_b[si], acts.enc_b[si], g_encb, 1, 1);
    g_cur = conv_gelu_backward(m.enc_a[si], grads.enc_a[si], acts.enc_a[si], g_cur, 1, 1);
  }
}

namespace {

std::vector<std::int64_t> overlap_starts(std::int64_t dim, std::int64_t patch) {
  std::vector<std::int64_t> starts;
  const std::int64_t step = patch / 2;
  for (std::int64_t s = 0; s + patch <= dim; s += step) starts.push_back(s);
  if (starts.back() + patch < dim) starts.push_back(dim - patch);
  return starts;
}

std::vector<std::int64_t> grid_starts(std::int64_t dim, std::int64_t patch) {
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + patch <= dim; s += patch) starts.push_back(s);
  if (starts.back() + patch < dim) starts.push_back(dim - patch);
  return starts;
}

std::vector<PatchSpec> tile_specs(const Shape& vol_shape, const Shape& patch,
                                  bool overlap) {
  std::vector<std::vector<std::int64_t>> axis_starts;
  for (std::size_t a = 0; a < vol_shape.size(); ++a)
    axis_starts.push_back(overlap ? overlap_starts(vol_shape[a], patch[a])
                                  : grid_starts(vol_shape[a], patch[a]));
  std::vector<PatchSpec> specs;
  std::vector<std::size_t> idx(vol_shape.size(), 0);
  while (true) {
    PatchSpec spec;
    spec.size = patch;
    for (std::size_t a = 0; a < vol_shape.size(); ++a)
      spec.origin.push_back(axis_starts[a][idx[a]]);
    specs.push_back(std::move(spec));
    std::size_t a = vol_shape.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axis_starts[a].size()) break;
      idx[a] = 0;
      if (a == 0) return specs;
    }
    if (a == 0 && idx[0] == 0) return specs;
  }
}

void check_volume_fits(const ModelConfig& c, const Volume& v) {
  if (static_cast<int>(v.voxels.shape.size()) != c.dims)
    throw DataError("volume rank " + std::to_string(v.voxels.shape.size()) +
                    " != model dims " + std::to_string(c.dims));
  for (int a = 0; a < c.dims; ++a) {
    if (v.voxels.shape[static_cast<std::size_t>(a)] < c.patch_size[static_cast<std::size_t>(a)])
      throw DataError("volume " + shape_str(v.voxels.shape) + " smaller than patch size " +
                      shape_str(c.patch_size) + " on axis " + std::to_string(a));
  }
}

}  // namespace

Mask predict_mask(const Model& m, const Volume& volume, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("predict_mask: threshold must be in (0,1)");
  check_volume_fits(m.config, volume);

  NdArray prob_sum(volume.voxels.shape);
  std::vector<std::int64_t> count(static_cast<std::size_t>(volume.voxels.size()), 0);
  const auto specs = tile_specs(volume.voxels.shape, m.config.patch_size, true);

  const int r = volume.voxels.rank();
  std::vector<std::int64_t> stride(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) stride[i] = stride[i + 1] * volume.voxels.shape[i + 1];

  for (const auto& spec : specs) {
    Volume patch = extract_patch(volume, spec);
    auto [pred, latent] = forward(m, patch);
    (void)latent;
    // scatter-add the tile back; tiles processed in deterministic order
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    for (std::int64_t flat = 0; flat < pred.probs.size(); ++flat) {
      std::int64_t dst = 0;
      for (int a = 0; a < r; ++a) dst += (spec.origin[a] + idx[a]) * stride[a];
      prob_sum[dst] += pred.probs[flat];
      ++count[static_cast<std::size_t>(dst)];
      for (int a = r - 1; a >= 0; --a) {
        if (++idx[a] < spec.size[a]) break;
        idx[a] = 0;
      }
    }
  }

  Mask mask{NdArray(volume.voxels.shape)};
  for (std::int64_t i = 0; i < prob_sum.size(); ++i) {
    const double avg = prob_sum[i] / static_cast<double>(count[static_cast<std::size_t>(i)]);
    mask.voxels[i] = avg > threshold ? 1.0 : 0.0;
  }
  return mask;
}

LatentFeatures embed_volume(const Model& m, const Volume& volume) {
  check_volume_fits(m.config, volume);
  const auto specs = tile_specs(volume.voxels.shape, m.config.patch_size, false);
  std::vector<double> mean(static_cast<std::size_t>(m.latent_dim()), 0.0);
  for (const auto& spec : specs) {
    Volume patch = extract_patch(volume, spec);
    auto [pred, latent] = forward(m, patch);
    (void)pred;
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += latent.values[i];
  }
  for (auto& v : mean) v /= static_cast<double>(specs.size());
  return LatentFeatures{std::move(mean)};
}

LatentFeatures embed_sample(const Model& m, const Sample& s) {
  return embed_volume(m, s.volume);
}

AdamState make_adam(const Model& m, double lr) {
  AdamState opt;
  opt.lr = lr;
  const auto n = static_cast<std::size_t>(param_count(m));
  opt.m.assign(n, 0.0);
  opt.v.assign(n, 0.0);
  return opt;
}

void apply_gradients(Model& model, const Model& grads, AdamState& opt) {
  std::vector<std::span<double>> ps;
  for_each_param(model, [&](const std::string&, std::span<double> p) { ps.push_back(p); });
  std::vector<std::pair<std::string, std::span<const double>>> gs;
  for_each_param(grads, [&](const std::string& name, std::span<const double> g) {
    gs.emplace_back(name, g);
  });
  if (ps.size() != gs.size()) throw Error("apply_gradients: parameter structure mismatch");

  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  std::size_t k = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].size() != gs[i].second.size())
      throw Error("apply_gradients: gradient shape mismatch for " + gs[i].first);
    for (std::size_t j = 0; j < ps[i].size(); ++j, ++k) {
      const double g = gs[i].second[j];
      if (!std::isfinite(g))
        throw Error("apply_gradients: non-finite gradient in " + gs[i].first);
      opt.m[k] = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * g;
      opt.v[k] = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * g * g;
      const double mhat = opt.m[k] / bc1;
      const double vhat = opt.v[k] / bc2;
      ps[i][j] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
  if (k != opt.m.size()) throw Error("apply_gradients: optimizer state size mismatch");
}

namespace {

constexpr char kCkptMagic[4] = {'P', 'C', 'K', 'P'};
constexpr unsigned char kCkptVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["completed_cycles"] = ckpt.completed_cycles;
  header["model"] = {{"dims", ckpt.model.config.dims},
                     {"in_channels", ckpt.model.config.in_channels},
                     {"base_filters", ckpt.model.config.base_filters},
                     {"depth", ckpt.model.config.depth},
                     {"patch_size", ckpt.model.config.patch_size}};
  header["opt"] = {{"lr", ckpt.opt.lr},
                   {"beta1", ckpt.opt.beta1},
                   {"beta2", ckpt.opt.beta2},
                   {"eps", ckpt.opt.eps},
                   {"step", ckpt.opt.step}};
  header["rng"] = ckpt.rng_state;
  json manifest = json::array();
  for_each_param(ckpt.model, [&](const std::string& name, std::span<const double> p) {
    manifest.push_back({{"name", name}, {"size", p.size()}});
  });
  header["params"] = manifest;
  const std::string head = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint: " + path.string());
  f.write(kCkptMagic, 4);
  f.put(static_cast<char>(kCkptVersion));
  const auto head_len = static_cast<std::uint32_t>(head.size());
  f.write(reinterpret_cast<const char*>(&head_len), 4);
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  for_each_param(ckpt.model, [&](const std::string&, std::span<const double> p) {
    f.write(reinterpret_cast<const char*>(p.data()),
            static_cast<std::streamsize>(p.size_bytes()));
  });
  f.write(reinterpret_cast<const char*>(ckpt.opt.m.data()),
          static_cast<std::streamsize>(ckpt.opt.m.size() * sizeof(double)));
  f.write(reinterpret_cast<const char*>(ckpt.opt.v.data()),
          static_cast<std::streamsize>(ckpt.opt.v.size() * sizeof(double)));
  if (!f) throw DataError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw DataError("corrupt checkpoint (bad magic): " + path.string());
  const int version = f.get();
  if (version != kCkptVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t head_len = 0;
  f.read(reinterpret_cast<char*>(&head_len), 4);
  if (f.gcount() != 4 || head_len == 0 || head_len > (1u << 24))
    throw DataError("corrupt checkpoint (bad header length): " + path.string());
  std::string head(head_len, '\0');
  f.read(head.data(), head_len);
  if (f.gcount() != static_cast<std::streamsize>(head_len))
    throw DataError("corrupt checkpoint (truncated header): " + path.string());

  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  try {
    ModelConfig mc;
    mc.dims = header.at("model").at("dims").get<int>();
    mc.in_channels = header.at("model").at("in_channels").get<int>();
    mc.base_filters = header.at("model").at("base_filters").get<int>();
    mc.depth = header.at("model").at("depth").get<int>();
    mc.patch_size = header.at("model").at("patch_size").get<Shape>();
    ckpt.model = allocate_model(mc);
    ckpt.opt.lr = header.at("opt").at("lr").get<double>();
    ckpt.opt.beta1 = header.at("opt").at("beta1").get<double>();
    ckpt.opt.beta2 = header.at("opt").at("beta2").get<double>();
    ckpt.opt.eps = header.at("opt").at("eps").get<double>();
    ckpt.opt.step = header.at("opt").at("step").get<std::int64_t>();
    ckpt.rng_state = header.at("rng").get<std::string>();
    ckpt.completed_cycles = header.at("completed_cycles").get<std::int64_t>();

    std::size_t idx = 0;
    const json& manifest = header.at("params");
    for_each_param(ckpt.model, [&](const std::string& name, std::span<const double> p) {
      if (idx >= manifest.size()) throw DataError("checkpoint manifest too short");
      if (manifest[idx].at("name").get<std::string>() != name ||
          manifest[idx].at("size").get<std::size_t>() != p.size())
        throw DataError("checkpoint manifest mismatch at " + name);
      ++idx;
    });
    if (idx != manifest.size()) throw DataError("checkpoint manifest too long");
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }

  for_each_param(ckpt.model, [&](const std::string& name, std::span<double> p) {
    f.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size_bytes()));
    if (f.gcount() != static_cast<std::streamsize>(p.size_bytes()))
      throw DataError("corrupt checkpoint (truncated payload at " + name + ")");
  });
  const auto n = static_cast<std::size_t>(param_count(ckpt.model));
  ckpt.opt.m.assign(n, 0.0);
  ckpt.opt.v.assign(n, 0.0);
  f.read(reinterpret_cast<char*>(ckpt.opt.m.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
    throw DataError("corrupt checkpoint (truncated first-moment state)");
  f.read(reinterpret_cast<char*>(ckpt.opt.v.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
    throw DataError("corrupt checkpoint (truncated second-moment state)");
  return ckpt;
}

}  // namespace popcorn
