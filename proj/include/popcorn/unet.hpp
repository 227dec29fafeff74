#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "popcorn/data.hpp"
#include "popcorn/nd.hpp"

namespace popcorn {

// Encoder-decoder segmentation network over 2D or 3D patches, one code path
// for both. Per encoder stage: two 3^d convolutions with GELU, then a
// 2-strided 2^d convolution halving resolution and doubling channels. The
// bottleneck runs two more convolutions; its post-GELU activation map is
// global-average-pooled into the latent vector h. Decoder stages mirror the
// encoder with nearest-neighbor 2x upsampling and skip concatenation
// (skip channels first). A 1x1 convolution plus sigmoid yields per-voxel
// probabilities. Smooth components throughout (GELU, strided convolutions,
// nearest upsampling averaged by overlap-free design) keep finite-difference
// gradient checks tight.
struct ModelConfig {
  int dims = 2;
  int in_channels = 1;
  int base_filters = 8;
  int depth = 2;
  Shape patch_size = {32, 32};

  bool operator==(const ModelConfig&) const = default;
};

void validate_model_config(const ModelConfig& c);

struct ConvLayer {
  NdArray w;               // (Cout, Cin, k...)
  std::vector<double> b;   // Cout
};

struct Model {
  ModelConfig config;
  std::vector<ConvLayer> enc_a, enc_b, down;   // one per encoder stage
  ConvLayer bot_a, bot_b;
  std::vector<ConvLayer> dec_up, dec_a, dec_b; // one per decoder stage
  ConvLayer out;

  std::int64_t latent_dim() const;
};

// Allocates all layers and fills weights He-uniform (lim = sqrt(6/fan_in)),
// biases zero, drawing from one Rng stream in parameter enumeration order.
Model init_model(const ModelConfig& c, std::uint64_t seed);

// Same shapes as m, all values zero. Used as a gradient accumulator.
Model zero_like(const Model& m);

// Fixed parameter enumeration order (execution order; weights before bias
// within a layer). Shared by init, Adam, checkpoints, and hashing.
void for_each_param(Model& m,
                    const std::function<void(const std::string&, std::span<double>)>& fn);
void for_each_param(const Model& m,
                    const std::function<void(const std::string&, std::span<const double>)>& fn);

std::int64_t param_count(const Model& m);
std::uint64_t param_hash(const Model& m);
void scale_params(Model& m, double c);

struct Prediction {
  NdArray probs;  // spatial shape, values in [0, 1]
};

struct LatentFeatures {
  std::vector<double> values;
};

struct ConvCache {
  NdArray x;  // layer input
  NdArray z;  // pre-activation output
};

// Everything backward() needs, captured during a cached forward pass.
struct Activations {
  std::vector<ConvCache> enc_a, enc_b, down;
  ConvCache bot_a, bot_b;
  NdArray bottleneck;  // post-GELU bottleneck map (C, spatial...)
  std::vector<ConvCache> dec_up, dec_a, dec_b;
  ConvCache out_layer;
  NdArray probs;       // (1, spatial...)
  std::vector<double> latent;
};

// x is channels-first (C, spatial...) matching config.patch_size.
Activations forward_cached(const Model& m, const NdArray& x);

// Single-channel convenience over a patch Volume.
std::pair<Prediction, LatentFeatures> forward(const Model& m, const Volume& patch);

// Backpropagates d(loss)/d(probs) and d(loss)/d(latent) through the cached
// pass, ADDING parameter gradients into `grads` (shape of zero_like(m)).
// Either gradient may be empty (treated as zero).
void backward(const Model& m, const Activations& acts, const NdArray& grad_probs,
              std::span<const double> grad_latent, Model& grads);

// Full-volume inference: tiles with 50% overlap (last tile shifted inward),
// averages probabilities where tiles overlap, thresholds strictly
// (prob > threshold  =>  foreground).
Mask predict_mask(const Model& m, const Volume& volume, double threshold = 0.5);

// Mean bottleneck vector over a deterministic non-overlapping tile grid
// (remainder tile shifted inward).
LatentFeatures embed_volume(const Model& m, const Volume& volume);
LatentFeatures embed_sample(const Model& m, const Sample& s);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<double> m, v;  // flat, aligned with parameter enumeration
};

AdamState make_adam(const Model& m, double lr);

// One Adam step; grads must be finite and model-shaped.
void apply_gradients(Model& model, const Model& grads, AdamState& opt);

// Self-describing binary snapshot enabling exact resume: model config and
// parameters, optimizer state, trainer rng state, completed cycle count.
struct Checkpoint {
  Model model;
  AdamState opt;
  std::string rng_state;
  std::int64_t completed_cycles = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

double gelu(double x);
double gelu_grad(double x);

}  // namespace popcorn
