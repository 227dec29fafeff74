#include "popcorn/losses.hpp"

#include <cmath>

#include "popcorn/errors.hpp"

namespace popcorn {

namespace {

void check_same_size(const NdArray& a, const NdArray& b, const char* what) {
  if (a.size() != b.size())
    throw Error(std::string(what) + ": size mismatch, " + shape_str(a.shape) + " vs " +
                shape_str(b.shape));
}

}  // namespace

double dice_loss(const NdArray& pred, const NdArray& target, double eps) {
  check_same_size(pred, target, "dice_loss");
  double sp = 0.0, st = 0.0, spt = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    sp += pred[i];
    st += target[i];
    spt += pred[i] * target[i];
  }
  const double num = 2.0 * spt + eps;
  const double den = sp + st + eps;
  return 1.0 - num / den;
}

NdArray dice_loss_grad(const NdArray& pred, const NdArray& target, double eps) {
  check_same_size(pred, target, "dice_loss_grad");
  double sp = 0.0, st = 0.0, spt = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    sp += pred[i];
    st += target[i];
    spt += pred[i] * target[i];
  }
  const double num = 2.0 * spt + eps;
  const double den = sp + st + eps;
  NdArray g(pred.shape);
  for (std::int64_t i = 0; i < pred.size(); ++i)
    g[i] = (num - 2.0 * target[i] * den) / (den * den);
  return g;
}

double prediction_similarity(const NdArray& a, const NdArray& b) {
  check_same_size(a, b, "prediction_similarity");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::exp(-acc / static_cast<double>(a.size()));
}

double feature_distance(std::span<const double> a, std::span<const double> b, double eps) {
  if (a.size() != b.size() || a.empty())
    throw Error("feature_distance: vectors must be nonempty and equal length");
  double s = 0.0, q = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
    q += a[i] * a[i] + b[i] * b[i];
  }
  return 2.0 * s / (q + eps);
}

FeatureDistanceGrad feature_distance_grad(std::span<const double> a, std::span<const double> b,
                                          double eps) {
  if (a.size() != b.size() || a.empty())
    throw Error("feature_distance_grad: vectors must be nonempty and equal length");
  double s = 0.0, q = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
    q += a[i] * a[i] + b[i] * b[i];
  }
  const double qe = q + eps;
  const double f = 2.0 * s / qe;
  FeatureDistanceGrad g;
  g.da.resize(a.size());
  g.db.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    g.da[i] = (4.0 * d - 2.0 * f * a[i]) / qe;
    g.db[i] = (-4.0 * d - 2.0 * f * b[i]) / qe;
  }
  return g;
}

double consistency_loss(const NdArray& pred_i, const NdArray& pred_j,
                        std::span<const double> h_i, std::span<const double> h_j) {
  return prediction_similarity(pred_i, pred_j) * feature_distance(h_i, h_j);
}

namespace {

NdArray channelize(const NdArray& v) {
  Shape s{1};
  for (auto d : v.shape) s.push_back(d);
  NdArray x(s);
  x.data = v.data;
  return x;
}

LossReport report_from(const Activations& ai, const Activations& aj, const PairItem& pair,
                       double alpha) {
  LossReport r;
  r.alpha = alpha;
  r.seg_i = dice_loss(ai.probs, pair.y_i.voxels);
  r.seg_j = dice_loss(aj.probs, pair.y_j.voxels);
  r.reg = consistency_loss(ai.probs, aj.probs, ai.latent, aj.latent);
  r.total = r.seg_i + r.seg_j + alpha * r.reg;
  return r;
}

}  // namespace

LossReport total_loss(const Model& m, const PairItem& pair, double alpha) {
  const Activations ai = forward_cached(m, channelize(pair.patch_i.voxels));
  const Activations aj = forward_cached(m, channelize(pair.patch_j.voxels));
  return report_from(ai, aj, pair, alpha);
}

LossReport total_loss_grad(const Model& m, const PairItem& pair, double alpha, Model& grads) {
  const Activations ai = forward_cached(m, channelize(pair.patch_i.voxels));
  const Activations aj = forward_cached(m, channelize(pair.patch_j.voxels));
  const LossReport r = report_from(ai, aj, pair, alpha);

  const NdArray gp_i = dice_loss_grad(ai.probs, pair.y_i.voxels);
  const NdArray gp_j = dice_loss_grad(aj.probs, pair.y_j.voxels);

  std::vector<double> gl_i, gl_j;
  if (alpha != 0.0) {
    const double sim = prediction_similarity(ai.probs, aj.probs);
    const FeatureDistanceGrad fg = feature_distance_grad(ai.latent, aj.latent);
    gl_i.resize(fg.da.size());
    gl_j.resize(fg.db.size());
    for (std::size_t k = 0; k < fg.da.size(); ++k) {
      gl_i[k] = alpha * sim * fg.da[k];
      gl_j[k] = alpha * sim * fg.db[k];
    }
  }
  backward(m, ai, gp_i, gl_i, grads);
  backward(m, aj, gp_j, gl_j, grads);
  return r;
}

double single_dice_loss(const Model& m, const Volume& patch, const Mask& y) {
  const Activations a = forward_cached(m, channelize(patch.voxels));
  return dice_loss(a.probs, y.voxels);
}

double single_dice_loss_grad(const Model& m, const Volume& patch, const Mask& y, Model& grads) {
  const Activations a = forward_cached(m, channelize(patch.voxels));
  const double loss = dice_loss(a.probs, y.voxels);
  const NdArray gp = dice_loss_grad(a.probs, y.voxels);
  backward(m, a, gp, {}, grads);
  return loss;
}

}  // namespace popcorn
