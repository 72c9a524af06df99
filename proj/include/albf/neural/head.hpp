#pragma once

#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "albf/beamformers.hpp"
#include "albf/fft.hpp"
#include "albf/neural/adam.hpp"
#include "albf/neural/unet.hpp"
#include "albf/postprocess.hpp"

namespace albf::nn {

/// Where the training loss is measured.
enum class LossDomain {
  BMode,  // normalized log-compressed image, (db + DR) / DR
  Rf,     // pre-envelope beamformed sum, normalized by its peak magnitude
};

struct LossOptions {
  double dynamic_range = kDefaultDynamicRange;
  double soft_knee = 0.05;  // soft floor width in normalized units
  LossDomain domain = LossDomain::BMode;
};

/// Channel-weighted sum y(p, q) = sum_i w(p, q, i) t(p, q, i).
inline Array2 weighted_sum(const Array3& t, const Array3& w) {
  require_same_shape(t, w, "beamform head");
  Array2 y({t.extent(0), t.extent(1)}, 0.0);
  for (std::size_t p = 0; p < t.extent(0); ++p)
    for (std::size_t q = 0; q < t.extent(1); ++q) {
      const auto s = t.row(p, q);
      const auto a = w.row(p, q);
      double acc = 0;
      for (std::size_t i = 0; i < s.size(); ++i) acc += a[i] * s[i];
      y(p, q) = acc;
    }
  return y;
}

/// Evaluation path: weights applied, channels summed, envelope, hard-clamped log compression.
inline BModeImage beamform_head(const DelayedTensor& t, const ApodWeights& w,
                                double dynamic_range = kDefaultDynamicRange) {
  BeamformedData b;
  b.values = weighted_sum(t.data, w.weights);
  b.method = Method::MODEL;
  b.grid = t.grid;
  b.probe = t.probe;
  return to_bmode(b, dynamic_range);
}

inline BeamformedData model_beamformed(const DelayedTensor& t, const ApodWeights& w) {
  BeamformedData b;
  b.values = weighted_sum(t.data, w.weights);
  b.method = Method::MODEL;
  b.grid = t.grid;
  b.probe = t.probe;
  return b;
}

/// Hard-clamped normalized image in [0, 1].
inline Array2 normalized_image(const BModeImage& img) {
  Array2 u(img.db_values.shape());
  const double dr = img.dynamic_range;
  for (std::size_t k = 0; k < u.size(); ++k) {
    u.storage()[k] = std::clamp((img.db_values.storage()[k] + dr) / dr, 0.0, 1.0);
  }
  return u;
}

/// Target for one training step: the selected method's display image (and its RF sum for
/// the alternative loss domain).
struct TrainTarget {
  BModeImage bmode;
  std::optional<Array2> beamformed;
};

namespace detail {

inline constexpr double kPowerFloor = 1e-30;

inline double soft_floor(double u, double knee) {
  return u >= knee ? u : knee + knee * std::tanh((u - knee) / knee);
}
inline double soft_floor_slope(double u, double knee) {
  if (u >= knee) return 1.0;
  const double th = std::tanh((u - knee) / knee);
  return 1.0 - th * th;
}

inline void hilbert_columns(const Array2& x, Array2& out) {
  const std::size_t m = x.extent(0), n = x.extent(1);
  std::vector<double> line(m), h(m);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t p = 0; p < m; ++p) line[p] = x(p, q);
    fft::hilbert(line, h);
    for (std::size_t p = 0; p < m; ++p) out(p, q) = h[p];
  }
}

inline double bmode_loss(const Array3& t, const Array3& w, const Array2& target_u, const LossOptions& opt,
                         Array3* dw) {
  const Array2 y = weighted_sum(t, w);
  require(target_u.shape() == y.shape(), ErrorKind::ShapeMismatch, "training target shape differs from image");
  Array2 hy(y.shape());
  hilbert_columns(y, hy);

  const std::size_t P = y.size();
  std::vector<double> e2(P), level(P);
  std::size_t arg = 0;
  for (std::size_t k = 0; k < P; ++k) {
    const double a = y.storage()[k], b = hy.storage()[k];
    e2[k] = a * a + b * b;
    if (e2[k] > e2[arg]) arg = k;
  }
  const double ln10 = std::numbers::ln10;
  for (std::size_t k = 0; k < P; ++k) level[k] = 10.0 * std::log10(e2[k] + kPowerFloor);
  const double top = level[arg];
  const double dr = opt.dynamic_range;

  double loss = 0;
  std::vector<double> dlevel(P, 0.0);
  for (std::size_t k = 0; k < P; ++k) {
    const double u = (level[k] - top + dr) / dr;
    const double r = soft_floor(u, opt.soft_knee) - target_u.storage()[k];
    loss += r * r;
    if (dw) dlevel[k] = 2.0 * r / static_cast<double>(P) * soft_floor_slope(u, opt.soft_knee) / dr;
  }
  loss /= static_cast<double>(P);
  if (!dw) return loss;

  double dtop = 0;
  for (double v : dlevel) dtop -= v;
  dlevel[arg] += dtop;

  Array2 dy(y.shape()), gh(y.shape());
  for (std::size_t k = 0; k < P; ++k) {
    const double de2 = dlevel[k] * 10.0 / (ln10 * (e2[k] + kPowerFloor));
    dy.storage()[k] = 2.0 * y.storage()[k] * de2;
    gh.storage()[k] = 2.0 * hy.storage()[k] * de2;
  }
  // Adjoint of the discrete Hilbert transform is its negation.
  Array2 adj(y.shape());
  hilbert_columns(gh, adj);
  for (std::size_t k = 0; k < P; ++k) dy.storage()[k] -= adj.storage()[k];

  *dw = Array3(t.shape());
  for (std::size_t p = 0; p < t.extent(0); ++p)
    for (std::size_t q = 0; q < t.extent(1); ++q) {
      const auto s = t.row(p, q);
      auto g = dw->row(p, q);
      const double d = dy(p, q);
      for (std::size_t i = 0; i < s.size(); ++i) g[i] = d * s[i];
    }
  return loss;
}

inline double rf_loss(const Array3& t, const Array3& w, const Array2& target, Array3* dw) {
  const Array2 y = weighted_sum(t, w);
  require(target.shape() == y.shape(), ErrorKind::ShapeMismatch, "training target shape differs from image");
  const std::size_t P = y.size();
  std::size_t arg = 0;
  double tmax = 0;
  for (std::size_t k = 0; k < P; ++k) {
    if (std::abs(y.storage()[k]) > std::abs(y.storage()[arg])) arg = k;
    tmax = std::max(tmax, std::abs(target.storage()[k]));
  }
  const double ymax = std::abs(y.storage()[arg]);
  if (!(ymax > 0) || !(tmax > 0)) return std::numeric_limits<double>::quiet_NaN();
  double loss = 0;
  Array2 dy(y.shape());
  double dmax = 0;
  for (std::size_t k = 0; k < P; ++k) {
    const double r = y.storage()[k] / ymax - target.storage()[k] / tmax;
    loss += r * r;
    const double g = 2.0 * r / static_cast<double>(P);
    dy.storage()[k] = g / ymax;
    dmax -= g * y.storage()[k] / (ymax * ymax);
  }
  dy.storage()[arg] += dmax * (y.storage()[arg] >= 0 ? 1.0 : -1.0);
  loss /= static_cast<double>(P);
  if (dw) {
    *dw = Array3(t.shape());
    for (std::size_t p = 0; p < t.extent(0); ++p)
      for (std::size_t q = 0; q < t.extent(1); ++q) {
        const auto s = t.row(p, q);
        auto g = dw->row(p, q);
        for (std::size_t i = 0; i < s.size(); ++i) g[i] = dy(p, q) * s[i];
      }
  }
  return loss;
}

}  // namespace detail

/// Training loss of the weighted image against the target, and optionally d(loss)/d(weights).
inline double head_loss(const DelayedTensor& t, const ApodWeights& w, const TrainTarget& target,
                        const LossOptions& opt, Array3* dw = nullptr) {
  if (opt.domain == LossDomain::Rf) {
    require(target.beamformed.has_value(), ErrorKind::Configuration, "RF-domain loss needs a beamformed target");
    return detail::rf_loss(t.data, w.weights, *target.beamformed, dw);
  }
  require(std::abs(target.bmode.dynamic_range - opt.dynamic_range) < 1e-12, ErrorKind::Configuration,
          "target dynamic range differs from the loss dynamic range");
  return detail::bmode_loss(t.data, w.weights, normalized_image(target.bmode), opt, dw);
}

/// Display-domain MSE between two B-mode images (hard clamp, normalized to [0, 1]).
inline double bmode_mse(const BModeImage& a, const BModeImage& b) {
  const auto ua = normalized_image(a), ub = normalized_image(b);
  require(ua.shape() == ub.shape(), ErrorKind::ShapeMismatch, "image shapes differ");
  double acc = 0;
  for (std::size_t k = 0; k < ua.size(); ++k) {
    const double d = ua.storage()[k] - ub.storage()[k];
    acc += d * d;
  }
  return acc / static_cast<double>(ua.size());
}

struct StepResult {
  double loss = 0;
  bool applied = false;
  std::string diagnostic;
  double seconds = 0;
};

/// One forward/backward pass and one Adam update. A non-finite loss or gradient leaves the
/// parameters, moments and batch-norm statistics untouched.
template <typename S>
StepResult train_step(const DelayedTensor& t, const TrainTarget& target, UNet<S>& model, AdamState<S>& opt,
                      const TrainConfig& cfg, const LossOptions& loss_opt = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  StepResult res;

  std::vector<std::vector<S>> saved;
  for (const auto& b : model.buffers()) saved.push_back(*b.values);
  auto restore = [&] {
    const auto& bufs = model.buffers();
    for (std::size_t k = 0; k < bufs.size(); ++k) *bufs[k].values = saved[k];
    model.release();
  };

  ApodWeights w{to_cube(model.forward(to_tensor<S>(t.data), Mode::Train))};
  Array3 dw;
  res.loss = head_loss(t, w, target, loss_opt, &dw);
  if (!std::isfinite(res.loss) || !dw.all_finite()) {
    restore();
    res.diagnostic = "non-finite loss or gradient (loss=" + std::to_string(res.loss) + "); step aborted";
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
  }

  model.zero_grad();
  model.backward(to_tensor<S>(dw));
  model.release();
  for (auto* p : model.parameters()) {
    for (auto g : p->grad) {
      if (!std::isfinite(static_cast<double>(g))) {
        restore();
        res.diagnostic = "non-finite gradient in " + p->name + "; step aborted";
        return res;
      }
    }
  }
  adam_update(model.parameters(), opt, cfg);
  res.applied = true;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

/// Model image as shown to the user (batch-norm in evaluation mode).
template <typename S>
BModeImage predict_bmode(const DelayedTensor& t, UNet<S>& model, double dynamic_range = kDefaultDynamicRange) {
  return beamform_head(t, unet_forward(t, model, Mode::Eval), dynamic_range);
}

}  // namespace albf::nn
