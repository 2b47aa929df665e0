#pragma once
// Spatial broadcast decoder and the spatial Gaussian mixture likelihood.
//
// Each slot latent z_k is broadcast to a [M+2, H, W] grid (two trailing
// coordinate channels), pushed through a stack of size-preserving ELU convs
// shared across slots, and a final linear conv yields per-pixel RGB means
// plus one mask logit channel. Mixing weights are the softmax of the logits
// across slots, so masks sum to one at every pixel by construction.

#include <string>
#include <vector>

#include "slotvae/model.hpp"
#include "slotvae/ops.hpp"
#include "slotvae/params.hpp"

namespace slotvae {

template <typename S>
struct DecodeResult {
  Var<S> means;        // [K, C, H, W], linear activation
  Var<S> mask_logits;  // [K, 1, H, W]
};

namespace detail {

// conv bias [Co] reshaped so it broadcasts over [K, Co, H, W]
template <typename S>
Var<S> conv_bias(Var<S> b) {
  return reshape(b, {1, b.shape()[0], 1, 1});
}

}  // namespace detail

template <typename S>
DecodeResult<S> decode_slots(Graph<S>& g, Var<S> z, const ParamStore<S>& ps,
                             ParamBinding<S>& bind, const ModelConfig& cfg) {
  if (z.shape() != Shape{z.shape()[0], cfg.latent})
    fail("decode_slots: z must be [K, latent], got " + shape_str(z.shape()));
  Var<S> cur = spatial_broadcast(z, cfg.img_h, cfg.img_w);
  for (int i = 0; i < cfg.dec_layers; ++i) {
    const std::string name = "dec.conv" + std::to_string(i);
    Var<S> w = bind(g, ps, name + ".w");
    Var<S> b = bind(g, ps, name + ".b");
    cur = elu(add(conv2d(cur, w, 1, Pad::kSame), detail::conv_bias(b)));
  }
  Var<S> w = bind(g, ps, "dec.head.w");
  Var<S> b = bind(g, ps, "dec.head.b");
  cur = add(conv2d(cur, w, 1, Pad::kSame), detail::conv_bias(b));
  DecodeResult<S> out;
  out.means = slice(cur, 1, 0, cfg.img_c);
  out.mask_logits = slice(cur, 1, cfg.img_c, 1);
  return out;
}

// mixing weights: softmax over the slot axis, [K, 1, H, W]
template <typename S>
Var<S> normalize_masks(Var<S> mask_logits) {
  return softmax(mask_logits, 0);
}

// per-slot, per-pixel log N(x; mu_k, sigma^2) summed over channels:
// x [1, C, H, W] against means [K, C, H, W] -> [K, 1, H, W]
template <typename S>
Var<S> slot_pixel_loglik(Var<S> x, Var<S> means, S sigma) {
  Var<S> lp = gaussian_logpdf(x, means, sigma);
  return reduce_sum(lp, {1}, /*keepdims=*/true);
}

// log sum_k m_k N(x; mu_k, sigma^2) per pixel, [1, 1, H, W]
template <typename S>
Var<S> log_mixture(Var<S> log_masks, Var<S> slot_ll) {
  return logsumexp(add(log_masks, slot_ll), 0);
}

// KL(q || N(0, I)) summed over slots and latent dimensions; closed form
// 0.5 * sum(mu^2 + sigma^2 - 1 - 2 ln sigma)
template <typename S>
Var<S> kl_to_prior(Var<S> mean, Var<S> scale) {
  Var<S> terms =
      add(add(mul(mean, mean), mul(scale, scale)), muls(log(scale), S(-2)));
  return muls(sum_all(adds(terms, S(-1))), S(0.5));
}

// mask-weighted combination of slot means, [C, H, W]
template <typename S>
Var<S> reconstruct(Var<S> means, Var<S> masks) {
  return reduce_sum(mul(means, masks), {0});
}

// data-side mask-weighted combination: means [K,C,H,W], masks [K,1,H,W]
// -> [C,H,W]
template <typename S>
Tensor<S> combine_slots(const Tensor<S>& means, const Tensor<S>& masks) {
  const int K = means.shape[0], C = means.shape[1];
  const std::int64_t hw = shape_numel({means.shape[2], means.shape[3]});
  Tensor<S> out({C, means.shape[2], means.shape[3]});
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < C; ++c)
      for (std::int64_t p = 0; p < hw; ++p)
        out[c * hw + p] += masks[k * hw + p] * means[(k * C + c) * hw + p];
  return out;
}

// data-side reconstruction error: mean over pixels and channels of
// (x - sum_k m_k mu_k)^2, from detached tensors
template <typename S>
double reconstruction_mse(const Tensor<S>& x, const Tensor<S>& means,
                          const Tensor<S>& masks) {
  const int K = means.shape[0], C = means.shape[1];
  const std::int64_t hw =
      shape_numel({means.shape[2], means.shape[3]});
  if (x.numel() != C * hw) fail("reconstruction_mse: image shape mismatch");
  double acc = 0;
  for (int c = 0; c < C; ++c) {
    for (std::int64_t p = 0; p < hw; ++p) {
      double recon = 0;
      for (int k = 0; k < K; ++k)
        recon += static_cast<double>(masks[(k * hw) + p]) *
                 static_cast<double>(means[(k * C + c) * hw + p]);
      const double d = static_cast<double>(x[c * hw + p]) - recon;
      acc += d * d;
    }
  }
  return acc / static_cast<double>(C * hw);
}

template <typename S>
struct Generation {
  Tensor<S> means;  // [K, C, H, W]
  Tensor<S> masks;  // [K, 1, H, W]
  Tensor<S> image;  // [C, H, W]
};

// ancestral sample: z_k ~ N(0, I) for each slot, decode, combine
template <typename S>
Generation<S> generate_from_prior(const ParamStore<S>& ps,
                                  const ModelConfig& cfg, int K, Rng& rng) {
  Graph<S> g;
  ParamBinding<S> bind;
  Tensor<S> z({K, cfg.latent});
  rng.fill_normal(z);
  DecodeResult<S> dec = decode_slots(g, g.constant(std::move(z)), ps, bind, cfg);
  Var<S> masks = normalize_masks(dec.mask_logits);
  Var<S> image = reconstruct(dec.means, masks);
  Generation<S> out;
  out.means = dec.means.val();
  out.masks = masks.val();
  out.image = image.val();
  return out;
}

}  // namespace slotvae
