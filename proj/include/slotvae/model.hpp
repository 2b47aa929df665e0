#pragma once
// Model hyperparameters shared by the decoder and the refinement network,
// plus deterministic parameter initialization. Slot count K and iteration
// count T are runtime quantities, not architecture: every weight below is
// shared across slots and iterations.

#include <cmath>
#include <string>

#include "slotvae/params.hpp"
#include "slotvae/random.hpp"

namespace slotvae {

struct ModelConfig {
  int latent = 32;  // per-slot latent dimensionality M
  int img_c = 3, img_h = 20, img_w = 20;
  double sigma = 0.1;  // fixed scale of the spatial mixture components

  // decoder: spatial broadcast -> dec_layers ELU convs -> linear head conv
  // producing img_c mean channels plus one mask logit channel
  int dec_layers = 3, dec_width = 32, dec_kernel = 3;

  // refinement trunk: ref_layers ELU convs -> global average pool -> ELU MLP
  // -> concat with [lambda, grad lambda] -> (optional LSTM) -> linear head
  int ref_layers = 2, ref_width = 32, ref_kernel = 3, ref_stride = 2;
  int ref_mlp = 128;
  int ref_lstm = 0;  // hidden size; 0 = stateless head

  // x, means, grad-means (img_c each); mask, logits, posterior, grad-mask,
  // pixel likelihood, leave-one-out likelihood (1 each); 2 coordinates
  int aux_image_channels() const { return 3 * img_c + 8; }
};

inline ModelConfig tetris_paper_model() {
  ModelConfig m;
  m.latent = 64;
  m.img_c = 3;
  m.img_h = m.img_w = 35;
  m.dec_layers = 4;
  m.dec_width = 32;
  m.dec_kernel = 5;
  m.ref_layers = 3;
  m.ref_width = 32;
  m.ref_kernel = 5;
  m.ref_stride = 1;
  m.ref_mlp = 128;
  m.ref_lstm = 0;
  return m;
}

inline ModelConfig tetris_mini_model() { return ModelConfig{}; }

// softplus(raw) == 1, so q starts out close to N(0, I)
inline double softplus_inverse_one() { return std::log(std::expm1(1.0)); }

template <typename S>
void init_model_params(ParamStore<S>& ps, const ModelConfig& cfg, Rng root) {
  Rng init = root.child("init");
  auto conv = [&](const std::string& name, int co, int ci, int k) {
    Tensor<S>& w = ps.create(name + ".w", {co, ci, k, k});
    init_conv(w, init.child(name + ".w"));
    ps.create(name + ".b", {co});
  };
  auto dense = [&](const std::string& name, int in, int out) {
    Tensor<S>& w = ps.create(name + ".w", {in, out});
    init_dense(w, init.child(name + ".w"));
    ps.create(name + ".b", {out});
  };

  // decoder
  int ci = cfg.latent + 2;
  for (int i = 0; i < cfg.dec_layers; ++i) {
    conv("dec.conv" + std::to_string(i), cfg.dec_width, ci, cfg.dec_kernel);
    ci = cfg.dec_width;
  }
  conv("dec.head", cfg.img_c + 1, ci, cfg.dec_kernel);

  // refinement
  ci = cfg.aux_image_channels();
  for (int i = 0; i < cfg.ref_layers; ++i) {
    conv("ref.conv" + std::to_string(i), cfg.ref_width, ci, cfg.ref_kernel);
    ci = cfg.ref_width;
  }
  dense("ref.mlp", cfg.ref_width, cfg.ref_mlp);
  const int joint = cfg.ref_mlp + 4 * cfg.latent;
  if (cfg.ref_lstm > 0) {
    Tensor<S>& wx = ps.create("ref.lstm.wx", {joint, 4 * cfg.ref_lstm});
    init_dense(wx, init.child("ref.lstm.wx"));
    Tensor<S>& wh = ps.create("ref.lstm.wh", {cfg.ref_lstm, 4 * cfg.ref_lstm});
    init_dense(wh, init.child("ref.lstm.wh"));
    ps.create("ref.lstm.b", {4 * cfg.ref_lstm});
    dense("ref.head", cfg.ref_lstm, 2 * cfg.latent);
  } else {
    dense("ref.head", joint, 2 * cfg.latent);
  }

  // trainable initial posterior, shared across slots
  ps.create("lambda0.mean", {cfg.latent});
  Tensor<S>& raw = ps.create("lambda0.raw_scale", {cfg.latent});
  const S r0 = static_cast<S>(softplus_inverse_one());
  for (auto& v : raw.data) v = r0;
}

}  // namespace slotvae
