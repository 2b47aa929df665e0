#pragma once
// Named parameter tensors, their graph bindings, Adam with global-norm
// clipping, and the binary checkpoint format. std::map keys keep every
// iteration in sorted name order, which is what makes gradient accumulation
// and serialization deterministic.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "slotvae/graph.hpp"
#include "slotvae/random.hpp"
#include "slotvae/tensor.hpp"

namespace slotvae {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and dataset formats assume a little-endian host");

template <typename S>
using GradMap = std::map<std::string, Tensor<S>>;

template <typename S>
struct ParamStore {
  std::map<std::string, Tensor<S>> values;

  bool has(const std::string& name) const { return values.count(name) != 0; }
  Tensor<S>& at(const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) fail("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }
  Tensor<S>& create(const std::string& name, Shape shape) {
    if (has(name)) fail("parameter '" + name + "' already exists");
    return values.emplace(name, Tensor<S>(std::move(shape))).first->second;
  }
  std::int64_t total_elems() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : values) n += v.numel();
    return n;
  }
};

// Records which graph leaf each parameter was bound to, so gradients can be
// read back by name after backward(). A binding belongs to exactly one graph:
// repeated requests for the same name return the same leaf, which is what
// lets a parameter used several times (decoder weights across refinement
// iterations) accumulate all of its gradient on a single node.
template <typename S>
struct ParamBinding {
  std::map<std::string, int> node_of;

  Var<S> operator()(Graph<S>& g, const ParamStore<S>& ps,
                    const std::string& name) {
    auto it = node_of.find(name);
    if (it != node_of.end()) return Var<S>{&g, it->second};
    return bind(g, ps, name);
  }

  Var<S> bind(Graph<S>& g, const ParamStore<S>& ps, const std::string& name) {
    Var<S> v = g.leaf(ps.at(name), /*trainable=*/true);
    node_of[name] = v.id;
    return v;
  }

  // accum[name] += scale * grad(name); parameters the loss never touched
  // contribute zero. Iteration is in sorted name order.
  void accumulate_grads(const Graph<S>& g, GradMap<S>& accum, S scale) const {
    for (const auto& [name, id] : node_of) {
      auto it = accum.find(name);
      if (it == accum.end())
        it = accum.emplace(name, Tensor<S>(g.value(id).shape)).first;
      if (!g.has_grad(id)) continue;
      const Tensor<S>& gr = g.grad(id);
      Tensor<S>& dst = it->second;
      for (std::int64_t i = 0; i < gr.numel(); ++i) dst[i] += scale * gr[i];
    }
  }
};

// ============================ initialization ============================

template <typename S>
void glorot_uniform(Tensor<S>& t, std::int64_t fan_in, std::int64_t fan_out, Rng rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  rng.fill_uniform(t, -limit, limit);
}

// conv weight [Co,Ci,kh,kw]
template <typename S>
void init_conv(Tensor<S>& w, Rng rng) {
  const std::int64_t rf = static_cast<std::int64_t>(w.shape[2]) * w.shape[3];
  glorot_uniform(w, w.shape[1] * rf, w.shape[0] * rf, rng);
}

// dense weight [in,out]
template <typename S>
void init_dense(Tensor<S>& w, Rng rng) {
  glorot_uniform(w, w.shape[0], w.shape[1], rng);
}

// ========================== Adam + gradient clip ==========================

template <typename S>
struct AdamState {
  std::map<std::string, Tensor<S>> m1, m2;
  std::int64_t step = 0;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Returns the pre-clip global L2 norm; grads are rescaled in place when the
// norm exceeds max_norm.
template <typename S>
double clip_global_norm(GradMap<S>& grads, double max_norm) {
  double ss = 0;
  for (const auto& [k, t] : grads)
    for (S v : t.data) ss += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& [k, t] : grads)
      for (auto& v : t.data) v *= scale;
  }
  return norm;
}

template <typename S>
void adam_step(ParamStore<S>& params, const GradMap<S>& grads, AdamState<S>& st,
               const AdamConfig& cfg) {
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (const auto& [name, g] : grads) {
    Tensor<S>& p = params.at(name);
    if (p.shape != g.shape)
      fail("adam: gradient shape " + shape_str(g.shape) + " != param shape " +
           shape_str(p.shape) + " for '" + name + "'");
    auto m1 = st.m1.find(name);
    if (m1 == st.m1.end()) m1 = st.m1.emplace(name, Tensor<S>(p.shape)).first;
    auto m2 = st.m2.find(name);
    if (m2 == st.m2.end()) m2 = st.m2.emplace(name, Tensor<S>(p.shape)).first;
    Tensor<S>& m = m1->second;
    Tensor<S>& v = m2->second;
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      m[i] = b1 * m[i] + (S(1) - b1) * g[i];
      v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      p[i] -= static_cast<S>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// ============================= checkpoints =============================
//
// Layout (all integers little-endian):
//   magic "IODC" | u32 version=1 | u32 entry_count
//   entry: u16 name_len | name bytes | u8 rank | u32 dim[rank] | f32 payload
// Entries hold every parameter in sorted name order; when optimizer state is
// saved, each parameter is followed by "<name>.m1" / "<name>.m2" and the file
// ends with the rank-0 scalar "adam.step".

namespace detail {

inline void io_fail(const std::string& path, const std::string& what) {
  fail("checkpoint '" + path + "': " + what);
}

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return f.gcount() == sizeof(T);
}

template <typename S>
void write_entry(std::ofstream& f, const std::string& name, const Tensor<S>& t) {
  write_pod<std::uint16_t>(f, static_cast<std::uint16_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<std::uint8_t>(f, static_cast<std::uint8_t>(t.rank()));
  for (int d : t.shape) write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(d));
  for (S v : t.data) write_pod<float>(f, static_cast<float>(v));
}

template <typename S>
bool read_entry(std::ifstream& f, std::string& name, Tensor<S>& t) {
  std::uint16_t nl;
  if (!read_pod(f, nl)) return false;
  name.resize(nl);
  f.read(name.data(), nl);
  if (f.gcount() != nl) return false;
  std::uint8_t rank;
  if (!read_pod(f, rank)) return false;
  Shape sh(rank);
  for (int i = 0; i < rank; ++i) {
    std::uint32_t d;
    if (!read_pod(f, d)) return false;
    sh[i] = static_cast<int>(d);
  }
  t = Tensor<S>(sh);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    float v;
    if (!read_pod(f, v)) return false;
    t[i] = static_cast<S>(v);
  }
  return true;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& params,
                     const AdamState<S>* opt = nullptr) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) detail::io_fail(path, "cannot open for writing");
    f.write("IODC", 4);
    detail::write_pod<std::uint32_t>(f, 1);
    std::uint32_t count = static_cast<std::uint32_t>(params.values.size());
    if (opt)
      count += static_cast<std::uint32_t>(opt->m1.size() + opt->m2.size()) + 1;
    detail::write_pod(f, count);
    for (const auto& [name, t] : params.values) {
      detail::write_entry(f, name, t);
      if (opt) {
        auto i1 = opt->m1.find(name);
        if (i1 != opt->m1.end()) detail::write_entry(f, name + ".m1", i1->second);
        auto i2 = opt->m2.find(name);
        if (i2 != opt->m2.end()) detail::write_entry(f, name + ".m2", i2->second);
      }
    }
    if (opt)
      detail::write_entry(f, "adam.step",
                          Tensor<S>::scalar(static_cast<S>(opt->step)));
    if (!f) detail::io_fail(path, "write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    detail::io_fail(path, "rename from temporary failed");
}

template <typename S>
void load_checkpoint(const std::string& path, ParamStore<S>& params,
                     AdamState<S>* opt = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) detail::io_fail(path, "cannot open");
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "IODC", 4) != 0)
    detail::io_fail(path, "bad magic (not a checkpoint file)");
  std::uint32_t version;
  if (!detail::read_pod(f, version)) detail::io_fail(path, "truncated header");
  if (version != 1)
    detail::io_fail(path, "unsupported version " + std::to_string(version));
  std::uint32_t count;
  if (!detail::read_pod(f, count)) detail::io_fail(path, "truncated header");
  params.values.clear();
  if (opt) {
    opt->m1.clear();
    opt->m2.clear();
    opt->step = 0;
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    Tensor<S> t;
    if (!detail::read_entry(f, name, t))
      detail::io_fail(path, "truncated at entry " + std::to_string(i) + " of " +
                                std::to_string(count));
    const auto ends_with = [&](const char* suf) {
      const size_t n = std::strlen(suf);
      return name.size() > n && name.compare(name.size() - n, n, suf) == 0;
    };
    if (name == "adam.step") {
      if (opt) opt->step = static_cast<std::int64_t>(t[0]);
    } else if (ends_with(".m1")) {
      if (opt) opt->m1.emplace(name.substr(0, name.size() - 3), std::move(t));
    } else if (ends_with(".m2")) {
      if (opt) opt->m2.emplace(name.substr(0, name.size() - 3), std::move(t));
    } else {
      params.values.emplace(std::move(name), std::move(t));
    }
  }
}

}  // namespace slotvae
