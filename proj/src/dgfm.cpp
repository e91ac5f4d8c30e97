#include "pqda/dgfm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pqda::dgfm {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// out = W x + b with the same accumulation order as Tape::affine.
void affine(const double* w, const double* b, std::size_t rows, std::size_t cols, const double* x, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = b[r] + ad::dot(w + r * cols, x, cols);
  }
}

} // namespace

void NetworkSpec::validate() const {
  if (window < 1 || obs_dim < 1 || gru_hidden < 1 || noise_dim < 1) {
    throw std::invalid_argument("NetworkSpec: window, obs_dim, gru_hidden and noise_dim must be >= 1");
  }
  if (dense_widths.empty()) throw std::invalid_argument("NetworkSpec: dense_widths must be non-empty");
  if (std::find(dense_widths.begin(), dense_widths.end(), 0u) != dense_widths.end()) {
    throw std::invalid_argument("NetworkSpec: dense widths must be positive");
  }
  if (dense_widths.back() != obs_dim) {
    throw std::invalid_argument("NetworkSpec: last dense width must equal obs_dim");
  }
}

Layout::Layout(const NetworkSpec& spec) {
  spec.validate();
  input = spec.obs_dim;
  hidden = spec.gru_hidden;
  std::size_t at = 0;
  w_ih = at;
  at += 3 * hidden * input;
  w_hh = at;
  at += 3 * hidden * hidden;
  b_ih = at;
  at += 3 * hidden;
  b_hh = at;
  at += 3 * hidden;
  std::size_t in = hidden + spec.noise_dim;
  for (std::size_t out : spec.dense_widths) {
    Dense d{at, at + out * in, in, out};
    at += out * in + out;
    dense.push_back(d);
    in = out;
  }
  total = at;
}

std::size_t param_count(const NetworkSpec& spec) { return Layout(spec).total; }

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("init_params: scale must be positive");
  ParamVector p(param_count(spec));
  auto eng = rng::stream(seed, {rng::prior_draw});
  rng::fill_normal(eng, p, scale);
  return p;
}

ForecastModel::ForecastModel(NetworkSpec spec, ParamVector params)
    : spec_(std::move(spec)), layout_(spec_), params_(std::move(params)) {
  if (params_.size() != layout_.total) {
    throw std::invalid_argument("ForecastModel: expected " + std::to_string(layout_.total) + " parameters, got " +
                                std::to_string(params_.size()));
  }
}

Forecaster::Forecaster(const NetworkSpec& spec)
    : spec_(spec), layout_(spec), h_(spec.gru_hidden), gi_(3 * spec.gru_hidden), gh_(3 * spec.gru_hidden) {
  std::size_t widest = spec.gru_hidden + spec.noise_dim;
  for (auto w : spec.dense_widths) widest = std::max(widest, w);
  a_.resize(widest);
  b_.resize(widest);
}

void Forecaster::encode(std::span<const double> params, std::span<const double> history, std::span<double> hidden) {
  const std::size_t H = layout_.hidden, I = layout_.input;
  if (params.size() != layout_.total) throw std::invalid_argument("encode: parameter length mismatch");
  if (history.size() != spec_.window * I) throw std::invalid_argument("encode: history must be window x obs_dim");
  if (hidden.size() != H) throw std::invalid_argument("encode: hidden buffer size mismatch");
  const double* p = params.data();
  std::fill(h_.begin(), h_.end(), 0.0);
  for (std::size_t s = 0; s < spec_.window; ++s) {
    const double* x = history.data() + s * I;
    for (std::size_t g = 0; g < 3; ++g) {
      affine(p + layout_.w_ih + g * H * I, p + layout_.b_ih + g * H, H, I, x, gi_.data() + g * H);
      affine(p + layout_.w_hh + g * H * H, p + layout_.b_hh + g * H, H, H, h_.data(), gh_.data() + g * H);
    }
    for (std::size_t k = 0; k < H; ++k) {
      const double r = sigmoid(gi_[k] + gh_[k]);
      const double z = sigmoid(gi_[H + k] + gh_[H + k]);
      const double n = std::tanh(gi_[2 * H + k] + r * gh_[2 * H + k]);
      h_[k] = n + z * (h_[k] - n);
    }
  }
  std::copy(h_.begin(), h_.end(), hidden.begin());
}

void Forecaster::decode(std::span<const double> params, std::span<const double> hidden,
                        std::span<const double> noise, std::span<double> out) {
  if (noise.size() != spec_.noise_dim) throw std::invalid_argument("decode: noise must have noise_dim entries");
  if (hidden.size() != layout_.hidden) throw std::invalid_argument("decode: hidden size mismatch");
  if (out.size() != spec_.obs_dim) throw std::invalid_argument("decode: output size mismatch");
  const double* p = params.data();
  std::copy(hidden.begin(), hidden.end(), a_.begin());
  std::copy(noise.begin(), noise.end(), a_.begin() + static_cast<std::ptrdiff_t>(hidden.size()));
  for (std::size_t l = 0; l < layout_.dense.size(); ++l) {
    const auto& d = layout_.dense[l];
    affine(p + d.w, p + d.b, d.out, d.in, a_.data(), b_.data());
    if (l + 1 < layout_.dense.size()) {
      for (std::size_t k = 0; k < d.out; ++k) a_[k] = std::tanh(b_[k]);
    }
  }
  std::copy_n(b_.begin(), spec_.obs_dim, out.begin());
}

void Forecaster::simulate(std::span<const double> params, std::span<const double> history,
                          std::span<const double> noise, std::span<double> out) {
  std::vector<double> hidden(layout_.hidden);
  encode(params, history, hidden);
  decode(params, hidden, noise, out);
}

std::vector<double> simulate_forecast(const ForecastModel& model, std::span<const double> history,
                                      std::span<const double> noise) {
  Forecaster f(model.spec());
  std::vector<double> out(model.spec().obs_dim);
  f.simulate(model.params(), history, noise, out);
  return out;
}

Matrix forecast_ensemble(const ForecastModel& model, std::span<const double> history, std::size_t m,
                         rng::Engine& rng) {
  if (m < 2) throw std::invalid_argument("forecast_ensemble: need at least 2 draws");
  const auto& spec = model.spec();
  Forecaster f(spec);
  std::vector<double> hidden(spec.gru_hidden), noise(spec.noise_dim);
  f.encode(model.params(), history, hidden);
  Matrix out(m, spec.obs_dim);
  for (std::size_t j = 0; j < m; ++j) {
    rng::fill_normal(rng, noise);
    f.decode(model.params(), hidden, noise, out.row(j));
  }
  return out;
}

ad::Var record_encode(ad::Tape& tape, const NetworkSpec& spec, const Layout& layout,
                      std::span<const double> history) {
  const std::size_t H = layout.hidden, I = layout.input;
  if (history.size() != spec.window * I) throw std::invalid_argument("record_encode: history must be window x obs_dim");
  const std::vector<double> zeros(H, 0.0);
  ad::Var h = tape.input(zeros);
  for (std::size_t s = 0; s < spec.window; ++s) {
    ad::Var x = tape.input(history.subspan(s * I, I));
    auto gate_in = [&](std::size_t g) { return tape.affine(layout.w_ih + g * H * I, layout.b_ih + g * H, H, I, x); };
    auto gate_h = [&](std::size_t g) { return tape.affine(layout.w_hh + g * H * H, layout.b_hh + g * H, H, H, h); };
    ad::Var r = tape.sigmoid(tape.add(gate_in(0), gate_h(0)));
    ad::Var z = tape.sigmoid(tape.add(gate_in(1), gate_h(1)));
    ad::Var n = tape.tanh(tape.add(gate_in(2), tape.mul(r, gate_h(2))));
    h = tape.add(n, tape.mul(z, tape.sub(h, n)));
  }
  return h;
}

ad::Var record_decode(ad::Tape& tape, const Layout& layout, ad::Var hidden, std::span<const double> noise) {
  const ad::Var parts[2] = {hidden, tape.input(noise)};
  ad::Var a = tape.concat(parts);
  for (std::size_t l = 0; l < layout.dense.size(); ++l) {
    const auto& d = layout.dense[l];
    a = tape.affine(d.w, d.b, d.out, d.in, a);
    if (l + 1 < layout.dense.size()) a = tape.tanh(a);
  }
  return a;
}

} // namespace pqda::dgfm
