#include "bams/model.hpp"

#include <cmath>

namespace bams {

namespace {

// y = W x + b for a 1-D x, via a [n x 1] view.
Tensor linear(const Tensor& w, const Tensor& x, const Tensor& b) {
  Tensor col = ops::reshape(x, {x.shape()[0], 1});
  Tensor y = ops::reshape(ops::matmul(w, col), {w.shape()[0]});
  if (b.defined()) y = ops::add(y, b);
  return y;
}

Tensor linear_nobias(const Tensor& w, const Tensor& x) {
  Tensor col = ops::reshape(x, {x.shape()[0], 1});
  return ops::reshape(ops::matmul(w, col), {w.shape()[0]});
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> vals(numel(shape));
  for (auto& v : vals) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(vals), true);
}

}  // namespace

void ModelDims::validate() const {
  if (hidden < 1) throw ConfigError("model.hidden: must be positive");
  if (key_dim < 1) throw ConfigError("model.key_dim: must be positive");
  if (value_dim != hidden) {
    throw ConfigError("model.value_dim: must equal model.hidden (values aggregate into the LSTM input)");
  }
  if (map_channels < 1) throw ConfigError("model.map_channels: must be positive");
  if (actions < 2) throw ConfigError("model.actions: must be at least 2");
  if (attn_divisor_dim < 1) throw ConfigError("model.attn_divisor_dim: must be positive");
  if (grid < 2) throw ConfigError("model.grid: must be at least 2");
  decoder_geometry(grid);  // throws if the grid has no valid geometry
}

DecoderGeometry decoder_geometry(int m) {
  if (m < 2) throw ConfigError("model.grid: no decoder geometry for m=" + std::to_string(m));
  DecoderGeometry g;
  g.mid_hw = (m + 1) / 2;
  g.seed_hw = (g.mid_hw + 1) / 2;
  g.k2 = (m % 2 == 0) ? 4 : 3;
  g.k1 = (g.mid_hw % 2 == 0) ? 4 : 3;
  return g;
}

std::vector<std::pair<std::string, Tensor>> Params::named() {
  return {
      {"encoder.conv1.w", enc_conv1_w}, {"encoder.conv1.b", enc_conv1_b},
      {"encoder.conv2.w", enc_conv2_w}, {"encoder.conv2.b", enc_conv2_b},
      {"encoder.fc.w", enc_fc_w},       {"encoder.fc.b", enc_fc_b},
      {"lstm.wx", lstm_wx},             {"lstm.wh", lstm_wh},
      {"lstm.b", lstm_b},               {"attn.query.w", attn_q_w},
      {"attn.query.b", attn_q_b},       {"attn.key.w", attn_k_w},
      {"attn.value.w", attn_v_w},       {"actor.w", actor_w},
      {"actor.b", actor_b},             {"critic.w", critic_w},
      {"critic.b", critic_b},           {"decoder.fc.w", dec_fc_w},
      {"decoder.fc.b", dec_fc_b},       {"decoder.tconv1.w", dec_tc1_w},
      {"decoder.tconv1.b", dec_tc1_b},  {"decoder.tconv2.w", dec_tc2_w},
      {"decoder.tconv2.b", dec_tc2_b},
  };
}

std::vector<std::pair<std::string, Tensor>> Params::named() const {
  return const_cast<Params*>(this)->named();
}

Params Params::clone() const {
  Params c;
  c.dims = dims;
  auto src = named();
  Tensor Params::* members[] = {
      &Params::enc_conv1_w, &Params::enc_conv1_b, &Params::enc_conv2_w, &Params::enc_conv2_b,
      &Params::enc_fc_w,    &Params::enc_fc_b,    &Params::lstm_wx,     &Params::lstm_wh,
      &Params::lstm_b,      &Params::attn_q_w,    &Params::attn_q_b,    &Params::attn_k_w,
      &Params::attn_v_w,    &Params::actor_w,     &Params::actor_b,     &Params::critic_w,
      &Params::critic_b,    &Params::dec_fc_w,    &Params::dec_fc_b,    &Params::dec_tc1_w,
      &Params::dec_tc1_b,   &Params::dec_tc2_w,   &Params::dec_tc2_b,
  };
  for (size_t i = 0; i < src.size(); ++i) c.*members[i] = src[i].second.clone();
  return c;
}

void Params::zero_grad() {
  for (auto& [name, t] : named()) t.zero_grad();
}

bool Params::all_finite() const {
  for (const auto& [name, t] : named()) {
    if (!t.all_finite()) return false;
  }
  return true;
}

void Params::add_grads_from(const Params& other) {
  auto dst = named();
  auto src = other.named();
  for (size_t i = 0; i < dst.size(); ++i) {
    auto& dg = dst[i].second.grad();
    const auto& sg = src[i].second.grad();
    for (size_t j = 0; j < dg.size(); ++j) dg[j] += sg[j];
  }
}

Params init_params(const ModelDims& dims, uint64_t seed) {
  dims.validate();
  Rng rng(seed);
  const int dh = dims.hidden;
  const int dk = dims.key_dim;
  const int dv = dims.value_dim;
  const int M = dims.map_channels;
  const int m = dims.grid;
  const DecoderGeometry geo = decoder_geometry(m);

  auto layer = [&](Shape shape, int fan_in) { return uniform_tensor(std::move(shape), 1.0 / std::sqrt(fan_in), rng); };

  Params p;
  p.dims = dims;
  p.enc_conv1_w = layer({8, M, 3, 3}, M * 9);
  p.enc_conv1_b = layer({8}, M * 9);
  p.enc_conv2_w = layer({16, 8, 3, 3}, 8 * 9);
  p.enc_conv2_b = layer({16}, 8 * 9);
  p.enc_fc_w = layer({dh, 16 * m * m}, 16 * m * m);
  p.enc_fc_b = layer({dh}, 16 * m * m);
  p.lstm_wx = layer({4 * dh, 2 * dh}, 2 * dh);
  p.lstm_wh = layer({4 * dh, dh}, dh);
  p.lstm_b = layer({4 * dh}, dh);
  for (int i = dh; i < 2 * dh; ++i) p.lstm_b.values()[i] = 1.0;  // forget gate
  p.attn_q_w = layer({dk, dh}, dh);
  p.attn_q_b = layer({dk}, dh);
  p.attn_k_w = layer({dk, dh}, dh);
  p.attn_v_w = layer({dv, dh}, dh);
  p.actor_w = layer({dims.actions + 1, dh}, dh);
  p.actor_b = layer({dims.actions + 1}, dh);
  p.critic_w = layer({1, dh}, dh);
  p.critic_b = layer({1}, dh);
  p.dec_fc_w = layer({16 * geo.seed_hw * geo.seed_hw, dh}, dh);
  p.dec_fc_b = layer({16 * geo.seed_hw * geo.seed_hw}, dh);
  p.dec_tc1_w = layer({16, 8, geo.k1, geo.k1}, 16 * geo.k1 * geo.k1);
  p.dec_tc1_b = layer({8}, 16 * geo.k1 * geo.k1);
  p.dec_tc2_w = layer({8, M, geo.k2, geo.k2}, 8 * geo.k2 * geo.k2);
  p.dec_tc2_b = layer({M}, 8 * geo.k2 * geo.k2);

  for (auto& [name, t] : p.named()) t.set_name(name);
  return p;
}

AgentCore make_core(const ModelDims& dims) {
  AgentCore core;
  core.h = Tensor::zeros({dims.hidden});
  core.cell = Tensor::zeros({dims.hidden});
  core.outbox = Tensor::zeros({dims.hidden});
  return core;
}

Tensor encode_observation(const Tensor& obs, const Params& p) {
  const int m = p.dims.grid;
  if (obs.shape() != Shape{p.dims.map_channels, m, m}) {
    throw DimError("encode_observation: observation " + shape_str(obs.shape()) +
                   " does not match model grid " + std::to_string(m));
  }
  Tensor x = ops::relu(ops::bias_add_channel(ops::conv2d(obs, p.enc_conv1_w, 1, 1), p.enc_conv1_b));
  x = ops::relu(ops::bias_add_channel(ops::conv2d(x, p.enc_conv2_w, 1, 1), p.enc_conv2_b));
  x = ops::reshape(x, {16 * m * m});
  return ops::tanh(linear(p.enc_fc_w, x, p.enc_fc_b));
}

Tensor attention_aggregate(const Tensor& h_self, const std::vector<Tensor>& inbox,
                           const Params& p) {
  if (inbox.empty()) return Tensor::zeros({p.dims.value_dim});
  const double divisor = std::sqrt(static_cast<double>(p.dims.attn_divisor_dim));
  Tensor q = linear(p.attn_q_w, h_self, p.attn_q_b);
  Tensor q_row = ops::reshape(q, {1, p.dims.key_dim});
  std::vector<Tensor> scores;
  std::vector<Tensor> values;
  scores.reserve(inbox.size());
  values.reserve(inbox.size());
  for (const Tensor& msg : inbox) {
    if (msg.shape() != Shape{p.dims.hidden}) {
      throw DimError("attention_aggregate: message shape " + shape_str(msg.shape()));
    }
    Tensor k = linear_nobias(p.attn_k_w, msg);
    scores.push_back(ops::reshape(ops::matmul(q_row, ops::reshape(k, {p.dims.key_dim, 1})), {1}));
    values.push_back(linear_nobias(p.attn_v_w, msg));
  }
  Tensor weights = ops::softmax(ops::concat(scores), divisor);
  Tensor agg = ops::smul(ops::pick(weights, 0), values[0]);
  for (size_t j = 1; j < values.size(); ++j) {
    agg = ops::add(agg, ops::smul(ops::pick(weights, static_cast<int64_t>(j)), values[j]));
  }
  return agg;
}

void lstm_step(const Tensor& enc_obs, const Tensor& attended, AgentCore& core, const Params& p) {
  const int dh = p.dims.hidden;
  Tensor x = ops::concat({enc_obs, attended});
  Tensor gates = ops::add(linear(p.lstm_wx, x, p.lstm_b), linear_nobias(p.lstm_wh, core.h));
  Tensor in_gate = ops::sigmoid(ops::slice(gates, 0, dh));
  Tensor forget_gate = ops::sigmoid(ops::slice(gates, dh, dh));
  Tensor candidate = ops::tanh(ops::slice(gates, 2 * dh, dh));
  Tensor out_gate = ops::sigmoid(ops::slice(gates, 3 * dh, dh));
  core.cell = ops::add(ops::mul(forget_gate, core.cell), ops::mul(in_gate, candidate));
  core.h = ops::mul(out_gate, ops::tanh(core.cell));
}

PolicyOutput policy_forward(const Tensor& h, const Params& p) {
  Tensor logits = linear(p.actor_w, h, p.actor_b);
  PolicyOutput out;
  out.action_probs = ops::softmax(ops::slice(logits, 0, p.dims.actions), 1.0);
  out.gate_prob = ops::sigmoid(ops::slice(logits, p.dims.actions, 1));
  out.value = linear(p.critic_w, h, p.critic_b);
  return out;
}

SampledAction sample_actions(const PolicyOutput& out, Rng& rng) {
  SampledAction s;
  const auto& probs = out.action_probs.values();
  const double u = rng.uniform();
  double cdf = 0.0;
  s.action = static_cast<int>(probs.size()) - 1;
  for (size_t i = 0; i < probs.size(); ++i) {
    cdf += probs[i];
    if (u < cdf) {
      s.action = static_cast<int>(i);
      break;
    }
  }
  const double gp = out.gate_prob.values()[0];
  s.gate = rng.uniform() < gp ? 1 : 0;
  s.logp = std::log(probs[s.action]) + std::log(s.gate ? gp : 1.0 - gp);
  return s;
}

SampledAction greedy_actions(const PolicyOutput& out) {
  SampledAction s;
  const auto& probs = out.action_probs.values();
  s.action = 0;
  for (size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[s.action]) s.action = static_cast<int>(i);
  }
  const double gp = out.gate_prob.values()[0];
  s.gate = gp >= 0.5 ? 1 : 0;
  s.logp = std::log(probs[s.action]) + std::log(s.gate ? gp : 1.0 - gp);
  return s;
}

Tensor gate_message(const Tensor& h, int gate) {
  if (gate) return ops::scale(h, 1.0);
  return Tensor::zeros(h.shape());
}

Tensor decode_belief(const Tensor& h, const Params& p) {
  const int m = p.dims.grid;
  const DecoderGeometry geo = decoder_geometry(m);
  Tensor seed = ops::relu(linear(p.dec_fc_w, h, p.dec_fc_b));
  Tensor plane = ops::reshape(seed, {16, geo.seed_hw, geo.seed_hw});
  plane = ops::relu(
      ops::bias_add_channel(ops::conv_transpose2d(plane, p.dec_tc1_w, 2, 1), p.dec_tc1_b));
  plane = ops::bias_add_channel(ops::conv_transpose2d(plane, p.dec_tc2_w, 2, 1), p.dec_tc2_b);
  return ops::sigmoid(plane);
}

namespace {

// Keeps probabilities away from exact 0/1 before log(); a saturated sigmoid
// rounds to 1.0 in doubles well before the logits diverge.
Tensor prob_floor(const Tensor& p) { return ops::affine(p, 1.0 - 2e-12, 1e-12); }

}  // namespace

Tensor action_log_prob(const PolicyOutput& out, int action, int gate) {
  Tensor lp = ops::log(prob_floor(ops::pick(out.action_probs, action)));
  Tensor gp = gate ? out.gate_prob : ops::affine(out.gate_prob, -1.0, 1.0);
  return ops::add(lp, ops::log(prob_floor(gp)));
}

Tensor policy_entropy(const PolicyOutput& out) {
  Tensor pa = prob_floor(out.action_probs);
  Tensor action_h = ops::scale(ops::sum(ops::mul(pa, ops::log(pa))), -1.0);
  Tensor pg = prob_floor(out.gate_prob);
  Tensor qg = prob_floor(ops::affine(out.gate_prob, -1.0, 1.0));
  Tensor gate_h =
      ops::scale(ops::add(ops::mul(pg, ops::log(pg)), ops::mul(qg, ops::log(qg))), -1.0);
  return ops::add(action_h, gate_h);
}

}  // namespace bams
