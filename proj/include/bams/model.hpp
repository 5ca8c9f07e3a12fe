#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bams/ops.hpp"
#include "bams/rng.hpp"
#include "bams/tensor.hpp"

namespace bams {

struct ModelDims {
  int hidden = 64;     // LSTM hidden/cell width, also the message width
  int key_dim = 16;    // key/query projection width
  int value_dim = 64;  // value projection width; must equal hidden
  int map_channels = 4;
  int grid = 7;  // m; ties the encoder/decoder geometry to the environment
  int actions = 5;
  // Dimension whose square root scales the attention logits. The default
  // follows the hidden-state width; set to key_dim for the usual convention.
  int attn_divisor_dim = 64;

  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

// Transposed-conv geometry that maps a small seed plane back to m x m:
// seed -> mid with kernel k1, mid -> m with kernel k2 (stride 2, padding 1;
// kernel 4 doubles a side, kernel 3 doubles-minus-one).
struct DecoderGeometry {
  int seed_hw = 0;
  int mid_hw = 0;
  int k1 = 0;
  int k2 = 0;
};
DecoderGeometry decoder_geometry(int m);

// One parameter set shared by every agent.
struct Params {
  ModelDims dims;

  Tensor enc_conv1_w, enc_conv1_b;  // [8 x M x 3 x 3], [8]
  Tensor enc_conv2_w, enc_conv2_b;  // [16 x 8 x 3 x 3], [16]
  Tensor enc_fc_w, enc_fc_b;        // [d_h x 16*m*m], [d_h]

  // Gate blocks stacked in i, f, g, o order.
  Tensor lstm_wx;  // [4*d_h x 2*d_h], input is [encoded obs; attended messages]
  Tensor lstm_wh;  // [4*d_h x d_h]
  Tensor lstm_b;   // [4*d_h]

  Tensor attn_q_w, attn_q_b;  // [d_kq x d_h], [d_kq]
  Tensor attn_k_w;            // [d_kq x d_h], bias-free so zero messages map to zero
  Tensor attn_v_w;            // [d_v x d_h], bias-free

  Tensor actor_w, actor_b;    // [6 x d_h]: 5 move logits + 1 gate logit
  Tensor critic_w, critic_b;  // [1 x d_h]

  Tensor dec_fc_w, dec_fc_b;    // [16*seed^2 x d_h]
  Tensor dec_tc1_w, dec_tc1_b;  // [16 x 8 x k1 x k1], [8]
  Tensor dec_tc2_w, dec_tc2_b;  // [8 x M x k2 x k2], [M]

  std::vector<std::pair<std::string, Tensor>> named();
  std::vector<std::pair<std::string, Tensor>> named() const;
  Params clone() const;
  void zero_grad();
  bool all_finite() const;
  void add_grads_from(const Params& other);  // grad accumulation across workers
};

// Fan-in scaled uniform init; LSTM forget-gate bias starts at 1.
Params init_params(const ModelDims& dims, uint64_t seed);

// Per-agent recurrent context. outbox holds the message produced at the
// previous step (zero when the gate was closed), delivered this step.
struct AgentCore {
  Tensor h;
  Tensor cell;
  Tensor outbox;
};
AgentCore make_core(const ModelDims& dims);

struct PolicyOutput {
  Tensor action_probs;  // [5], sums to 1
  Tensor gate_prob;     // [1]
  Tensor value;         // [1]
};

// Conv stack (M->8->16, 3x3, stride 1, padding 1, relu) -> linear -> tanh.
Tensor encode_observation(const Tensor& obs, const Params& p);

// Scaled dot-product attention over the other agents' delayed messages.
// A fully gated inbox yields an exactly-zero aggregate: the bias-free
// key/value maps send zero messages to zero value vectors.
Tensor attention_aggregate(const Tensor& h_self, const std::vector<Tensor>& inbox,
                           const Params& p);

// Standard LSTM cell over the concatenated [encoded obs; aggregate] input;
// updates h and cell in place, leaves outbox untouched.
void lstm_step(const Tensor& enc_obs, const Tensor& attended, AgentCore& core, const Params& p);

PolicyOutput policy_forward(const Tensor& h, const Params& p);

struct SampledAction {
  int action = 4;
  int gate = 0;
  double logp = 0.0;  // log p(action) + log p(gate)
};
SampledAction sample_actions(const PolicyOutput& out, Rng& rng);
SampledAction greedy_actions(const PolicyOutput& out);  // argmax; gate iff prob >= 0.5

// mm = h * g: the hidden state when the gate is open, exact zeros otherwise.
Tensor gate_message(const Tensor& h, int gate);

// Linear seed plane -> two transposed convs mirroring the encoder widths ->
// sigmoid, shaped M x m x m.
Tensor decode_belief(const Tensor& h, const Params& p);

// Tracked log-probability and entropy terms for training.
Tensor action_log_prob(const PolicyOutput& out, int action, int gate);
Tensor policy_entropy(const PolicyOutput& out);  // action entropy + gate entropy

}  // namespace bams
