#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "saved/rng.hpp"
#include "saved/tensor.hpp"
#include "saved/tokenizer.hpp"

namespace saved {

/// Width multiplier of the per-layer position-wise feedforward block relative
/// to d_model (d_hidden sizes only the projection head).
inline constexpr std::size_t kFfnExpansion = 3;

struct EncoderConfig {
  std::size_t vocab_size = 2000;  // v
  std::size_t d_model = 64;
  std::size_t d_emb = 32;
  std::size_t d_hidden = 128;  // projection head hidden width
  std::size_t num_heads = 4;   // h
  std::size_t num_layers = 2;  // L
  std::size_t max_len = 256;   // n
  double dropout_rate = 0.1;
  // positional encoding is sinusoidal

  std::size_t head_dim() const { return d_model / num_heads; }
  std::size_t ffn_dim() const { return kFfnExpansion * d_model; }

  void validate() const {
    if (vocab_size < 1 || d_model < 1 || d_emb < 1 || d_hidden < 1 ||
        num_heads < 1 || num_layers < 1 || max_len < 1) {
      throw std::invalid_argument("EncoderConfig: all dimensions must be >= 1");
    }
    if (d_model % num_heads != 0) {
      throw std::invalid_argument("EncoderConfig: d_model must be divisible by num_heads");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw std::invalid_argument("EncoderConfig: dropout_rate must lie in [0,1)");
    }
  }
};

/// Scale used in the parameter-count reference check.
inline EncoderConfig paper_scale_config() {
  EncoderConfig cfg;
  cfg.vocab_size = 12000;
  cfg.d_model = 384;
  cfg.d_emb = 256;
  cfg.d_hidden = 1536;
  cfg.num_heads = 6;
  cfg.num_layers = 6;
  cfg.max_len = 1028;
  cfg.dropout_rate = 0.1;
  return cfg;
}

struct AttentionHeadParams {
  Tensor wq, bq, wk, bk, wv, bv, wo;  // wq/wk/wv: [d_model, dh]; wo: [dh, d_model]
};

struct TransformerLayerParams {
  Tensor ln1_gamma, ln1_beta;
  std::vector<AttentionHeadParams> heads;
  Tensor attn_bias;  // [d_model], added once after the per-head output sum
  Tensor ln2_gamma, ln2_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

/// All trainable weights.  The checkpoint payload and optimizer state follow
/// the order produced by named_parameters(): embedding; then per layer
/// ln1.{gamma,beta}, per head {wq,bq,wk,bk,wv,bv,wo}, attn.bias,
/// ln2.{gamma,beta}, ffn.{w1,b1,w2,b2}; then head.{w_in,b_in,w_out,b_out}.
struct ModelParameters {
  EncoderConfig config;
  Tensor embedding;  // [v, d_model]
  std::vector<TransformerLayerParams> layers;
  Tensor head_w_in, head_b_in;    // [d_model, d_hidden], [d_hidden]
  Tensor head_w_out, head_b_out;  // [d_hidden, d_emb], [d_emb]

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> named;
    named.emplace_back("embedding", embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      const std::string prefix = "layer" + std::to_string(l) + ".";
      named.emplace_back(prefix + "ln1.gamma", layer.ln1_gamma);
      named.emplace_back(prefix + "ln1.beta", layer.ln1_beta);
      for (std::size_t h = 0; h < layer.heads.size(); ++h) {
        const std::string hp = prefix + "attn.h" + std::to_string(h) + ".";
        const auto& head = layer.heads[h];
        named.emplace_back(hp + "wq", head.wq);
        named.emplace_back(hp + "bq", head.bq);
        named.emplace_back(hp + "wk", head.wk);
        named.emplace_back(hp + "bk", head.bk);
        named.emplace_back(hp + "wv", head.wv);
        named.emplace_back(hp + "bv", head.bv);
        named.emplace_back(hp + "wo", head.wo);
      }
      named.emplace_back(prefix + "attn.bias", layer.attn_bias);
      named.emplace_back(prefix + "ln2.gamma", layer.ln2_gamma);
      named.emplace_back(prefix + "ln2.beta", layer.ln2_beta);
      named.emplace_back(prefix + "ffn.w1", layer.ffn_w1);
      named.emplace_back(prefix + "ffn.b1", layer.ffn_b1);
      named.emplace_back(prefix + "ffn.w2", layer.ffn_w2);
      named.emplace_back(prefix + "ffn.b2", layer.ffn_b2);
    }
    named.emplace_back("head.w_in", head_w_in);
    named.emplace_back("head.b_in", head_b_in);
    named.emplace_back("head.w_out", head_w_out);
    named.emplace_back("head.b_out", head_b_out);
    return named;
  }

  void zero_grad() {
    for (auto& [name, tensor] : named_parameters()) {
      tensor.zero_grad();
    }
  }

  ModelParameters clone() const {
    ModelParameters copy;
    copy.config = config;
    copy.embedding = embedding.clone_detached();
    copy.layers.reserve(layers.size());
    for (const auto& layer : layers) {
      TransformerLayerParams lc;
      lc.ln1_gamma = layer.ln1_gamma.clone_detached();
      lc.ln1_beta = layer.ln1_beta.clone_detached();
      for (const auto& head : layer.heads) {
        lc.heads.push_back({head.wq.clone_detached(), head.bq.clone_detached(),
                            head.wk.clone_detached(), head.bk.clone_detached(),
                            head.wv.clone_detached(), head.bv.clone_detached(),
                            head.wo.clone_detached()});
      }
      lc.attn_bias = layer.attn_bias.clone_detached();
      lc.ln2_gamma = layer.ln2_gamma.clone_detached();
      lc.ln2_beta = layer.ln2_beta.clone_detached();
      lc.ffn_w1 = layer.ffn_w1.clone_detached();
      lc.ffn_b1 = layer.ffn_b1.clone_detached();
      lc.ffn_w2 = layer.ffn_w2.clone_detached();
      lc.ffn_b2 = layer.ffn_b2.clone_detached();
      copy.layers.push_back(std::move(lc));
    }
    copy.head_w_in = head_w_in.clone_detached();
    copy.head_b_in = head_b_in.clone_detached();
    copy.head_w_out = head_w_out.clone_detached();
    copy.head_b_out = head_b_out.clone_detached();
    return copy;
  }
};

/// Exact number of trainable scalars.
inline std::size_t count_parameters(const ModelParameters& params) {
  std::size_t total = 0;
  for (const auto& [name, tensor] : params.named_parameters()) {
    total += tensor.numel();
  }
  return total;
}

/// Weights ~ N(0, 0.02^2) truncated at two standard deviations, biases and
/// layer-norm shifts zero, layer-norm scales one.  Deterministic per seed.
inline ModelParameters init_parameters(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RandomStream rng(seed);
  auto weight = [&rng](std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    for (double& v : t.values()) {
      v = rng.truncated_normal(0.0, 0.02);
    }
    return t;
  };
  auto constant = [](std::vector<std::size_t> shape, double fill) {
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    for (double& v : t.values()) {
      v = fill;
    }
    return t;
  };

  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.head_dim();
  const std::size_t f = cfg.ffn_dim();

  ModelParameters params;
  params.config = cfg;
  params.embedding = weight({cfg.vocab_size, d});
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    TransformerLayerParams layer;
    layer.ln1_gamma = constant({d}, 1.0);
    layer.ln1_beta = constant({d}, 0.0);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      AttentionHeadParams head;
      head.wq = weight({d, dh});
      head.bq = constant({dh}, 0.0);
      head.wk = weight({d, dh});
      head.bk = constant({dh}, 0.0);
      head.wv = weight({d, dh});
      head.bv = constant({dh}, 0.0);
      head.wo = weight({dh, d});
      layer.heads.push_back(std::move(head));
    }
    layer.attn_bias = constant({d}, 0.0);
    layer.ln2_gamma = constant({d}, 1.0);
    layer.ln2_beta = constant({d}, 0.0);
    layer.ffn_w1 = weight({d, f});
    layer.ffn_b1 = constant({f}, 0.0);
    layer.ffn_w2 = weight({f, d});
    layer.ffn_b2 = constant({d}, 0.0);
    params.layers.push_back(std::move(layer));
  }
  params.head_w_in = weight({d, cfg.d_hidden});
  params.head_b_in = constant({cfg.d_hidden}, 0.0);
  params.head_w_out = weight({cfg.d_hidden, cfg.d_emb});
  params.head_b_out = constant({cfg.d_emb}, 0.0);
  return params;
}

/// Amplitude of the additive sinusoidal positions.  Matched to the weight
/// initialization scale: full-amplitude sinusoids would dwarf freshly
/// initialized token embeddings, leaving every pooled representation pointing
/// along the same shared positional mean and the contrastive gradient stuck
/// at the collapsed saddle.
inline constexpr double kPositionalScale = 0.02;

namespace detail {

inline Tensor sinusoidal_positions(std::size_t n, std::size_t d) {
  std::vector<double> values(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t k = 0; k < d; ++k) {
      const double exponent = static_cast<double>(k - k % 2) / static_cast<double>(d);
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, exponent);
      values[pos * d + k] =
          kPositionalScale * ((k % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor::from_values({n, d}, std::move(values));
}

}  // namespace detail

/// Forward pass over a batch of token sequences: embedding + sinusoidal
/// positions, num_layers pre-norm transformer blocks with pad-masked
/// attention, mask-aware mean pooling over the true (non-pad) positions, and
/// the two-layer projection head.  Returns a [B, d_emb] tensor connected to
/// the parameter graph (unless eval mode runs under NoGradGuard upstream).
inline Tensor encode_batch(const ModelParameters& params,
                           std::span<const TokenSequence> seqs, bool train,
                           RandomStream& rng) {
  const EncoderConfig& cfg = params.config;
  detail::require(!seqs.empty(), "encode_batch: empty batch");
  const std::size_t batch = seqs.size();
  const std::size_t n = cfg.max_len;
  const std::size_t d = cfg.d_model;

  std::vector<std::uint32_t> flat_ids;
  flat_ids.reserve(batch * n);
  for (const TokenSequence& seq : seqs) {
    detail::require(seq.ids.size() == n, "encode_batch: sequence length != max_len");
    detail::require(seq.true_length > 0, "encode_batch: empty (all-pad) sequence");
    detail::require(seq.true_length <= n, "encode_batch: true_length exceeds max_len");
    for (const std::uint32_t id : seq.ids) {
      detail::require(id < cfg.vocab_size, "encode_batch: token id >= vocab size");
      flat_ids.push_back(id);
    }
  }

  // pad-key mask for attention scores [B, n, n]: true where the key is pad
  auto attn_mask = std::make_shared<std::vector<std::uint8_t>>(batch * n * n, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = seqs[b].true_length;
    for (std::size_t q = 0; q < n; ++q) {
      for (std::size_t kpos = len; kpos < n; ++kpos) {
        (*attn_mask)[(b * n + q) * n + kpos] = 1;
      }
    }
  }

  Tensor x = embedding_lookup(params.embedding, flat_ids, {batch, n});
  x = add(x, detail::sinusoidal_positions(n, d));
  x = dropout(x, cfg.dropout_rate, train, rng);

  const double scale = std::sqrt(static_cast<double>(cfg.head_dim()));
  for (const TransformerLayerParams& layer : params.layers) {
    Tensor y = layer_norm_lastdim(x, layer.ln1_gamma, layer.ln1_beta);
    Tensor attn_out;
    bool first = true;
    for (const AttentionHeadParams& head : layer.heads) {
      Tensor q = add(matmul(y, head.wq), head.bq);
      Tensor k = add(matmul(y, head.wk), head.bk);
      Tensor v = add(matmul(y, head.wv), head.bv);
      Tensor scores = scalar_div(matmul(q, transpose_last2(k)), scale);
      scores = masked_fill(scores, attn_mask, -1e30);
      Tensor weights = softmax_lastdim(scores);
      Tensor context = matmul(weights, v);
      Tensor projected = matmul(context, head.wo);
      attn_out = first ? projected : add(attn_out, projected);
      first = false;
    }
    attn_out = add(attn_out, layer.attn_bias);
    attn_out = dropout(attn_out, cfg.dropout_rate, train, rng);
    x = add(x, attn_out);

    Tensor y2 = layer_norm_lastdim(x, layer.ln2_gamma, layer.ln2_beta);
    Tensor hidden = relu(add(matmul(y2, layer.ffn_w1), layer.ffn_b1));
    hidden = dropout(hidden, cfg.dropout_rate, train, rng);
    Tensor ffn_out = add(matmul(hidden, layer.ffn_w2), layer.ffn_b2);
    x = add(x, ffn_out);
  }

  // mask-aware mean pooling as a weighted sum: row b carries 1/true_length at
  // its non-pad positions, so padding length cannot influence the result
  std::vector<double> pool(batch * n, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = seqs[b].true_length;
    for (std::size_t pos = 0; pos < len; ++pos) {
      pool[b * n + pos] = 1.0 / static_cast<double>(len);
    }
  }
  Tensor pooled =
      mean(matmul(Tensor::from_values({batch, 1, n}, std::move(pool)), x), 1);

  Tensor hidden = relu(add(matmul(pooled, params.head_w_in), params.head_b_in));
  return add(matmul(hidden, params.head_w_out), params.head_b_out);
}

/// Embedding of a single table sequence (no gradient tracking).
inline std::vector<double> encode_table(const ModelParameters& params,
                                        const TokenSequence& seq, bool train,
                                        RandomStream& rng) {
  NoGradGuard no_grad;
  const Tensor z = encode_batch(params, std::span<const TokenSequence>(&seq, 1), train, rng);
  return z.values();
}

// ---------------------------------------------------------------------------
// checkpoint io: key=value header, then a BINARY marker and the parameter
// payload as little-endian 64-bit floats in named_parameters() order
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

inline void save_checkpoint(const ModelParameters& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  const EncoderConfig& cfg = params.config;
  out << "saved-checkpoint v1\n";
  out << "vocab_size=" << cfg.vocab_size << "\n";
  out << "d_model=" << cfg.d_model << "\n";
  out << "d_emb=" << cfg.d_emb << "\n";
  out << "d_hidden=" << cfg.d_hidden << "\n";
  out << "num_heads=" << cfg.num_heads << "\n";
  out << "num_layers=" << cfg.num_layers << "\n";
  out << "max_len=" << cfg.max_len << "\n";
  out << "dropout_rate=" << format_number(cfg.dropout_rate) << "\n";
  out << "param_count=" << count_parameters(params) << "\n";
  out << "BINARY\n";
  for (const auto& [name, tensor] : params.named_parameters()) {
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

inline ModelParameters load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line) || line != "saved-checkpoint v1") {
    throw std::runtime_error(path + ": not a checkpoint file");
  }
  EncoderConfig cfg;
  std::size_t expected_count = 0;
  while (std::getline(in, line)) {
    if (line == "BINARY") {
      break;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ": malformed checkpoint header line: " + line);
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "vocab_size") {
      cfg.vocab_size = std::stoull(value);
    } else if (key == "d_model") {
      cfg.d_model = std::stoull(value);
    } else if (key == "d_emb") {
      cfg.d_emb = std::stoull(value);
    } else if (key == "d_hidden") {
      cfg.d_hidden = std::stoull(value);
    } else if (key == "num_heads") {
      cfg.num_heads = std::stoull(value);
    } else if (key == "num_layers") {
      cfg.num_layers = std::stoull(value);
    } else if (key == "max_len") {
      cfg.max_len = std::stoull(value);
    } else if (key == "dropout_rate") {
      cfg.dropout_rate = std::stod(value);
    } else if (key == "param_count") {
      expected_count = std::stoull(value);
    } else {
      throw std::runtime_error(path + ": unknown checkpoint key: " + key);
    }
  }
  ModelParameters params = init_parameters(cfg, /*seed=*/0);
  if (expected_count != 0 && expected_count != count_parameters(params)) {
    throw std::runtime_error(path + ": parameter count does not match config");
  }
  for (auto& [name, tensor] : params.named_parameters()) {
    in.read(reinterpret_cast<char*>(tensor.values().data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    if (!in) {
      throw std::runtime_error(path + ": truncated checkpoint payload");
    }
  }
  return params;
}

}  // namespace saved
