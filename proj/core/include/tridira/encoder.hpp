#pragma once

#include <array>
#include <string>
#include <vector>

#include "tridira/params.hpp"
#include "tridira/types.hpp"

namespace tridira {

enum class Pooling { mean_masked, first_token };

struct EncoderConfig {
  int d_model = 128;
  std::array<int, 3> layers{4, 2, 2};  // N^t, N^a, N^v
  int shared_layers = 4;               // N_S
  std::array<int, 3> heads{8, 4, 4};
  int shared_heads = 4;
  int ffn_mult = 4;
  double dropout = 0.0;
  Pooling pooling = Pooling::mean_masked;
  int conv_kernel = 1;  // 1 (framewise projection) or 3

  void validate() const;
};

/// Constant per-batch geometry for one modality block: row validity, the
/// additive key mask for attention, and pooling weights.
struct BatchGeom {
  int batch = 0;
  int tau = 0;
  Vector row_mask;      // (B*tau), 1 for valid frames
  Matrix key_addmask;   // (B*tau) x tau, 0 keep / -1e9 drop
  Matrix pool_weights;  // B x tau

  static BatchGeom make(const UtteranceBatch::ModalityBlock& block, Pooling pooling);
};

Matrix sinusoidal_positions(int tau, int d_model);

/// Pre-norm Transformer encoder stack with key-masked self-attention.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParameterStore& store, const std::string& prefix, int d_model, int layers,
                     int heads, int ffn_mult, double dropout, rng::Stream& stream);

  /// x: (B*tau) x d_model. Appends per-layer attention maps ((B*tau*heads) x tau
  /// stacked head blocks) to attn_trace when provided.
  ad::Value forward(GraphContext& ctx, ad::Value x, const BatchGeom& geom,
                    std::vector<ad::Value>* attn_trace = nullptr) const;

  int layer_count() const { return static_cast<int>(layers_.size()); }

 private:
  struct Layer {
    ParamId wq, bq, wk, bk, wv, bv, wo, bo;
    ParamId ln1_g, ln1_b, ln2_g, ln2_b;
    ParamId w1, b1, w2, b2;
  };
  std::vector<Layer> layers_;
  int d_model_ = 0;
  int heads_ = 0;
  double dropout_ = 0.0;
};

struct EncodedModality {
  ad::Value tokens;  // (B*tau) x d_model, masked rows zeroed
  ad::Value pooled;  // B x d_model
};

struct EncoderTrace {
  std::array<std::vector<ad::Value>, 3> specific_attention;
  std::array<std::vector<ad::Value>, 3> shared_attention;
};

/// Full feature-extraction stack: per-modality 1-D conv to d_model, sinusoidal
/// positions, modality-specific encoders, one parameter-shared encoder, then
/// pooling to a single vector per modality.
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(ParameterStore& store, const EncoderConfig& cfg, std::array<int, 3> input_dims,
                 rng::Stream& stream);

  std::array<EncodedModality, 3> forward(GraphContext& ctx, const UtteranceBatch& batch,
                                         EncoderTrace* trace = nullptr) const;

  /// The 1-D convolution alone (framewise d^m -> d_model); exposed for tests.
  ad::Value conv_normalize(GraphContext& ctx, Modality m, ad::Value x,
                           const BatchGeom& geom) const;

  /// Runs one modality's tokens through the parameter-shared encoder.
  ad::Value encode_shared_tokens(GraphContext& ctx, ad::Value tokens, const BatchGeom& geom,
                                 std::vector<ad::Value>* attn = nullptr) const;

  ad::Value pool(GraphContext& ctx, ad::Value tokens, const BatchGeom& geom) const;

  const TransformerEncoder& specific_encoder(Modality m) const {
    return specific_[index_of(m)];
  }
  const TransformerEncoder& shared_encoder() const { return shared_; }
  const EncoderConfig& config() const { return cfg_; }
  std::array<int, 3> input_dims() const { return input_dims_; }

 private:
  EncoderConfig cfg_;
  std::array<int, 3> input_dims_{0, 0, 0};
  struct Conv {
    ParamId w;  // (kernel*d_in) x d_model
    ParamId b;  // 1 x d_model
  };
  std::array<Conv, 3> conv_;
  std::array<TransformerEncoder, 3> specific_;
  TransformerEncoder shared_;
};

/// Inverted-dropout mask as a tape op; identity when rate == 0 or not training.
ad::Value apply_dropout(GraphContext& ctx, ad::Value x, double rate);

}  // namespace tridira
