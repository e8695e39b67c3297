#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scob/nn/layers.hpp"
#include "scob/render/image.hpp"
#include "scob/seqcodec/vocab.hpp"
#include "scob/util/errors.hpp"

namespace scob {

struct ModelConfig {
  int image_side = 128;
  int patch_size = 16;
  int encoder_dim = 64;
  int encoder_layers = 2;
  int encoder_heads = 4;
  // Learned per-patch position embedding. Off gives a purely local,
  // translation-equivariant patch embedding when encoder_layers is 0.
  bool encoder_position_embedding = true;
  int decoder_dim = 64;
  int decoder_layers = 2;
  int decoder_heads = 4;
  int mlp_ratio = 4;
  int vocab_size = 0;
  int max_len = 64;
  int projector_hidden = 128;
  int projector_out = 128;

  int grid_side() const { return image_side / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }

  void validate() const;  // throws ConfigError

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);  // throws ConfigError

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Image scaled to [-1, 1] and cut into row-major patches, one row per patch,
// each flattened in (y, x, channel) order.
template <typename T>
nn::Matrix<T> patchify(const Image& image, int patch_size);

template <typename T>
struct DecoderOutput {
  nn::Var<T> logits;  // N x vocab_size
  nn::Var<T> hidden;  // N x decoder_dim, the final-layer states
};

/// Patch-transformer encoder, causal transformer decoder with
/// cross-attention, linear token head and a two-layer projector.
///
/// T = float for training, double for gradient checks. Parameters are
/// leaves with stable dotted names; the graph is rebuilt per forward.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Throws InputError when the image is not image_side x image_side.
  nn::Var<T> encode(const Image& image) const;

  // Throws InputError for empty or over-long inputs and RangeError for ids
  // outside the vocabulary.
  DecoderOutput<T> decode(const nn::Var<T>& memory, std::span<const TokenId> input_ids) const;

  DecoderOutput<T> forward_teacher_forced(const Image& image, std::span<const TokenId> input_ids) const {
    return decode(encode(image), input_ids);
  }

  // Unit-norm rows; one per input row.
  nn::Var<T> project(const nn::Var<T>& hidden) const;

  // Greedy decoding. The result starts with `prompt` and ends at EOS or
  // when it reaches max_len tokens.
  std::vector<TokenId> generate(const Image& image, TokenId prompt, std::size_t max_len, TokenId eos) const;

  const nn::ParamList<T>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  nn::Var<T> parameter(std::string_view name) const;  // throws ConfigError

  // Copies values from another model with the same configuration.
  template <typename U>
  void copy_from(const Model<U>& other);

 private:
  struct EncoderBlock {
    nn::LayerNorm<T> ln1, ln2;
    nn::MultiHeadAttention<T> attn;
    nn::Mlp<T> mlp;
  };
  struct DecoderBlock {
    nn::LayerNorm<T> ln1, ln2, ln3;
    nn::MultiHeadAttention<T> self_attn, cross_attn;
    nn::Mlp<T> mlp;
  };

  ModelConfig config_;
  nn::Linear<T> patch_embed_;
  nn::Var<T> enc_pos_;
  std::vector<EncoderBlock> enc_blocks_;
  nn::LayerNorm<T> enc_norm_;
  nn::Var<T> tok_embed_;
  nn::Var<T> dec_pos_;
  std::vector<DecoderBlock> dec_blocks_;
  nn::LayerNorm<T> dec_norm_;
  nn::Linear<T> head_;
  nn::Linear<T> proj1_, proj2_;
  nn::ParamList<T> params_;
};

template <typename T>
template <typename U>
void Model<T>::copy_from(const Model<U>& other) {
  if (!(other.config() == config_)) throw ConfigError("copy_from: model configurations differ");
  const auto& src = other.parameters();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].var.mutable_value() = src.at(i).var.value().template cast<T>();
  }
}

}  // namespace scob
