#include "scob/model/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <nlohmann/json.hpp>

#include "scob/util/errors.hpp"

namespace scob {

using nn::Matrix;
using nn::Var;

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(fmt::format("model.{} must be positive, got {}", name, v));
  };
  positive(image_side, "image_side");
  positive(patch_size, "patch_size");
  positive(encoder_dim, "encoder_dim");
  positive(encoder_heads, "encoder_heads");
  positive(decoder_dim, "decoder_dim");
  positive(decoder_heads, "decoder_heads");
  positive(mlp_ratio, "mlp_ratio");
  positive(projector_hidden, "projector_hidden");
  positive(projector_out, "projector_out");
  if (encoder_layers < 0 || decoder_layers < 0) throw ConfigError("model layer counts must be non-negative");
  if (image_side % patch_size != 0) {
    throw ConfigError(fmt::format("model.image_side {} is not divisible by model.patch_size {}", image_side, patch_size));
  }
  if (encoder_dim % encoder_heads != 0) throw ConfigError("model.encoder_dim must be divisible by model.encoder_heads");
  if (decoder_dim % decoder_heads != 0) throw ConfigError("model.decoder_dim must be divisible by model.decoder_heads");
  if (max_len < 8) throw ConfigError(fmt::format("model.max_len must be at least 8, got {}", max_len));
  if (vocab_size <= Vocab::kNumSpecials + Vocab::kCoordBins) {
    throw ConfigError(fmt::format("model.vocab_size {} leaves no room for characters", vocab_size));
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["image_side"] = image_side;
  j["patch_size"] = patch_size;
  j["encoder_dim"] = encoder_dim;
  j["encoder_layers"] = encoder_layers;
  j["encoder_heads"] = encoder_heads;
  j["encoder_position_embedding"] = encoder_position_embedding;
  j["decoder_dim"] = decoder_dim;
  j["decoder_layers"] = decoder_layers;
  j["decoder_heads"] = decoder_heads;
  j["mlp_ratio"] = mlp_ratio;
  j["vocab_size"] = vocab_size;
  j["max_len"] = max_len;
  j["projector_hidden"] = projector_hidden;
  j["projector_out"] = projector_out;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.image_side = j.at("image_side").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.encoder_dim = j.at("encoder_dim").get<int>();
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.encoder_heads = j.at("encoder_heads").get<int>();
    c.encoder_position_embedding = j.at("encoder_position_embedding").get<bool>();
    c.decoder_dim = j.at("decoder_dim").get<int>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.decoder_heads = j.at("decoder_heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.projector_hidden = j.at("projector_hidden").get<int>();
    c.projector_out = j.at("projector_out").get<int>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed model config: {}", e.what()));
  }
}

template <typename T>
Matrix<T> patchify(const Image& image, int patch_size) {
  if (patch_size <= 0 || image.width % patch_size != 0 || image.height % patch_size != 0) {
    throw InputError(fmt::format("image {}x{} cannot be cut into {}-pixel patches", image.width, image.height, patch_size));
  }
  const int gx = image.width / patch_size;
  const int gy = image.height / patch_size;
  Matrix<T> out(gx * gy, patch_size * patch_size * 3);
  for (int py = 0; py < gy; ++py) {
    for (int px = 0; px < gx; ++px) {
      const Eigen::Index row = py * gx + px;
      Eigen::Index col = 0;
      for (int y = 0; y < patch_size; ++y) {
        const std::uint8_t* src = &image.pixels[3 * (static_cast<std::size_t>(py * patch_size + y) * image.width +
                                                     static_cast<std::size_t>(px * patch_size))];
        for (int k = 0; k < patch_size * 3; ++k) out(row, col++) = static_cast<T>(src[k]) / T(127.5) - T(1);
      }
    }
  }
  return out;
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int de = config_.encoder_dim;
  const int dd = config_.decoder_dim;

  patch_embed_ = nn::Linear<T>(config_.patch_dim(), de, rng);
  patch_embed_.collect("encoder.patch_embed", params_);
  if (config_.encoder_position_embedding) {
    enc_pos_ = nn::make_param<T>(config_.num_patches(), de, 0.02, rng);
    params_.push_back({"encoder.position", enc_pos_});
  }
  for (int l = 0; l < config_.encoder_layers; ++l) {
    EncoderBlock b{nn::LayerNorm<T>(de), nn::LayerNorm<T>(de), nn::MultiHeadAttention<T>(de, de, config_.encoder_heads, rng),
                   nn::Mlp<T>(de, de * config_.mlp_ratio, rng)};
    const std::string p = fmt::format("encoder.blocks.{}", l);
    b.ln1.collect(p + ".ln1", params_);
    b.attn.collect(p + ".attn", params_);
    b.ln2.collect(p + ".ln2", params_);
    b.mlp.collect(p + ".mlp", params_);
    enc_blocks_.push_back(std::move(b));
  }
  enc_norm_ = nn::LayerNorm<T>(de);
  enc_norm_.collect("encoder.norm", params_);

  tok_embed_ = nn::make_param<T>(config_.vocab_size, dd, 0.02, rng);
  params_.push_back({"decoder.token_embed", tok_embed_});
  dec_pos_ = nn::make_param<T>(config_.max_len, dd, 0.02, rng);
  params_.push_back({"decoder.position", dec_pos_});
  for (int l = 0; l < config_.decoder_layers; ++l) {
    DecoderBlock b{nn::LayerNorm<T>(dd),
                   nn::LayerNorm<T>(dd),
                   nn::LayerNorm<T>(dd),
                   nn::MultiHeadAttention<T>(dd, dd, config_.decoder_heads, rng),
                   nn::MultiHeadAttention<T>(dd, de, config_.decoder_heads, rng),
                   nn::Mlp<T>(dd, dd * config_.mlp_ratio, rng)};
    const std::string p = fmt::format("decoder.blocks.{}", l);
    b.ln1.collect(p + ".ln1", params_);
    b.self_attn.collect(p + ".self_attn", params_);
    b.ln2.collect(p + ".ln2", params_);
    b.cross_attn.collect(p + ".cross_attn", params_);
    b.ln3.collect(p + ".ln3", params_);
    b.mlp.collect(p + ".mlp", params_);
    dec_blocks_.push_back(std::move(b));
  }
  dec_norm_ = nn::LayerNorm<T>(dd);
  dec_norm_.collect("decoder.norm", params_);
  head_ = nn::Linear<T>(dd, config_.vocab_size, rng);
  head_.collect("head", params_);
  proj1_ = nn::Linear<T>(dd, config_.projector_hidden, rng);
  proj1_.collect("projector.fc1", params_);
  proj2_ = nn::Linear<T>(config_.projector_hidden, config_.projector_out, rng);
  proj2_.collect("projector.fc2", params_);
}

template <typename T>
Var<T> Model<T>::encode(const Image& image) const {
  if (image.width != config_.image_side || image.height != config_.image_side) {
    throw InputError(fmt::format("encoder expects a {0}x{0} image, got {1}x{2}", config_.image_side, image.width,
                                 image.height));
  }
  Var<T> x = patch_embed_(Var<T>(patchify<T>(image, config_.patch_size)));
  if (enc_pos_.defined()) x = nn::add(x, enc_pos_);
  for (const auto& b : enc_blocks_) {
    const Var<T> h = b.ln1(x);
    x = nn::add(x, b.attn(h, h, false));
    x = nn::add(x, b.mlp(b.ln2(x)));
  }
  return enc_norm_(x);
}

template <typename T>
DecoderOutput<T> Model<T>::decode(const Var<T>& memory, std::span<const TokenId> input_ids) const {
  const auto n = static_cast<Eigen::Index>(input_ids.size());
  if (n == 0) throw InputError("decoder input is empty");
  if (n > config_.max_len) throw InputError(fmt::format("decoder input of {} tokens exceeds max_len {}", n, config_.max_len));
  std::vector<int> ids(input_ids.begin(), input_ids.end());
  for (int id : ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw RangeError(fmt::format("token id {} outside vocabulary of size {}", id, config_.vocab_size));
    }
  }
  std::vector<int> positions(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = static_cast<int>(i);

  Var<T> x = nn::add(nn::gather_rows(tok_embed_, std::span<const int>(ids)),
                     nn::gather_rows(dec_pos_, std::span<const int>(positions)));
  for (const auto& b : dec_blocks_) {
    const Var<T> h = b.ln1(x);
    x = nn::add(x, b.self_attn(h, h, true));
    x = nn::add(x, b.cross_attn(b.ln2(x), memory, false));
    x = nn::add(x, b.mlp(b.ln3(x)));
  }
  DecoderOutput<T> out;
  out.hidden = dec_norm_(x);
  out.logits = head_(out.hidden);
  return out;
}

template <typename T>
Var<T> Model<T>::project(const Var<T>& hidden) const {
  return nn::l2_normalize_rows(proj2_(nn::relu(proj1_(hidden))));
}

template <typename T>
std::vector<TokenId> Model<T>::generate(const Image& image, TokenId prompt, std::size_t max_len, TokenId eos) const {
  nn::NoGradGuard no_grad;
  const std::size_t limit = std::min<std::size_t>(max_len, static_cast<std::size_t>(config_.max_len));
  const Var<T> memory = encode(image);
  // The sequence opens with the prompt, which is itself the first target;
  // decoder inputs are always [prompt] + output so far.
  std::vector<TokenId> out{prompt};
  std::vector<TokenId> inputs{prompt, prompt};
  while (out.size() < limit) {
    const auto res = decode(memory, inputs);
    const auto last = res.logits.value().row(res.logits.rows() - 1);
    Eigen::Index best = 0;
    last.maxCoeff(&best);
    const auto tok = static_cast<TokenId>(best);
    out.push_back(tok);
    if (tok == eos) break;
    inputs.push_back(tok);
  }
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

template <typename T>
Var<T> Model<T>::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.var;
  }
  throw ConfigError(fmt::format("no parameter named '{}'", name));
}

template Matrix<float> patchify<float>(const Image&, int);
template Matrix<double> patchify<double>(const Image&, int);
template class Model<float>;
template class Model<double>;

}  // namespace scob
