#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "tkgr/tensor.hpp"

namespace tkgr {

// Trainable parameter blocks, in storage order.
enum class Block : std::size_t { kEntity = 0, kRelation = 1, kTransform = 2, kAttention = 3 };
inline constexpr std::size_t kNumBlocks = 4;

using ParamArrays = std::array<Tensor, kNumBlocks>;

const char* block_name(std::size_t block) noexcept;

// All state of the temporal encoder.
//   entity      |E| x d   base entity embeddings
//   relation    |R| x d   relation embeddings
//   transform   d x d     aggregation transform
//   attention   4d        attention vector over [target | neighbor | relation | time]
// The time-encoding frequencies and phases are fixed at initialization.
struct ModelParams {
  ParamArrays trainable;
  Tensor time_freq;
  Tensor time_phase;
  std::uint64_t seed = 0;

  Tensor& block(Block b) { return trainable[static_cast<std::size_t>(b)]; }
  const Tensor& block(Block b) const { return trainable[static_cast<std::size_t>(b)]; }
  Tensor& entity_emb() { return block(Block::kEntity); }
  const Tensor& entity_emb() const { return block(Block::kEntity); }
  Tensor& relation_emb() { return block(Block::kRelation); }
  const Tensor& relation_emb() const { return block(Block::kRelation); }
  Tensor& transform() { return block(Block::kTransform); }
  const Tensor& transform() const { return block(Block::kTransform); }
  Tensor& attention() { return block(Block::kAttention); }
  const Tensor& attention() const { return block(Block::kAttention); }

  std::size_t dim() const noexcept { return transform().rows(); }
  std::size_t num_entities() const noexcept { return entity_emb().rows(); }
  std::size_t num_relations() const noexcept { return relation_emb().rows(); }

  // Throws ShapeError/NumericError when dimensions disagree or values are not finite.
  void validate() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Seeded random initialization. Frequencies are log-spaced with a small
// seeded jitter; phases are uniform in [0, 2pi).
ModelParams init_params(std::size_t num_entities, std::size_t num_relations, std::size_t dim,
                        std::uint64_t seed);

ParamArrays zeros_like(const ParamArrays& p);
// y += alpha * x, block by block.
void axpy(double alpha, const ParamArrays& x, ParamArrays& y);
double squared_norm(const ParamArrays& p);
double squared_distance(const ParamArrays& a, const ParamArrays& b);
std::size_t parameter_count(const ParamArrays& p);

// JSON checkpoint; doubles are written with round-trip precision.
void write_checkpoint(const ModelParams& params, std::ostream& out);
ModelParams read_checkpoint(std::istream& in);
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace tkgr
