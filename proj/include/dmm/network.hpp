#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmm/attributes.hpp"
#include "dmm/layers.hpp"
#include "dmm/spp.hpp"
#include "dmm/tensor.hpp"

namespace dmm {

/// Stack of conv(k, stride 1, padding) -> ReLU -> maxpool(pool, pool) blocks.
struct BackboneConfig {
  std::size_t in_channels = 1;
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t padding = 1;
  std::size_t pool = 2;

  std::size_t out_channels() const { return channels.empty() ? in_channels : channels.back(); }
  bool operator==(const BackboneConfig&) const = default;
};

/// Hidden widths of the fully connected heads. The defaults are the
/// full-size widths (1024; 2048 -> 1024; 1024).
struct HeadWidths {
  std::size_t objective_hidden = 1024;
  std::size_t subjective_hidden1 = 2048;
  std::size_t subjective_hidden2 = 1024;
  std::size_t landmark_hidden = 1024;

  static HeadWidths desk() { return {64, 128, 64, 64}; }
  bool operator==(const HeadWidths&) const = default;
};

struct NetworkConfig {
  AttributeSpec attributes = AttributeSpec::desk_default();
  BackboneConfig backbone;
  HeadWidths heads;
  std::size_t landmarks = 4;  // T; the landmark head emits 2T values
  bool grouping = true;
  std::uint64_t seed = 1;

  bool operator==(const NetworkConfig&) const = default;
};

/// SPP followed by a FC/ReLU stack. Attribute branches carry the canonical
/// attribute index of each output column; the landmark branch carries none.
struct Branch {
  std::string name;
  SppConfig spp;
  std::vector<Layer> layers;
  std::vector<std::size_t> attributes;

  std::size_t fc_count() const;
  std::size_t output_dim() const;
};

struct NetworkOutput {
  std::vector<Tensor> branch_scores;  // one [N, J_branch] per attribute branch
  Tensor landmarks;                   // [N, 2T]
  Tensor attributes;                  // [N, J] in AttributeSpec order
};

/// Activations kept by forward() for backward().
struct ForwardCache {
  std::vector<Tensor> backbone_inputs;
  Tensor features;
  std::vector<Tensor> spp_outputs;                // per branch, attribute branches first then landmarks
  std::vector<std::vector<Tensor>> head_inputs;  // per branch, input of each head layer
};

struct BackwardResult {
  Tensor feature_grad;  // gradient at the shared backbone output
  Tensor input_grad;    // gradient at the image; empty unless requested
};

class DmmNetwork {
 public:
  explicit DmmNetwork(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  std::size_t feature_channels() const { return config_.backbone.out_channels(); }
  const std::vector<Layer>& backbone() const { return backbone_; }
  const std::vector<Branch>& attribute_branches() const { return attribute_branches_; }
  const Branch& landmark_branch() const { return landmark_branch_; }

  /// Branch holding `group`; only valid when grouping is on.
  const Branch& branch(AttributeGroup group) const;

  /// images: [C,H,W] or [N,C,H,W]. Outputs are always batched. Raw scores,
  /// no squashing.
  NetworkOutput forward(const Tensor& images, ForwardCache* cache = nullptr) const;

  /// Accumulates parameter gradients. `branch_grads` follows
  /// attribute_branches(); an empty `landmark_grad` skips that branch.
  BackwardResult backward(const ForwardCache& cache, const std::vector<Tensor>& branch_grads,
                          const Tensor& landmark_grad, bool want_input_grad = false);

  /// Same as above with a single [N,J] attribute gradient in canonical order.
  BackwardResult backward_attributes(const ForwardCache& cache, const Tensor& attribute_grad,
                                     const Tensor& landmark_grad, bool want_input_grad = false);

  /// Parameterized layers in canonical order: backbone, attribute branches, landmarks.
  std::vector<Layer*> parameter_layers();
  std::vector<const Layer*> parameter_layers() const;
  std::size_t backbone_parameter_layer_count() const;
  std::size_t parameter_count() const;

  void zero_grad();
  void sgd_step(const SgdOptions& options, bool freeze_backbone = false);

 private:
  NetworkConfig config_;
  std::vector<Layer> backbone_;
  std::vector<Branch> attribute_branches_;
  Branch landmark_branch_;
};

/// Splits a [N,J] canonical-order matrix into per-branch column blocks.
std::vector<Tensor> split_by_branch(const DmmNetwork& net, const Tensor& attributes);

// Checkpoint: "DMMCKPT1" magic, format version, the network config, then every
// parameter tensor (weights then bias, canonical layer order) as rank, dims
// and raw little-endian doubles.
std::vector<std::uint8_t> serialize_checkpoint(const DmmNetwork& net);
DmmNetwork deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const DmmNetwork& net, const std::filesystem::path& path);
DmmNetwork load_checkpoint(const std::filesystem::path& path);

}  // namespace dmm
