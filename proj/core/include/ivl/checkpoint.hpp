#pragma once

#include <string>
#include <vector>

#include "ivl/probe.hpp"
#include "ivl/transformer.hpp"

namespace ivl {

// Checkpoint container: human-readable header (kind, config, tensor manifest
// with name/shape/dtype/offset, content checksum) followed by raw
// little-endian float32 arrays in manifest order.
void save_checkpoint(Transformer<float>& model, const std::string& path);
Transformer<float> load_checkpoint(const std::string& path);

void save_probe_checkpoint(GatedProbe<float>& probe, const std::string& path);
GatedProbe<float> load_probe_checkpoint(const std::string& path);

// Returns "transformer" or "probe" without loading tensor payloads.
std::string checkpoint_kind(const std::string& path);

enum class ValueInit { kPretrainedCheckpoint, kRandom };

// Fresh value networks always start with a zeroed unembedding so the initial
// delta logits are identically zero and the guided model equals the base.
Transformer<float> init_value_network(ValueInit mode, const TransformerConfig& config,
                                      uint64_t seed, const std::string& checkpoint_path = "");

}  // namespace ivl
