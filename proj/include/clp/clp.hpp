#pragma once

#include <cstddef>
#include <iosfwd>
#include <set>
#include <utility>
#include <vector>

#include "clp/model_graph.hpp"

namespace clp {

struct ChannelStat {
  std::size_t layer = 0;
  std::size_t channel = 0;
  float sigma = 0.0f;  // spectral norm of the channel's C x (kh*kw) kernel matrix
  float uclc = 0.0f;   // sigma times the whole-layer norms of all earlier convs
};

struct LayerThreshold {
  std::size_t layer = 0;
  float mu = 0.0f;
  float s = 0.0f;  // population standard deviation
  float u = 0.0f;
  float cutoff = 0.0f;  // mu + u * s
};

struct PruneIndexSet {
  std::set<Probe> entries;  // (layer, channel)
  std::vector<LayerThreshold> thresholds;
  std::vector<ChannelStat> stats;

  bool contains(std::size_t layer, std::size_t channel) const {
    return entries.count({layer, channel}) != 0;
  }
};

// Per output channel of every conv layer. uclc is left at 0. Throws
// StructureError if the model still has batchnorm layers.
std::vector<ChannelStat> channel_sigma(const ModelGraph& fused);

// Spectral norm of a conv weight reshaped to K x (C*kh*kw).
float layer_sigma(const Conv& conv);

// channel_sigma() with uclc filled in.
std::vector<ChannelStat> uclc(const ModelGraph& fused);

// Per layer: prune channels with sigma > mu + u*s. Throws NumericalError on a
// non-finite sigma or u.
PruneIndexSet select_prune_set(const std::vector<ChannelStat>& stats, float u);

// Zeroes the kernel slice and bias of every entry. Throws IndexError if an
// entry is not a conv channel of `fused`.
ModelGraph apply_prune(const ModelGraph& fused, const PruneIndexSet& idx);

// Fuse, score, select, prune.
std::pair<ModelGraph, PruneIndexSet> clp_defend(const ModelGraph& model, float u);

// Header: layer,channel,sigma,uclc,cutoff,pruned
void write_prune_report(std::ostream& out, const PruneIndexSet& idx);

}  // namespace clp
