#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

#include "clp/backdoor.hpp"
#include "clp/clp.hpp"
#include "clp/model_graph.hpp"

namespace clp {

struct TacRecord {
  std::size_t layer = 0;
  std::size_t channel = 0;
  float tac = 0.0f;
};

// Mean over `data` of ||F_k(x) - F_k(trigger(x))||_2, the norm taken over the
// flattened conv output map. The model is fused first, so layer indices refer
// to fuse_conv_bn(model). `layers` selects conv layers of the fused graph;
// empty means all. Throws ConfigError on an empty dataset.
std::vector<TacRecord> compute_tac(const ModelGraph& model, const Dataset& data,
                                   const PoisonSpec& spec, const std::vector<std::size_t>& layers = {});

// Two-pass Pearson correlation; nullopt when n < 3 or either side is constant.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

struct LayerCorrelation {
  std::size_t layer = 0;
  std::size_t channels = 0;
  std::optional<double> r;  // uclc vs tac
};

// Joins on (layer, channel); throws ConfigError if the key sets differ.
std::vector<LayerCorrelation> correlation_report(const std::vector<ChannelStat>& stats,
                                                 const std::vector<TacRecord>& tac);

// Fraction of pruned channels whose TAC is in the top tenth (rounded up) of
// their layer. nullopt if nothing was pruned.
std::optional<double> pruned_top_decile_fraction(const PruneIndexSet& idx,
                                                 const std::vector<TacRecord>& tac);

struct SweepPoint {
  float u = 0.0f;
  double acc = 0.0;
  double asr = 0.0;
  std::size_t pruned_count = 0;
};

// clp_defend at each u from the original weights, evaluated on clean_test and
// its triggered copy. Throws ConfigError if u_values is empty.
std::vector<SweepPoint> sweep_u(const ModelGraph& model, const Dataset& clean_test,
                                const PoisonSpec& spec, const std::vector<float>& u_values);

// CSV writers; headers are fixed.
void write_tac_report(std::ostream& out, const std::vector<TacRecord>& tac);
void write_joined_report(std::ostream& out, const PruneIndexSet& idx, const std::vector<TacRecord>& tac);
void write_correlation_summary(std::ostream& out, const std::vector<LayerCorrelation>& rows);
void write_sweep_report(std::ostream& out, const std::vector<SweepPoint>& points);

}  // namespace clp
