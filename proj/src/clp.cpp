#include "clp/clp.hpp"

#include <cmath>
#include <map>
#include <ostream>

#include "clp/errors.hpp"
#include "clp/parallel.hpp"
#include "clp/format.hpp"

namespace clp {

namespace {

void require_fused(const ModelGraph& model) {
  if (has_batchnorm(model)) {
    throw StructureError("model has unfused batchnorm layers; call fuse_conv_bn first");
  }
}

}  // namespace

std::vector<ChannelStat> channel_sigma(const ModelGraph& fused) {
  require_fused(fused);
  std::vector<ChannelStat> stats;
  for (std::size_t l : fused.conv_layers()) {
    const Conv& conv = fused.layer(l).as<Conv>();
    const std::size_t k = conv.out_channels(), c = conv.in_channels();
    const std::size_t area = conv.weight.dim(2) * conv.weight.dim(3);
    const std::size_t first = stats.size();
    stats.resize(first + k);
    parallel_for(k, [&](std::size_t b, std::size_t e) {
      for (std::size_t ch = b; ch < e; ++ch) {
        Matrix m(c, area);
        const float* src = conv.weight.data().data() + ch * c * area;
        std::copy_n(src, c * area, m.data().begin());
        stats[first + ch] = {l, ch, spectral_norm(m), 0.0f};
      }
    });
  }
  return stats;
}

float layer_sigma(const Conv& conv) {
  const std::size_t k = conv.out_channels();
  Matrix m(k, conv.weight.size() / k);
  std::copy(conv.weight.data().begin(), conv.weight.data().end(), m.data().begin());
  return spectral_norm(m);
}

std::vector<ChannelStat> uclc(const ModelGraph& fused) {
  auto stats = channel_sigma(fused);
  std::map<std::size_t, double> prefix;  // layer -> product of earlier layer norms
  double product = 1.0;
  for (std::size_t l : fused.conv_layers()) {
    prefix[l] = product;
    product *= layer_sigma(fused.layer(l).as<Conv>());
  }
  for (auto& s : stats) s.uclc = static_cast<float>(s.sigma * prefix.at(s.layer));
  return stats;
}

PruneIndexSet select_prune_set(const std::vector<ChannelStat>& stats, float u) {
  if (!std::isfinite(u)) throw NumericalError("u must be finite");
  std::map<std::size_t, std::vector<const ChannelStat*>> by_layer;
  for (const auto& s : stats) {
    if (!std::isfinite(s.sigma)) {
      throw NumericalError("non-finite sigma at layer " + std::to_string(s.layer) + " channel " +
                           std::to_string(s.channel));
    }
    by_layer[s.layer].push_back(&s);
  }
  PruneIndexSet out;
  out.stats = stats;
  for (const auto& [layer, group] : by_layer) {
    double sum = 0.0;
    for (const auto* s : group) sum += s->sigma;
    const double mu = sum / static_cast<double>(group.size());
    double sq = 0.0;
    for (const auto* s : group) sq += (s->sigma - mu) * (s->sigma - mu);
    const double sd = std::sqrt(sq / static_cast<double>(group.size()));
    const float cutoff = static_cast<float>(mu + static_cast<double>(u) * sd);
    out.thresholds.push_back({layer, static_cast<float>(mu), static_cast<float>(sd), u, cutoff});
    for (const auto* s : group)
      if (s->sigma > cutoff) out.entries.insert({layer, s->channel});
  }
  return out;
}

ModelGraph apply_prune(const ModelGraph& fused, const PruneIndexSet& idx) {
  ModelGraph out = fused;
  for (const auto& [l, ch] : idx.entries) {
    if (l >= out.size() || !out.layer(l).is<Conv>()) {
      throw IndexError("prune entry layer " + std::to_string(l) + " is not a conv layer");
    }
    Conv& conv = out.mutable_layer(l).as<Conv>();
    if (ch >= conv.out_channels()) {
      throw IndexError("prune entry channel " + std::to_string(ch) + " out of range for layer " +
                       std::to_string(l));
    }
    const std::size_t slice = conv.weight.size() / conv.out_channels();
    std::fill_n(conv.weight.data().begin() + ch * slice, slice, 0.0f);
    conv.bias[ch] = 0.0f;
  }
  return out;
}

std::pair<ModelGraph, PruneIndexSet> clp_defend(const ModelGraph& model, float u) {
  ModelGraph fused = fuse_conv_bn(model);
  PruneIndexSet idx = select_prune_set(uclc(fused), u);
  ModelGraph pruned = apply_prune(fused, idx);
  return {std::move(pruned), std::move(idx)};
}

void write_prune_report(std::ostream& out, const PruneIndexSet& idx) {
  std::map<std::size_t, float> cutoff;
  for (const auto& t : idx.thresholds) cutoff[t.layer] = t.cutoff;
  out << "layer,channel,sigma,uclc,cutoff,pruned\n";
  for (const auto& s : idx.stats) {
    out << s.layer << ',' << s.channel << ',' << to_shortest(s.sigma) << ',' << to_shortest(s.uclc) << ','
        << to_shortest(cutoff.at(s.layer)) << ',' << (idx.contains(s.layer, s.channel) ? 1 : 0) << '\n';
  }
}

}  // namespace clp
