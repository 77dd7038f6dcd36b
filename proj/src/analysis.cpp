#include "clp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "clp/errors.hpp"
#include "clp/eval.hpp"
#include "clp/format.hpp"

namespace clp {

namespace {

constexpr std::size_t kTacChunk = 256;

std::map<Probe, float> tac_by_key(const std::vector<TacRecord>& tac) {
  std::map<Probe, float> m;
  for (const auto& t : tac) m[{t.layer, t.channel}] = t.tac;
  return m;
}

}  // namespace

std::vector<TacRecord> compute_tac(const ModelGraph& model, const Dataset& data,
                                   const PoisonSpec& spec, const std::vector<std::size_t>& layers) {
  if (data.size() == 0) throw ConfigError("TAC needs a nonempty dataset");
  data.validate();
  spec.validate(data.image_shape());
  const ModelGraph fused = fuse_conv_bn(model);

  std::vector<std::size_t> chosen = layers.empty() ? fused.conv_layers() : layers;
  std::set<Probe> probes;
  for (std::size_t l : chosen) {
    if (l >= fused.size() || !fused.layer(l).is<Conv>()) {
      throw IndexError("layer " + std::to_string(l) + " is not a conv layer of the fused model");
    }
    for (std::size_t ch = 0; ch < fused.layer(l).as<Conv>().out_channels(); ++ch) probes.insert({l, ch});
  }

  std::map<Probe, double> sums;
  const std::size_t n = data.size();
  for (std::size_t b = 0; b < n; b += kTacChunk) {
    const Tensor clean = data.images.slice_batch(b, std::min(n, b + kTacChunk));
    const Tensor triggered = apply_trigger_batch(clean, spec);
    const auto [lc, tc] = forward_traced(fused, clean, probes);
    const auto [lt, tt] = forward_traced(fused, triggered, probes);
    for (const auto& p : probes) {
      const Tensor& a = tc.maps.at(p);
      const Tensor& t = tt.maps.at(p);
      const std::size_t m = a.dim(0), plane = a.size() / m;
      double& acc = sums[p];
      for (std::size_t s = 0; s < m; ++s) {
        double sq = 0.0;
        for (std::size_t i = s * plane; i < (s + 1) * plane; ++i) {
          const double d = static_cast<double>(a[i]) - t[i];
          sq += d * d;
        }
        acc += std::sqrt(sq);
      }
    }
  }
  std::vector<TacRecord> out;
  out.reserve(probes.size());
  for (const auto& p : probes) {
    out.push_back({p.first, p.second, static_cast<float>(sums[p] / static_cast<double>(n))});
  }
  return out;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 3) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<LayerCorrelation> correlation_report(const std::vector<ChannelStat>& stats,
                                                 const std::vector<TacRecord>& tac) {
  const auto t = tac_by_key(tac);
  if (t.size() != stats.size()) throw ConfigError("TAC and channel stats cover different channels");
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& s : stats) {
    auto it = t.find({s.layer, s.channel});
    if (it == t.end()) {
      throw ConfigError("no TAC for layer " + std::to_string(s.layer) + " channel " +
                        std::to_string(s.channel));
    }
    groups[s.layer].first.push_back(s.uclc);
    groups[s.layer].second.push_back(it->second);
  }
  std::vector<LayerCorrelation> out;
  for (const auto& [layer, g] : groups) out.push_back({layer, g.first.size(), pearson(g.first, g.second)});
  return out;
}

std::optional<double> pruned_top_decile_fraction(const PruneIndexSet& idx,
                                                 const std::vector<TacRecord>& tac) {
  if (idx.entries.empty()) return std::nullopt;
  std::map<std::size_t, std::vector<std::pair<float, std::size_t>>> by_layer;
  for (const auto& t : tac) by_layer[t.layer].push_back({t.tac, t.channel});
  std::set<Probe> top;
  for (auto& [layer, v] : by_layer) {
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const std::size_t keep = (v.size() + 9) / 10;
    for (std::size_t i = 0; i < keep; ++i) top.insert({layer, v[i].second});
  }
  std::size_t hits = 0;
  for (const auto& e : idx.entries) hits += top.count(e);
  return static_cast<double>(hits) / static_cast<double>(idx.entries.size());
}

std::vector<SweepPoint> sweep_u(const ModelGraph& model, const Dataset& clean_test,
                                const PoisonSpec& spec, const std::vector<float>& u_values) {
  if (u_values.empty()) throw ConfigError("sweep needs at least one u value");
  const ModelGraph fused = fuse_conv_bn(model);
  const auto stats = uclc(fused);
  std::vector<SweepPoint> out;
  for (float u : u_values) {
    const PruneIndexSet idx = select_prune_set(stats, u);
    const ModelGraph pruned = apply_prune(fused, idx);
    const EvalReport r = evaluate(pruned, clean_test, spec);
    out.push_back({u, r.acc, r.asr, idx.entries.size()});
  }
  return out;
}

void write_tac_report(std::ostream& out, const std::vector<TacRecord>& tac) {
  out << "layer,channel,tac\n";
  for (const auto& t : tac) out << t.layer << ',' << t.channel << ',' << to_shortest(t.tac) << '\n';
}

void write_joined_report(std::ostream& out, const PruneIndexSet& idx, const std::vector<TacRecord>& tac) {
  const auto t = tac_by_key(tac);
  out << "layer,channel,sigma,uclc,tac,pruned\n";
  for (const auto& s : idx.stats) {
    auto it = t.find({s.layer, s.channel});
    if (it == t.end()) {
      throw ConfigError("no TAC for layer " + std::to_string(s.layer) + " channel " +
                        std::to_string(s.channel));
    }
    out << s.layer << ',' << s.channel << ',' << to_shortest(s.sigma) << ',' << to_shortest(s.uclc) << ','
        << to_shortest(it->second) << ',' << (idx.contains(s.layer, s.channel) ? 1 : 0) << '\n';
  }
}

void write_correlation_summary(std::ostream& out, const std::vector<LayerCorrelation>& rows) {
  out << "layer,channels,r\n";
  for (const auto& r : rows) {
    out << r.layer << ',' << r.channels << ',' << (r.r ? to_shortest(*r.r) : std::string("NA")) << '\n';
  }
}

void write_sweep_report(std::ostream& out, const std::vector<SweepPoint>& points) {
  out << "u,acc,asr,pruned_count\n";
  for (const auto& p : points) {
    out << to_shortest(p.u) << ',' << to_shortest(p.acc) << ',' << to_shortest(p.asr) << ',' << p.pruned_count
        << '\n';
  }
}

}  // namespace clp
