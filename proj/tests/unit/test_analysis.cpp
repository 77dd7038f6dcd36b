#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "clp/analysis.hpp"
#include "clp/errors.hpp"
#include "clp/eval.hpp"
#include "clp/models.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace clp;

namespace {

ModelGraph random_tinynet(std::uint64_t seed) {
  ModelGraph m = make_tinynet({3, 8, 8}, 4, seed);
  fixture::randomize(m, seed + 50, 0.4f);
  return m;
}

}  // namespace

TEST(Tac, IdentityPoisoningGivesZero) {
  Dataset d = fixture::random_dataset({3, 8, 8}, 12, 4, 1);
  for (const auto& t : compute_tac(random_tinynet(1), d, make_blended_spec({3, 8, 8}, 0.0f))) EXPECT_EQ(t.tac, 0.0f);
}

TEST(Tac, DuplicationAndOrderInvariant) {
  Dataset d = fixture::random_dataset({3, 8, 8}, 10, 4, 2);
  ModelGraph m = random_tinynet(2);
  PoisonSpec spec = make_patch_spec({3, 8, 8});
  auto base = compute_tac(m, d, spec);
  std::vector<std::size_t> twice;
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t i = 0; i < 10; ++i) twice.push_back(9 - i);
  auto dup = compute_tac(m, d.subset(twice), spec);
  ASSERT_EQ(base.size(), dup.size());
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(dup[i].tac, base[i].tac, 1e-6f * (1.0f + base[i].tac));
}

TEST(Tac, ChunkingDoesNotChangeResult) {
  // 300 samples span two internal chunks; compare against per-sample sums.
  Dataset d = fixture::random_dataset({3, 8, 8}, 300, 4, 3);
  ModelGraph m = random_tinynet(3);
  PoisonSpec spec = make_patch_spec({3, 8, 8});
  auto all = compute_tac(m, d, spec, {0});
  std::vector<double> sum(all.size(), 0.0);
  for (std::size_t s = 0; s < 300; ++s) {
    auto one = compute_tac(m, d.subset({s}), spec, {0});
    for (std::size_t i = 0; i < one.size(); ++i) sum[i] += one[i].tac;
  }
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_NEAR(all[i].tac, sum[i] / 300.0, 1e-5 * (1.0 + sum[i] / 300.0));
}

TEST(Tac, SingleChannelHandTrace) {
  Conv conv{Tensor({1, 1, 1, 1}, 2.0f), Tensor({1}, 0.5f), 1, 0};
  ModelGraph m({1, 2, 2}, 2, {{conv, std::nullopt}, {AvgPool{2, 2}, std::nullopt}, {Flatten{}, std::nullopt},
                              {Linear{Tensor({2, 1}), Tensor({2})}, std::nullopt}});
  Dataset d;
  d.images = Tensor({1, 1, 2, 2}, std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f});
  d.labels = {1};
  d.classes = 2;
  PoisonSpec spec = make_patch_spec({1, 2, 2}, 1);
  spec.patch = Tensor({1, 1, 1}, 1.0f);  // bottom-right pixel 0.4 -> 1.0
  auto tac = compute_tac(m, d, spec);
  ASSERT_EQ(tac.size(), 1u);
  EXPECT_NEAR(tac[0].tac, 2.0f * 0.6f, 1e-6f);
}

TEST(Tac, EmptyDatasetIsConfigError) {
  Dataset d;
  d.classes = 4;
  EXPECT_THROW(compute_tac(random_tinynet(4), d, make_patch_spec({3, 8, 8})), ConfigError);
}

TEST(Tac, NonConvLayerRejected) {
  Dataset d = fixture::random_dataset({3, 8, 8}, 2, 4, 5);
  EXPECT_THROW(compute_tac(random_tinynet(5), d, make_patch_spec({3, 8, 8}), {1}), IndexError);
}

TEST(Pearson, MatchesTextbookOracle) {
  std::vector<double> x{1, 2, 3, 4, 5.5}, y{2, 1, 4, 3, 7};
  const double n = 5;
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  const double ref = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  EXPECT_NEAR(*pearson(x, y), ref, 1e-10);
  EXPECT_NEAR(*pearson(x, x), 1.0, 1e-12);
  EXPECT_FALSE(pearson({1, 2}, {1, 2}).has_value());
  EXPECT_FALSE(pearson({1, 2, 3}, {4, 4, 4}).has_value());
}

TEST(Correlation, EqualIndicesGiveOne) {
  std::vector<ChannelStat> stats;
  std::vector<TacRecord> tac;
  for (std::size_t k = 0; k < 5; ++k) {
    stats.push_back({2, k, 1.0f, static_cast<float>(k * k)});
    tac.push_back({2, k, static_cast<float>(k * k)});
  }
  stats.push_back({4, 0, 1.0f, 1.0f});
  tac.push_back({4, 0, 1.0f});
  auto rows = correlation_report(stats, tac);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NEAR(*rows[0].r, 1.0, 1e-12);
  EXPECT_FALSE(rows[1].r.has_value());
  tac.pop_back();
  EXPECT_THROW(correlation_report(stats, tac), ConfigError);
}

TEST(Correlation, ConstantTacIsNotAvailable) {
  std::vector<ChannelStat> stats;
  std::vector<TacRecord> tac;
  for (std::size_t k = 0; k < 4; ++k) {
    stats.push_back({0, k, 1.0f, static_cast<float>(k)});
    tac.push_back({0, k, 3.0f});
  }
  EXPECT_FALSE(correlation_report(stats, tac)[0].r.has_value());
}

TEST(TopDecile, CountsPrunedChannelsAmongHighestTac) {
  PruneIndexSet idx;
  idx.entries = {{0, 0}, {0, 5}};
  std::vector<TacRecord> tac;
  for (std::size_t k = 0; k < 12; ++k) tac.push_back({0, k, static_cast<float>(k == 0 ? 100 : k)});
  // top ceil(12/10) = 2 channels: 0 and 11
  EXPECT_DOUBLE_EQ(*pruned_top_decile_fraction(idx, tac), 0.5);
  EXPECT_FALSE(pruned_top_decile_fraction(PruneIndexSet{}, tac).has_value());
}

TEST(Sweep, ShapeAndInvariants) {
  Dataset d = fixture::random_dataset({3, 8, 8}, 40, 4, 6);
  ModelGraph m = random_tinynet(6);
  const ModelGraph copy = m;
  PoisonSpec spec = make_patch_spec({3, 8, 8});
  auto points = sweep_u(m, d, spec, {0.5f, 1.0f, 2.0f, 1e9f});
  EXPECT_EQ(m, copy);
  ASSERT_EQ(points.size(), 4u);
  for (std::size_t i = 1; i < points.size(); ++i) EXPECT_LE(points[i].pruned_count, points[i - 1].pruned_count);
  EXPECT_EQ(points.back().pruned_count, 0u);
  EXPECT_DOUBLE_EQ(points.back().acc, accuracy(m, d));
  EXPECT_THROW(sweep_u(m, d, spec, {}), ConfigError);
  std::ostringstream out;
  write_sweep_report(out, points);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "u,acc,asr,pruned_count");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}

TEST(Reports, FixedHeaders) {
  Dataset d = fixture::random_dataset({3, 8, 8}, 4, 4, 7);
  ModelGraph m = random_tinynet(7);
  auto tac = compute_tac(m, d, make_patch_spec({3, 8, 8}));
  auto [pruned, idx] = clp_defend(m, 3.0f);
  std::ostringstream a, b;
  write_tac_report(a, tac);
  write_joined_report(b, idx, tac);
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "layer,channel,tac");
  EXPECT_EQ(b.str().substr(0, b.str().find('\n')), "layer,channel,sigma,uclc,tac,pruned");
}
