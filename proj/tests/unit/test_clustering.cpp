#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "tss/clustering.hpp"
#include "tss/rng.hpp"

namespace tss {
namespace {

std::vector<float> unit(Rng& rng, std::size_t dim) {
  std::vector<float> v(dim);
  double n = 0.0;
  for (float& x : v) {
    x = static_cast<float>(rng.normal());
    n += double(x) * x;
  }
  for (float& x : v) x = static_cast<float>(x / std::sqrt(n));
  return v;
}

// Points scattered around a few random centres so that merges happen.
std::vector<std::vector<float>> blobs(Rng& rng, std::size_t n, std::size_t dim, double spread) {
  const std::size_t centres = 1 + rng.below(4);
  std::vector<std::vector<float>> c;
  for (std::size_t i = 0; i < centres; ++i) c.push_back(unit(rng, dim));
  std::vector<std::vector<float>> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto v = c[rng.below(centres)];
    for (float& x : v) x += static_cast<float>(spread * rng.normal());
    out.push_back(v);
  }
  return out;
}

TEST(Clustering, IdenticalVectorsMerge) {
  const std::vector<std::vector<float>> pts{{1, 2, 3}, {1, 2, 3}};
  const Partition p = agglomerate(pts, 0.09);
  EXPECT_EQ(p.cluster_count, 1u);
}

TEST(Clustering, OrthogonalVectorsStaySingletons) {
  std::vector<std::vector<float>> pts(5, std::vector<float>(5, 0.0f));
  for (int i = 0; i < 5; ++i) pts[i][i] = 1.0f;
  const Partition p = agglomerate(pts, 0.09);
  EXPECT_EQ(p.cluster_count, 5u);
  EXPECT_EQ(p.cluster_of, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Clustering, EmptyInputIsRejected) {
  std::vector<std::vector<float>> none;
  EXPECT_THROW(agglomerate(none, 0.1), Error);
  std::vector<std::vector<float>> one{{1, 0}};
  EXPECT_THROW(agglomerate(one, -0.1), ConfigError);
}

TEST(Clustering, TwelveRandomVectorsMatchOracle) {
  Rng rng(12);
  std::vector<std::vector<float>> pts;
  for (int i = 0; i < 12; ++i) pts.push_back(unit(rng, 8));
  const Partition p = agglomerate(pts, 0.3);
  EXPECT_EQ(p.cluster_of, oracle::brute_force_average_linkage(pts, 0.3));
}

TEST(Clustering, MatchesOracleOnRandomBlobs) {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(14);
    const auto pts = blobs(rng, n, 6, 0.3);
    const double threshold = 0.05 + 0.5 * rng.uniform();
    const Partition p = agglomerate(pts, threshold);
    EXPECT_EQ(p.cluster_of, oracle::brute_force_average_linkage(pts, threshold))
        << "trial " << trial;
  }
}

TEST(Clustering, EqualDistanceTieMergesSmallestPair) {
  // d(0,1) == d(1,2) exactly; (0,1) merges first and then c is too far
  // from the merged pair on average.
  const std::vector<std::vector<float>> pts{{1, 0}, {1, 1}, {0, 1}};
  EXPECT_EQ(agglomerate(pts, 0.3).cluster_of, (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_EQ(oracle::brute_force_average_linkage(pts, 0.3), (std::vector<std::size_t>{0, 0, 1}));
}

TEST(Clustering, ThresholdMonotonicity) {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pts = blobs(rng, 2 + rng.below(20), 5, 0.4);
    std::size_t prev = pts.size() + 1;
    for (double t : {0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6}) {
      const std::size_t count = agglomerate(pts, t).cluster_count;
      EXPECT_LE(count, prev) << "trial " << trial << " threshold " << t;
      prev = count;
    }
  }
}

TEST(Clustering, PartitionIsDenseAndNumberedByFirstMember) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = blobs(rng, 15, 4, 0.3);
    const Partition p = agglomerate(pts, 0.2);
    ASSERT_EQ(p.cluster_of.size(), pts.size());
    std::size_t next = 0;
    for (std::size_t c : p.cluster_of) {
      ASSERT_LE(c, next);
      if (c == next) ++next;
    }
    EXPECT_EQ(next, p.cluster_count);
  }
}

TEST(Clustering, OtherLinkagesAreDeterministic) {
  Rng rng(6);
  const auto pts = blobs(rng, 15, 4, 0.3);
  for (Linkage l : {Linkage::single, Linkage::complete}) {
    EXPECT_EQ(agglomerate(pts, 0.2, l).cluster_of, agglomerate(pts, 0.2, l).cluster_of);
  }
  EXPECT_LE(agglomerate(pts, 0.2, Linkage::single).cluster_count,
            agglomerate(pts, 0.2, Linkage::complete).cluster_count);
  EXPECT_EQ(parse_linkage("average"), Linkage::average);
  EXPECT_THROW(parse_linkage("ward"), ConfigError);
}

// Knowledge base with `tasks` tasks of `steps` steps and texts where step
// texts of the same order index share a direction (paraphrases).
struct Fixture {
  KnowledgeBase base;
  TextStore store{8, 8};
};

Fixture paraphrase_fixture(std::size_t tasks, std::size_t steps, bool identical_steps) {
  Fixture f;
  std::vector<TaskEntry> t;
  std::vector<StepEntry> s;
  std::vector<StateTriple> st;
  Rng rng(3);
  std::vector<std::vector<float>> dirs;
  for (std::size_t j = 0; j < steps; ++j) dirs.push_back(unit(rng, 8));
  for (std::size_t i = 0; i < tasks; ++i) {
    t.push_back({std::int64_t(i), "task " + std::to_string(i), {}});
    f.store.add({{Level::task, std::int64_t(i)}, unit(rng, 8), unit(rng, 8)});
    for (std::size_t j = 0; j < steps; ++j) {
      const std::int64_t id = std::int64_t(i * steps + j);
      s.push_back({id, std::int64_t(i), "step", int(j)});
      st.push_back({id, "b", "m", "a"});
      const auto& d = identical_steps ? dirs[0] : dirs[j];
      f.store.add({{Level::step, id}, d, d});
      for (Level l : kStateLevels) f.store.add({{l, id}, unit(rng, 8), unit(rng, 8)});
    }
  }
  f.base = KnowledgeBase::from_records(t, s, st);
  return f;
}

TEST(Clustering, TaskLevelIsNeverClustered) {
  const Fixture f = paraphrase_fixture(7, 2, true);
  const NodeSpace space = build_node_space(Level::task, f.base, f.store, 2.0);
  EXPECT_EQ(space.node_count(), 7u);
  for (std::int64_t id = 0; id < 7; ++id) EXPECT_EQ(space.node_of(id), std::size_t(id));
}

TEST(Clustering, IdenticalStepsCollapse) {
  const Fixture f = paraphrase_fixture(4, 3, true);
  const NodeSpace space = build_node_space(Level::step, f.base, f.store);
  EXPECT_EQ(space.node_count(), 1u);
}

TEST(Clustering, ParaphrasesShareNodesAndCentroidsAreUnit) {
  const Fixture f = paraphrase_fixture(4, 3, false);
  const NodeSpace space = build_node_space(Level::step, f.base, f.store);
  EXPECT_EQ(space.node_count(), 3u);
  for (std::size_t n = 0; n < space.node_count(); ++n) {
    double norm = 0.0;
    for (double x : space.centroid(n)) norm += x * x;
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-9);
  }
  EXPECT_EQ(space.node_of(0), space.node_of(3));
  EXPECT_NE(space.node_of(0), space.node_of(1));
}

TEST(Clustering, MissingEmbeddingIsRejected) {
  Fixture f = paraphrase_fixture(2, 2, false);
  TextStore partial(8, 8);
  for (const auto& [key, emb] : f.store.all()) {
    if (!(key.level == Level::step && key.id == 1)) partial.add(emb);
  }
  EXPECT_THROW(build_node_space(Level::step, f.base, partial), DataError);
}

TEST(Clustering, NodeSpaceRoundTrip) {
  testing::TempDir dir;
  const Fixture f = paraphrase_fixture(3, 3, false);
  const NodeSpace space = build_node_space(Level::after, f.base, f.store, 0.5);
  save_node_space(space, dir.path());
  EXPECT_EQ(load_node_space(Level::after, dir.path()), space);
}

TEST(Clustering, MembersAreNearestToOwnCentroid) {
  // Planted clusters: a member's own centroid beats a random other one in
  // the clear majority of draws.
  Rng rng(21);
  const Fixture f = paraphrase_fixture(6, 4, false);
  TextStore noisy(8, 8);
  for (const auto& [key, emb] : f.store.all()) {
    TextEmbedding e = emb;
    for (float& x : e.match_vec) x += static_cast<float>(0.05 * rng.normal());
    for (float& x : e.cluster_vec) x += static_cast<float>(0.05 * rng.normal());
    noisy.add(e);
  }
  const NodeSpace space = build_node_space(Level::step, f.base, noisy);
  ASSERT_GT(space.node_count(), 1u);
  std::size_t wins = 0, trials = 0;
  for (std::size_t i = 0; i < space.text_ids().size(); ++i) {
    const auto& v = noisy.at({Level::step, space.text_ids()[i]}).match_vec;
    const std::size_t own = space.node_of_text()[i];
    std::size_t other = rng.below(space.node_count() - 1);
    if (other >= own) ++other;
    const double d_own = 1.0 - cosine_sim(std::span<const float>(v), std::span<const double>(space.centroid(own)));
    const double d_other = 1.0 - cosine_sim(std::span<const float>(v), std::span<const double>(space.centroid(other)));
    wins += d_own <= d_other;
    ++trials;
  }
  EXPECT_GT(2 * wins, trials);
}

}  // namespace
}  // namespace tss
