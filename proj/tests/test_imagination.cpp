#include "doctest.h"

#include "op_cases.hpp"
#include "synthetic.hpp"

#include <numeric>
#include <sstream>

using namespace pbdr;
using namespace pbdr::testing;

namespace {

struct Models {
  ModelDims dims = tiny_dims();
  Rng init{31};
  WorldModel<double> wm{dims, init};
  Policy<double> policy{dims, init};
  Critic<double> critic{dims, init};
};

StartStates<double> random_starts(Rng& rng, const ModelDims& d, Eigen::Index n) {
  return {random_matrix(rng, n, d.deter, 0.5), random_matrix(rng, n, d.stoch), random_matrix(rng, n, d.stoch, 0.3)};
}

bool same(const Var<double>& a, const Var<double>& b) { return a.value() == b.value(); }

}  // namespace

TEST_CASE("score arithmetic") {
  CHECK(score(1.7, 3.0, 0.0) == 1.7);
  CHECK(score(2.0, 0.5, 1.0) == 2.5);
  CHECK(score(1.0, 0.2, 10.0) > score(2.0, 0.05, 10.0));
}

TEST_CASE("prune: top-k, ties and identity") {
  Rng rng(1);
  const std::vector<double> s{3, 1, 2, 0};
  CHECK(prune(s, 2, PruneMode::TopK, rng) == std::vector<int>{0, 2});
  const std::vector<double> tie{1, 5, 5, 5};
  CHECK(prune(tie, 2, PruneMode::TopK, rng) == std::vector<int>{1, 2});
  const std::vector<double> any{0.3, -2.0, 9.0};
  CHECK(prune(any, 3, PruneMode::TopK, rng) == std::vector<int>{0, 1, 2});
  CHECK(prune(any, 3, PruneMode::SoftResample, rng) == std::vector<int>{0, 1, 2});
  CHECK_THROWS_AS(prune(any, 4, PruneMode::TopK, rng), UsageError);
  CHECK_THROWS_AS(prune(any, 0, PruneMode::TopK, rng), UsageError);
}

TEST_CASE("prune: top-k dominance on random scores") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 2 + static_cast<int>(rng.next_u64() % 10), k = 1 + static_cast<int>(rng.next_u64() % (m - 1));
    std::vector<double> s(m);
    for (double& x : s) x = std::round(rng.normal() * 3.0);  // rounding forces ties
    const std::vector<int> keep = prune(s, k, PruneMode::TopK, rng);
    REQUIRE(keep.size() == static_cast<std::size_t>(k));
    CHECK(std::is_sorted(keep.begin(), keep.end()));
    double lo = 1e300;
    for (int i : keep) lo = std::min(lo, s[i]);
    for (int i = 0; i < m; ++i) {
      if (std::find(keep.begin(), keep.end(), i) != keep.end()) continue;
      CHECK(s[i] <= lo);
      // a pruned tie must sit after every kept branch of the same score
      if (s[i] == lo) CHECK(i > *std::max_element(keep.begin(), keep.end(), [&](int a, int b) {
                          return (s[a] == lo ? a : -1) < (s[b] == lo ? b : -1);
                        }));
    }
  }
}

TEST_CASE("systematic_resample: validation and equal weights") {
  Rng rng(3);
  const std::vector<double> bad{0.5, 0.6};
  CHECK_THROWS_AS(systematic_resample(bad, 2, rng), UsageError);
  const std::vector<double> eq{0.25, 0.25, 0.25, 0.25};
  for (int i = 0; i < 10000; ++i) CHECK(systematic_resample(eq, 4, rng) == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("systematic_resample: unbiased counts") {
  Rng rng(4);
  const std::vector<double> w{0.05, 0.3, 0.15, 0.4, 0.1};
  const int K = 3, trials = 100000;
  std::vector<double> sum(w.size()), sum2(w.size());
  for (int t = 0; t < trials; ++t) {
    std::vector<int> count(w.size());
    for (int i : systematic_resample(w, K, rng)) ++count[i];
    for (std::size_t i = 0; i < w.size(); ++i) {
      sum[i] += count[i];
      sum2[i] += count[i] * count[i];
    }
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double m = sum[i] / trials, se = std::sqrt((sum2[i] / trials - m * m) / trials);
    CHECK(std::abs(m - K * w[i]) <= 4 * se + 1e-12);
  }
}

TEST_CASE("soft resample with equal scores keeps every branch once on average") {
  Rng rng(5);
  const std::vector<double> s{0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7};
  std::vector<double> count(s.size());
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    for (int i : prune(s, 4, PruneMode::SoftResample, rng, 0.5)) count[i] += 1.0;
  }
  for (double c : count) CHECK(std::abs(c / trials - 0.5) < 4 * std::sqrt(0.25 / trials));
}

TEST_CASE("init_particles") {
  Models m;
  Rng data(6);
  const StartStates<double> start = random_starts(data, m.dims, 2);
  Tape<double> t;
  SUBCASE("K=1 is a single draw from the start posterior") {
    Rng a(7), b(7);
    const auto p = init_particles(t, start, 1, a);
    const Md eps = b.normal_matrix<double>(2, m.dims.stoch);
    const Md expect = start.post_mean.array() + start.post_log_std.array().exp() * eps.array();
    CHECK(p.state.z.value() == expect);
    CHECK(p.state.h.value() == start.h);
  }
  SUBCASE("K=4 shares h and draws distinct z") {
    Rng a(8);
    const auto p = init_particles(t, start, 4, a);
    CHECK(p.lineage == std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1});
    for (int r = 0; r < 8; ++r) CHECK(p.state.h.value().row(r) == start.h.row(r / 4));
    for (int r = 1; r < 4; ++r) CHECK(p.state.z.value().row(r) != p.state.z.value().row(0));
  }
  SUBCASE("Monte-Carlo mean") {
    Rng a(9);
    const int K = 10000;
    const auto p = init_particles(t, start, K, a);
    const Md z = p.state.z.value().topRows(K);
    for (Eigen::Index d = 0; d < m.dims.stoch; ++d) {
      const double se = std::exp(start.post_log_std(0, d)) / std::sqrt(K);
      CHECK(std::abs(z.col(d).mean() - start.post_mean(0, d)) < 4 * se);
    }
  }
  CHECK_THROWS_AS(init_particles(t, start, 0, data), UsageError);
}

TEST_CASE("branch_particles: counting and parents") {
  Models m;
  Rng data(10);
  Tape<double> t;
  auto wm = bind(t, m.wm, false);
  auto pol = bind(t, m.policy, false);
  auto cr = bind_online(t, m.critic, false);
  LatentState<double> particles{t.constant(random_matrix(data, 2, m.dims.deter)),
                                t.constant(random_matrix(data, 2, m.dims.stoch))};
  ImaginationRngs rngs(11);
  const auto br = branch_particles(wm, pol, cr, particles, 3, 0.1, rngs);
  CHECK(br.parent == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(br.next.h.rows() == 6);
  CHECK(br.scores.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    CHECK(std::abs(br.scores[i] - br.value.value()(r, 0) - 0.1 * br.disagreement(r, 0)) < 1e-12);
  }
  const auto one = branch_particles(wm, pol, cr, particles, 1, 0.1, rngs);
  CHECK(one.parent == std::vector<int>{0, 1});
}

TEST_CASE("branch_particles: a near-deterministic policy gives near-identical actions") {
  Models m;
  auto& last = m.policy.net.layers.back();
  last.weight.value.setZero();
  last.bias.value.setZero();
  last.bias.value.rightCols(m.dims.action).setConstant(-50.0);  // log_std at the floor
  Rng data(12);
  Tape<double> t;
  auto wm = bind(t, m.wm, false);
  LatentState<double> particles{t.constant(random_matrix(data, 1, m.dims.deter)),
                                t.constant(random_matrix(data, 1, m.dims.stoch))};
  ImaginationRngs rngs(13);
  const auto br = branch_particles(wm, bind(t, m.policy, false), bind_online(t, m.critic, false), particles, 5,
                                   0.0, rngs);
  const Md a = br.action.value();
  CHECK((a.rowwise() - a.row(0)).cwiseAbs().maxCoeff() < 7 * std::exp(-5.0) * 5.0);
}

TEST_CASE("imagine_rollout: shapes, counting and genealogy") {
  Models m;
  Rng data(14);
  Tape<double> t;
  auto wm = bind(t, m.wm, false);
  auto pol = bind(t, m.policy, false);
  auto cr = bind_online(t, m.critic, false);
  for (PruneMode mode : {PruneMode::TopK, PruneMode::SoftResample}) {
    ImaginationConfig cfg;
    cfg.particles = 2;
    cfg.branches = 4;
    cfg.horizon = 10;
    cfg.prune = mode;
    ImaginationRngs rngs(15);
    const auto traj = imagine_rollout(wm, pol, cr, random_starts(data, m.dims, 3), cfg, rngs);
    REQUIRE(traj.horizon() == 10);
    CHECK(traj.states.size() == 11);
    for (int s = 0; s < 10; ++s) {
      CHECK(traj.actions[s].rows() == 6);
      CHECK(traj.actions[s].cols() == 2);
      CHECK(traj.rewards[s].rows() == 6);
      CHECK(traj.log[s].branches.size() == 24);
      CHECK(traj.log[s].survivors.size() == 6);
      for (std::size_t j = 0; j < traj.parents[s].size(); ++j) {
        const int p = traj.parents[s][j];
        CHECK(p >= 0);
        CHECK(p < 6);
        CHECK(p / 2 == static_cast<int>(j) / 2);  // survivors never change start
      }
      for (const Branch& b : traj.log[s].branches) CHECK(std::abs(b.score - b.value - 0.1 * b.disagreement) < 1e-12);
    }
  }
}

TEST_CASE("imagine_rollout: top-k survivors dominate the pruned branches") {
  Models m;
  Rng data(16);
  Tape<double> t;
  ImaginationConfig cfg;
  cfg.particles = 2;
  cfg.branches = 3;
  cfg.horizon = 4;
  cfg.beta = 5.0;
  ImaginationRngs rngs(17);
  const auto traj = imagine_rollout(bind(t, m.wm, false), bind(t, m.policy, false), bind_online(t, m.critic, false),
                                    random_starts(data, m.dims, 2), cfg, rngs);
  for (const auto& step : traj.log) {
    for (int g = 0; g < 2; ++g) {
      double lo = 1e300, hi = -1e300;
      for (int b = 6 * g; b < 6 * g + 6; ++b) {
        const bool kept = std::find(step.survivors.begin(), step.survivors.end(), b) != step.survivors.end();
        (kept ? lo : hi) = kept ? std::min(lo, step.branches[b].score) : std::max(hi, step.branches[b].score);
      }
      CHECK(lo >= hi);
    }
  }
}

TEST_CASE("K=1, N=1 rollouts equal the single-trajectory path bitwise") {
  Models m;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng data(100 + seed);
    const auto start = random_starts(data, m.dims, 4);
    ImaginationConfig cfg;
    cfg.horizon = 7;
    Tape<double> t;
    auto wm = bind(t, m.wm, false);
    auto pol = bind(t, m.policy, false);
    auto cr = bind_online(t, m.critic, false);
    ImaginationRngs a(seed), b(seed);
    const auto beam = imagine_rollout(wm, pol, cr, start, cfg, a);
    const auto single = imagine_rollout_single(wm, pol, cr, start, cfg.horizon, b);
    for (int s = 0; s <= cfg.horizon; ++s) {
      CHECK(same(beam.states[s].h, single.states[s].h));
      CHECK(same(beam.states[s].z, single.states[s].z));
    }
    for (int s = 0; s < cfg.horizon; ++s) {
      CHECK(same(beam.actions[s], single.actions[s]));
      CHECK(same(beam.rewards[s], single.rewards[s]));
      CHECK(same(beam.values[s], single.values[s]));
      CHECK(same(beam.log_probs[s], single.log_probs[s]));
    }
  }
}

TEST_CASE("trace_paths follows the genealogy") {
  Tape<double> t;
  ImaginedTrajectory<double> traj;
  auto col = [&](std::initializer_list<double> v) {
    Md m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return t.constant(m);
  };
  for (int s = 0; s < 3; ++s) traj.states.push_back({col({10.0 * s, 10.0 * s + 1}), col({0, 0})});
  traj.parents = {{1, 1}, {1, 0}};
  for (auto& r : std::vector<std::initializer_list<double>>{{5, 6}, {7, 8}}) {
    traj.actions.push_back(col(r));
    traj.log_probs.push_back(col(r));
    traj.entropies.push_back(col(r));
    traj.rewards.push_back(col(r));
    traj.continues.push_back(col(r));
  }
  const auto paths = trace_paths(traj);
  // survivor 0 at t=2 descends from row 1 at t=1, which descends from row 1 at t=0
  CHECK(paths.states[0].h.value()(0, 0) == 1.0);
  CHECK(paths.states[1].h.value()(0, 0) == 11.0);
  CHECK(paths.states[2].h.value()(0, 0) == 20.0);
  CHECK(paths.rewards[0].value()(0, 0) == 6.0);
  CHECK(paths.rewards[1].value()(0, 0) == 7.0);
  // survivor 1 descends from row 0 at t=1, which descends from row 1 at t=0
  CHECK(paths.states[0].h.value()(1, 0) == 1.0);
  CHECK(paths.states[1].h.value()(1, 0) == 10.0);
  CHECK(paths.rewards[0].value()(1, 0) == 5.0);
}

TEST_CASE("mode retention on the synthetic bimodal model") {
  const ModeRetention two = mode_retention(2, 1000);
  CHECK(two.both_within >= 0.95);
  const ModeRetention one = mode_retention(1, 200);
  CHECK(one.max_modes == 1);
  CHECK(one.both_within == 0.0);
}

TEST_CASE("imagination config validation and prune mode names") {
  ImaginationConfig cfg;
  cfg.particles = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.particles = 1;
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  CHECK(parse_prune_mode("topk") == PruneMode::TopK);
  CHECK(parse_prune_mode(to_string(PruneMode::SoftResample)) == PruneMode::SoftResample);
  CHECK_THROWS_AS(parse_prune_mode("best"), UsageError);
}

TEST_CASE("dream log CSV") {
  DreamStepLog step;
  step.branches = {{0, 0.1, 0.2, -1.0, 2.0, 0.5, 2.05}, {0, 0.3, 0.4, 0.0, 1.0, 0.1, 1.01}};
  step.survivors = {0};
  std::ostringstream out;
  write_dream_log(out, {step});
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,branch,parent,predicted_reward,value,disagreement,score,survived");
  std::getline(in, line);
  CHECK(line == "0,0,0,-1,2,0.5,2.05,1");
  std::getline(in, line);
  CHECK(line.back() == '0');
}
