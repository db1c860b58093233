#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "oracles.hpp"
#include "vgkit/errors.hpp"
#include "vgkit/grpo.hpp"

using namespace vgkit;

namespace {

TokenLogProbs flat_lp(std::size_t n, double policy, double old_policy, double reference) {
  return TokenLogProbs{std::vector<double>(n, policy), std::vector<double>(n, old_policy),
                       std::vector<double>(n, reference)};
}

RolloutGroup make_group(const std::string& id, const std::vector<double>& rewards, const GrpoConfig& cfg) {
  RolloutGroup g;
  g.prompt_id = id;
  g.gt = GroundTruthSnapshot{"red car", Box{1, 2, 3, 4}};
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    g.responses.push_back(RolloutResponse{static_cast<int>(i), "reply " + std::to_string(i), rewards[i], 0.0, {}});
  }
  g.assign_advantages(cfg);
  return g;
}

}  // namespace

TEST_CASE("advantages of a hand-checked group") {
  GrpoConfig cfg;
  cfg.group_size = 4;
  cfg.advantage_eps = 0;
  const std::vector<double> r{1, 0, 0, 1};
  CHECK(group_advantages(r, cfg) == std::vector<double>{1, -1, -1, 1});
  CHECK(group_advantages(std::vector<double>{2.5, 2.5, 2.5, 2.5}, cfg) == std::vector<double>(4, 0.0));
  CHECK_THROWS_AS(group_advantages(std::vector<double>{1, 2}, cfg), ArgumentError);
}

TEST_CASE("advantages are centred and unit-scaled against an independent moment oracle") {
  GrpoConfig cfg;
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> r(8);
    for (double& x : r) x = u(rng);
    const auto adv = group_advantages(r, cfg);
    const double m = oracle::mean(r), s = oracle::population_std(r);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(adv[i] == doctest::Approx((r[i] - m) / (s + cfg.advantage_eps)));
    CHECK(std::abs(oracle::mean(adv)) <= 1e-9);
    CHECK(std::abs(oracle::population_std(adv) - 1.0) <= 1e-6);
  }
}

TEST_CASE("advantages ignore shifts and positive scalings of the rewards") {
  GrpoConfig cfg;
  cfg.advantage_eps = 0;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 2.5), c(0.1, 10);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> r(8), shifted(8), scaled(8);
    const double k = c(rng), shift = u(rng);
    for (std::size_t i = 0; i < 8; ++i) {
      r[i] = u(rng);
      shifted[i] = r[i] + shift;
      scaled[i] = r[i] * k;
    }
    const auto a = group_advantages(r, cfg), b = group_advantages(shifted, cfg), d = group_advantages(scaled, cfg);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-9));
      CHECK(d[i] == doctest::Approx(a[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("ratio-one identity") {
  GrpoConfig cfg;
  cfg.kl_beta = 0.7;
  const auto res = surrogate_objective(1.7, flat_lp(5, -0.3, -0.3, -0.3), cfg);
  CHECK(res.contribution == doctest::Approx(1.7));
  for (const auto& t : res.tokens) {
    CHECK(t.ratio == 1.0);
    CHECK(t.kl == 0.0);
  }
}

TEST_CASE("clip arithmetic in both sign cases") {
  GrpoConfig cfg;
  cfg.kl_beta = 0;
  const double eps = cfg.clip_eps;
  // s1 = 1 + 2 eps: policy - old = ln(1 + 2 eps)
  const double up = std::log(1 + 2 * eps), down = std::log(1 - 2 * eps);
  CHECK(surrogate_objective(2.0, flat_lp(3, -1 + up, -1, -1), cfg).contribution == doctest::Approx((1 + eps) * 2.0));
  CHECK(surrogate_objective(-2.0, flat_lp(3, -1 + down, -1, -1), cfg).contribution ==
        doctest::Approx((1 - eps) * -2.0));
  // The pessimistic branch keeps the unclipped ratio in the other two cases.
  CHECK(surrogate_objective(2.0, flat_lp(3, -1 + down, -1, -1), cfg).contribution ==
        doctest::Approx((1 - 2 * eps) * 2.0));
  CHECK(surrogate_objective(-2.0, flat_lp(3, -1 + up, -1, -1), cfg).contribution ==
        doctest::Approx((1 + 2 * eps) * -2.0));
}

TEST_CASE("clipped term never exceeds (1 + eps) |adv| for positive advantages") {
  GrpoConfig cfg;
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> lp(-5, 0), adv(0.01, 3);
  for (int t = 0; t < 300; ++t) {
    TokenLogProbs l{{lp(rng), lp(rng)}, {lp(rng), lp(rng)}, {lp(rng), lp(rng)}};
    const double a = adv(rng);
    for (const auto& term : surrogate_objective(a, l, cfg).tokens) {
      CHECK(term.surrogate <= (1 + cfg.clip_eps) * a + 1e-12);
      CHECK(term.kl >= 0.0);
    }
  }
}

TEST_CASE("KL estimator is zero only where reference equals policy") {
  GrpoConfig cfg;
  const auto res = surrogate_objective(0.0, TokenLogProbs{{-1, -2}, {-1, -2}, {-1, -2.5}}, cfg);
  CHECK(res.tokens[0].kl == 0.0);
  CHECK(res.tokens[1].kl > 0.0);
  const double d = -0.5;
  CHECK(res.tokens[1].kl == doctest::Approx(std::exp(d) - d - 1));
}

TEST_CASE("extreme log ratios stay finite") {
  GrpoConfig cfg;
  const auto res = surrogate_objective(1.0, TokenLogProbs{{0}, {-1e6}, {-1e6}}, cfg);
  CHECK(std::isfinite(res.contribution));
}

TEST_CASE("token log-prob validation") {
  GrpoConfig cfg;
  CHECK_THROWS_AS(surrogate_objective(1, TokenLogProbs{{}, {}, {}}, cfg), ArgumentError);
  CHECK_THROWS_AS(surrogate_objective(1, TokenLogProbs{{-1}, {-1, -2}, {-1}}, cfg), ArgumentError);
  CHECK_THROWS_AS(surrogate_objective(1, TokenLogProbs{{0.5}, {-1}, {-1}}, cfg), ArgumentError);
  CHECK_THROWS_AS(surrogate_objective(1, TokenLogProbs{{NAN}, {-1}, {-1}}, cfg), ArgumentError);
}

TEST_CASE("group objective identities") {
  GrpoConfig cfg;
  cfg.kl_beta = 0;
  const auto g = make_group("g", {0, 1, 2.5, 0.5, 1, 1, 0, 2}, cfg);
  std::vector<TokenLogProbs> ones(8, flat_lp(4, -0.5, -0.5, -0.9));
  CHECK(std::abs(group_objective(g, ones, cfg)) <= 1e-12);

  // One response with advantage 1, the rest 0.
  RolloutGroup single = g;
  for (auto& r : single.responses) r.advantage = 0;
  single.responses[3].advantage = 1;
  CHECK(group_objective(single, ones, cfg) == doctest::Approx(1.0 / 8));

  GrpoConfig with_kl = cfg;
  with_kl.kl_beta = 0.3;
  std::vector<TokenLogProbs> same_ref(8, flat_lp(4, -0.7, -0.5, -0.7));
  CHECK(group_objective(g, same_ref, with_kl) == group_objective(g, same_ref, cfg));
}

TEST_CASE("group objective is continuous in the policy log-probs") {
  GrpoConfig cfg;
  const auto g = make_group("g", {0, 1, 2.5, 0.5, 1, 1, 0, 2}, cfg);
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> lp(-4, -0.5);
  std::vector<TokenLogProbs> base;
  for (int i = 0; i < 8; ++i) base.push_back(TokenLogProbs{{lp(rng), lp(rng)}, {lp(rng), lp(rng)}, {lp(rng), lp(rng)}});
  const double j0 = group_objective(g, base, cfg);
  for (double h : {1e-3, 1e-5, 1e-7}) {
    auto moved = base;
    for (auto& l : moved) {
      for (double& v : l.policy) v -= h;
    }
    CHECK(std::abs(group_objective(g, moved, cfg) - j0) < 1e3 * h);
  }
}

TEST_CASE("training batch ordering and completeness") {
  GrpoConfig cfg;
  std::vector<RolloutGroup> groups{make_group("b", {1, 0, 1, 0, 1, 0, 1, 0}, cfg),
                                   make_group("a", {0.5, 0, 0, 0, 0, 0, 0, 2.5}, cfg)};
  std::swap(groups[0].responses[0], groups[0].responses[5]);
  const auto batch = make_training_batch(groups, cfg);
  REQUIRE(batch.size() == 16);
  CHECK(batch[0].prompt_id == "a");
  CHECK(batch[7].response_index == 7);
  CHECK(batch[8].prompt_id == "b");
  CHECK(batch[8].response_index == 0);

  auto short_group = groups;
  short_group[1].responses.pop_back();
  CHECK_THROWS_WITH_AS(make_training_batch(short_group, cfg), doctest::Contains("missing response 7"), ValidationError);
  auto dup = groups;
  dup[1].prompt_id = "b";
  CHECK_THROWS_AS(make_training_batch(dup, cfg), ValidationError);
}

TEST_CASE("batch rewards round-trip bit-identically through the file") {
  GrpoConfig cfg;
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0, 2.5);
  std::vector<RolloutGroup> groups;
  for (int g = 0; g < 10; ++g) {
    std::vector<double> r(8);
    for (double& x : r) x = u(rng);
    groups.push_back(make_group("p" + std::to_string(g), r, cfg));
  }
  const auto batch = make_training_batch(groups, cfg);
  const std::string text = serialize_batch(batch);
  const auto back = parse_batch(text);
  REQUIRE(back.size() == batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(std::memcmp(&back[i].reward, &batch[i].reward, sizeof(double)) == 0);
    CHECK(std::memcmp(&back[i].advantage, &batch[i].advantage, sizeof(double)) == 0);
    CHECK(back[i].raw_text == batch[i].raw_text);
  }
  CHECK(serialize_batch(back) == text);
}

TEST_CASE("groups file round-trip") {
  GrpoConfig cfg;
  std::vector<RolloutGroup> groups{make_group("x", {0, 1, 2, 3, 4, 5, 6, 7}, cfg)};
  const std::string text = serialize_groups(groups);
  CHECK(serialize_groups(parse_groups(text)) == text);
  CHECK_THROWS_WITH_AS(parse_groups("\n{\"prompt_id\":1}\n"), doctest::Contains("groups line 2"), ValidationError);
}
