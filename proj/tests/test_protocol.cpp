#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fedspzo/data.hpp"
#include "fedspzo/errors.hpp"
#include "fedspzo/protocol.hpp"

using namespace fedspzo;

namespace {

// Constant loss regardless of parameters or data.
class FlatModel final : public SplitModel<double> {
 public:
  BlockSplit split() const override { return {1, 7, 3}; }
  Matrix<double> forward_block1(std::span<const double>, const Matrix<double>& x) const override { return x; }
  double forward_block2(std::span<const double>, const Matrix<double>&, std::span<const int>) const override {
    return 1.25;
  }
  std::uint64_t block1_flops(std::size_t) const override { return 1; }
  std::uint64_t block2_flops(std::size_t) const override { return 1; }
};

ClientTrainOptions options(PayloadMode mode, Seed root = 17, Seed batch = 23) {
  ClientTrainOptions o;
  o.client_id = 3;
  o.round_id = 5;
  o.root_seed = root;
  o.batch_seed = batch;
  o.batch_size = 8;
  o.mode = mode;
  return o;
}

template <class T>
struct Toy {
  Mlp<T> model{ModelSpec::mlp(4, {6, 3}, 3, ActivationKind::tanh)};
  Dataset data = make_blobs(60, 4, 3, 1.0, 2);
  ParamVector<T> theta = model.init_params(4);
};

}  // namespace

TEST(DeriveSeeds, CountPerStep) {
  SplitConfig cfg;
  EXPECT_EQ(seeds_per_step(cfg), 2u * (1 + 1 + 2 * 2));
  cfg.p1 = 3;
  cfg.p2 = 18;
  EXPECT_EQ(seeds_per_step(cfg), 3u * (1 + 1 + 2 * 3));
}

TEST(DeriveSeeds, SameRootSameSequencesDistinctRootsDiffer) {
  const SplitConfig cfg;
  const auto a = derive_step_seeds(1234, 20, cfg);
  const auto b = derive_step_seeds(1234, 20, cfg);
  const auto c = derive_step_seeds(1235, 20, cfg);
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t k = 0; k < 20; ++k) {
    EXPECT_EQ(a[k].s1, b[k].s1);
    EXPECT_EQ(a[k].s2, b[k].s2);
  }
  EXPECT_NE(a[0].s1, c[0].s1);
}

TEST(DeriveSeeds, RandomAccessMatchesStepLists) {
  const SplitConfig cfg;
  const Seed root = 99;
  const auto steps = derive_step_seeds(root, 4, cfg);
  const std::size_t ps = cfg.ps();
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < cfg.p1; ++i) {
      EXPECT_EQ(derive_seeds(root, k, {SeedSlotKind::s1, i, 0}, cfg), steps[k].s1[i]);
      const Seed sh = derive_seeds(root, k, {SeedSlotKind::shift, i, 0}, cfg);
      for (std::size_t j = 0; j < ps; ++j) {
        EXPECT_EQ(derive_seeds(root, k, {SeedSlotKind::s2_plus, i, j}, cfg), steps[k].s2[i * 2 * ps + j]);
        EXPECT_EQ(derive_seeds(root, k, {SeedSlotKind::s2_minus, i, j}, cfg) + sh, steps[k].s2[i * 2 * ps + ps + j]);
      }
    }
  EXPECT_THROW(derive_seeds(root, 0, {SeedSlotKind::s2_plus, 0, ps}, cfg), ContractError);
}

TEST(ClientTrain, ZeroStepsLeavesModelAlone) {
  Toy<double> t;
  const auto r = client_train(t.model, t.theta, SplitConfig{}, 0, t.data, options(PayloadMode::with_seeds));
  EXPECT_EQ(r.payload.k(), 0u);
  EXPECT_TRUE(bitwise_equal(r.final_params, t.theta));
}

TEST(ClientTrain, FlatLossGivesZeroScalarsAndExactReplay) {
  const FlatModel m;
  ParamVector<double> theta(10, 0.5);
  for (std::size_t i = 0; i < 10; ++i) theta[i] = 0.1 * static_cast<double>(i) - 0.3;
  const Dataset data = make_blobs(20, 3, 2, 1.0, 1);
  const SplitConfig cfg;
  const auto r = client_train<double>(m, theta, cfg, 5, data, options(PayloadMode::with_seeds));
  ASSERT_EQ(r.payload.k(), 5u);
  for (const auto& s : r.payload.steps) {
    EXPECT_EQ(s.g1, 0.0);
    EXPECT_EQ(s.g2, 0.0);
  }
  // The update itself is a no-op; what remains is the rounding residue of
  // the perturbation cycles, which the server reproduces exactly.
  for (std::size_t i = 0; i < theta.size(); ++i)
    EXPECT_LE(std::abs(r.final_params[i] - theta[i]), 1e-14) << i;
  EXPECT_TRUE(bitwise_equal(reconstruct(theta, r.payload, m.split(), cfg), r.final_params));
}

TEST(ClientTrain, TwentyStepsOnBlobs) {
  const Mlp<double> m(ModelSpec::mlp(6, {16, 4}, 3, ActivationKind::tanh));
  const Dataset data = make_blobs(120, 6, 3, 1.0, 7);
  const ParamVector<double> theta = m.init_params(7);
  SplitConfig cfg;
  cfg.lr = 0.01;
  const auto r = client_train(m, theta, cfg, 20, data, options(PayloadMode::with_seeds));
  ASSERT_EQ(r.payload.k(), 20u);
  for (const auto& s : r.payload.steps) {
    EXPECT_EQ(s.s1.size(), 2u);
    EXPECT_EQ(s.s2.size(), 8u);
  }
  const auto all = full_batch<double>(data);
  const double before = m.forward_loss(theta.values(), all);
  const double after = m.forward_loss(r.final_params.values(), all);
  EXPECT_LT(after, before);
  EXPECT_DOUBLE_EQ(before, 1.1809496375749826);
  EXPECT_DOUBLE_EQ(after, 1.0863581072708086);
}

TEST(ClientTrain, EmptyDatasetRejected) {
  Toy<double> t;
  Dataset empty;
  empty.dim = 4;
  empty.num_classes = 3;
  EXPECT_THROW(client_train(t.model, t.theta, SplitConfig{}, 2, empty, options(PayloadMode::with_seeds)),
               ConfigError);
}

template <class T>
class ProtocolTyped : public ::testing::Test {};
using Scalars = ::testing::Types<float, double>;
TYPED_TEST_SUITE(ProtocolTyped, Scalars);

TYPED_TEST(ProtocolTyped, ReconstructionIsBitwise) {
  Toy<TypeParam> t;
  const SplitConfig cfg;
  for (auto mode : {PayloadMode::with_seeds, PayloadMode::scalars_only}) {
    const auto r = client_train(t.model, t.theta, cfg, 3, t.data, options(mode));
    const auto wire = decode_payload(encode_payload(r.payload));
    EXPECT_TRUE(bitwise_equal(reconstruct(t.theta, wire, t.model.split(), cfg), r.final_params))
        << to_string(mode);
  }
}

TYPED_TEST(ProtocolTyped, PayloadModesGiveSameModel) {
  Toy<TypeParam> t;
  const SplitConfig cfg;
  const auto a = client_train(t.model, t.theta, cfg, 6, t.data, options(PayloadMode::with_seeds));
  const auto b = client_train(t.model, t.theta, cfg, 6, t.data, options(PayloadMode::scalars_only));
  EXPECT_TRUE(bitwise_equal(a.final_params, b.final_params));
  EXPECT_TRUE(bitwise_equal(reconstruct(t.theta, a.payload, t.model.split(), cfg),
                            reconstruct(t.theta, b.payload, t.model.split(), cfg)));
  EXPECT_FALSE(b.payload.root_seed == std::nullopt);
  EXPECT_TRUE(b.payload.steps[0].s1.empty());
}

TEST(Reconstruct, ZeroScalarsReplayOnlyTheCycles) {
  Toy<double> t;
  const SplitConfig cfg;
  auto r = client_train(t.model, t.theta, cfg, 4, t.data, options(PayloadMode::with_seeds));
  for (auto& s : r.payload.steps) s.g1 = s.g2 = 0.0;
  const auto back = reconstruct(t.theta, r.payload, t.model.split(), cfg);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], t.theta[i], 1e-14);
}

TEST(Reconstruct, RejectsMismatchedPayloads) {
  Toy<double> t;
  const SplitConfig cfg;
  auto r = client_train(t.model, t.theta, cfg, 2, t.data, options(PayloadMode::scalars_only));
  SplitConfig other = cfg;
  other.p1 = 1;
  other.p2 = 4;
  EXPECT_THROW(reconstruct(t.theta, r.payload, t.model.split(), other), ContractError);
  r.payload.root_seed.reset();
  EXPECT_THROW(reconstruct(t.theta, r.payload, t.model.split(), cfg), ContractError);
}

TEST(Aggregate, ExampleCases) {
  const ParamVector<double> a(std::vector<double>{0.1, -2.0, 3.3});
  const std::vector<ParamVector<double>> one{a};
  EXPECT_TRUE(bitwise_equal(aggregate<double>(one), a));

  const std::vector<ParamVector<double>> same(5, a);
  const auto m = aggregate<double>(same);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(m[i] - a[i]), std::abs(a[i]) * 2.3e-16);

  const ParamVector<double> neg(std::vector<double>{-0.1, 2.0, -3.3});
  const std::vector<ParamVector<double>> pair{a, neg};
  const auto zero = aggregate<double>(pair);
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);

  EXPECT_THROW(aggregate<double>(std::vector<ParamVector<double>>{}), ContractError);
  const std::vector<ParamVector<double>> ragged{a, ParamVector<double>(2)};
  EXPECT_THROW(aggregate<double>(ragged), ContractError);
}

TEST(ClientSampler, BasicContract) {
  const auto all = client_sampler(0, 1, 20, 20);
  ASSERT_EQ(all.size(), 20u);
  for (std::uint32_t i = 0; i < 20; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(client_sampler(7, 3, 20, 4), client_sampler(7, 3, 20, 4));
  const auto s = client_sampler(8, 3, 20, 4);
  EXPECT_EQ(std::set<std::uint32_t>(s.begin(), s.end()).size(), 4u);
  EXPECT_THROW(client_sampler(0, 1, 20, 0), ConfigError);
  EXPECT_THROW(client_sampler(0, 1, 20, 21), ConfigError);
}

TEST(ClientSampler, UniformOverManyRounds) {
  const std::size_t n = 20, m = 2, rounds = 10'000;
  std::vector<int> hits(n, 0);
  for (std::uint32_t r = 0; r < rounds; ++r)
    for (auto c : client_sampler(r, 42, n, m)) ++hits[c];
  const double p = static_cast<double>(m) / n;
  const double mean = rounds * p, sd = std::sqrt(rounds * p * (1 - p));
  for (int h : hits) EXPECT_LE(std::abs(h - mean), 3 * sd);
}

namespace {

FederationConfig fed_config(PayloadMode mode, std::size_t m, std::size_t workers) {
  FederationConfig f;
  f.split.lr = 0.01;
  f.local_steps = 5;
  f.batch_size = 8;
  f.clients_per_round = m;
  f.mode = mode;
  f.master_seed = 11;
  f.workers = workers;
  return f;
}

std::vector<Dataset> shards(const Dataset& d, std::size_t n) { return split_by_plan(d, partition(d, n, {}, 3)); }

}  // namespace

TEST(Federation, SingleClientRoundEqualsThatClient) {
  Toy<double> t;
  Federation<double> fed(t.model, shards(t.data, 4), t.theta, fed_config(PayloadMode::with_seeds, 1, 1));
  const RoundPlan plan = fed.plan_round(0);
  ASSERT_EQ(plan.clients.size(), 1u);
  const auto report = fed.run_round(plan);
  const auto payload = decode_payload(report.payloads.at(0));
  SplitConfig cfg = fed.config().split;
  EXPECT_TRUE(bitwise_equal(fed.global(), reconstruct(t.theta, payload, t.model.split(), cfg)));
}

TEST(Federation, ModesAndWorkerCountsAgree) {
  Toy<double> t;
  const auto data = shards(t.data, 6);
  Federation<double> a(t.model, data, t.theta, fed_config(PayloadMode::with_seeds, 3, 1));
  Federation<double> b(t.model, data, t.theta, fed_config(PayloadMode::scalars_only, 3, 1));
  Federation<double> c(t.model, data, t.theta, fed_config(PayloadMode::with_seeds, 3, 3));
  for (std::uint32_t r = 0; r < 4; ++r) {
    a.run_round(a.plan_round(r));
    b.run_round(b.plan_round(r));
    c.run_round(c.plan_round(r));
    ASSERT_TRUE(bitwise_equal(a.global(), b.global())) << "round " << r;
    ASSERT_TRUE(bitwise_equal(a.global(), c.global())) << "round " << r;
  }
  EXPECT_LT(b.ledger().upload_bytes, a.ledger().upload_bytes);
  EXPECT_EQ(a.ledger().fw_flops, b.ledger().fw_flops);
}

TEST(Federation, LedgerCountsEveryClient) {
  Toy<double> t;
  auto cfg = fed_config(PayloadMode::scalars_only, 2, 1);
  Federation<double> fed(t.model, shards(t.data, 4), t.theta, cfg);
  const auto rep = fed.run_round(fed.plan_round(0));
  const auto per_step = zo_step_cost_split(cfg.split, CostModelParams::for_model(t.model.spec(), cfg.batch_size));
  EXPECT_EQ(rep.delta.fw_flops, 2 * cfg.local_steps * per_step.forward);
  EXPECT_EQ(rep.delta.upload_bytes, 2 * payload_bytes(cfg.local_steps, 2, 8, PayloadMode::scalars_only));
  EXPECT_EQ(rep.delta.download_bytes, 2 * t.theta.size() * sizeof(double));
  EXPECT_EQ(fed.ledger(), rep.delta);
}

TEST(Method, StringRoundTrip) {
  for (auto m : {Method::fedspzo, Method::central_zo, Method::forward_zo, Method::fedavg_fo})
    EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_THROW(method_from_string("sgd"), ConfigError);
}
