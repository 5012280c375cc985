#include <algorithm>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "peftkit/checkpoint_io.hpp"
#include "peftkit/mask.hpp"
#include "peftkit/rng.hpp"
#include "peftkit/toy_model.hpp"

using namespace peftkit;

namespace {

ParameterStore single_group_store(std::vector<double> values) {
  ParameterStore s;
  s.add({"w", Role::ffn_bias, Tensor::row_vector(std::move(values))});
  return s;
}

// independent full-sort oracle: bottom-k (or top-k) by |value|, ties by index
std::vector<std::uint64_t> sort_oracle(const std::vector<double>& values, std::uint64_t k,
                                       bool largest) {
  std::vector<std::uint64_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) {
    const double fa = std::fabs(values[a]), fb = std::fabs(values[b]);
    return largest ? fa > fb : fa < fb;
  });
  order.resize(std::min<std::size_t>(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

TEST_CASE("pafi bottom-k hand case and k = group size") {
  const ParameterStore s = single_group_store({0.5, -0.1, 0.3, -0.7});
  const SparseMask m = ablation_mask(s, 2, MaskSelector::smallest, 0);
  REQUIRE(m.groups.size() == 1);
  CHECK(m.groups[0].indices == std::vector<std::uint64_t>{1, 2});

  const SparseMask all = ablation_mask(s, 4, MaskSelector::smallest, 0);
  CHECK(all.groups[0].indices == std::vector<std::uint64_t>{0, 1, 2, 3});
}

TEST_CASE("largest and middle selectors") {
  const ParameterStore s = single_group_store({0.5, -0.1, 0.3, -0.7});
  const SparseMask top = ablation_mask(s, 2, MaskSelector::largest, 0);
  CHECK(top.groups[0].indices == std::vector<std::uint64_t>{0, 3});

  // ascending |.| order: 0.1(1) 0.3(2) 0.5(0) 0.7(3); middle k=2 from rank 1
  const SparseMask mid = ablation_mask(s, 2, MaskSelector::middle, 0);
  CHECK(mid.groups[0].indices == std::vector<std::uint64_t>{0, 2});
}

TEST_CASE("random selector is seed-deterministic and exact-k") {
  const ToyModel model = build_model({.vocab = 20, .max_seq = 8, .d = 8, .layers = 2, .heads = 2},
                                     5);
  const SparseMask a = ablation_mask(model.params, 37, MaskSelector::random, 123);
  const SparseMask b = ablation_mask(model.params, 37, MaskSelector::random, 123);
  CHECK(serialize_mask(a) == serialize_mask(b));
  CHECK(a.selected_count() >= 37);  // forced norm groups sit on top of k
  std::size_t pool_selected = 0;
  for (const auto& g : a.groups) {
    const ParamGroup* pg = model.params.find(g.name);
    if (!role_is_norm(pg->role) && !role_is_embedding(pg->role)) pool_selected += g.indices.size();
  }
  CHECK(pool_selected == 37);

  const SparseMask c = ablation_mask(model.params, 37, MaskSelector::random, 124);
  CHECK(serialize_mask(a) != serialize_mask(c));
}

TEST_CASE("pafi group-wise selection matches the full-sort oracle per group") {
  const ToyModel model = build_model({.vocab = 30, .max_seq = 8, .d = 8, .layers = 2, .heads = 2},
                                     7);
  const double sparsity = 0.1;
  const SparseMask m = pafi_mask(model.params, sparsity, MaskScope::group_wise, MaskPolicy{});
  // the largest pool group absorbs the rounding residual; others are exact
  std::size_t largest = 0, largest_size = 0;
  for (const auto& g : model.params.groups()) {
    if (g.role == Role::classifier || role_is_norm(g.role) || role_is_embedding(g.role)) continue;
    if (g.tensor.numel() > largest_size) {
      largest_size = g.tensor.numel();
      largest = model.params.index_of(g.name);
    }
  }
  for (const auto& g : model.params.groups()) {
    if (g.role == Role::classifier) continue;
    const GroupIndices* mg = m.find(g.name);
    REQUIRE(mg != nullptr);
    if (role_is_norm(g.role)) {
      CHECK(mg->indices.size() == g.tensor.numel());  // force-included
      continue;
    }
    if (role_is_embedding(g.role)) {
      CHECK(mg->indices.empty());  // force-excluded
      continue;
    }
    if (model.params.index_of(g.name) == largest) continue;
    std::vector<double> vals(g.tensor.data().begin(), g.tensor.data().end());
    const auto want = sort_oracle(vals, std::uint64_t(std::llround(sparsity * vals.size())), false);
    CHECK(mg->indices == want);
  }
}

TEST_CASE("selection threshold property and smallest/largest disjointness") {
  Rng rng(99);
  std::vector<double> vals(200);
  for (auto& v : vals) v = rng.normal();
  const ParameterStore s = single_group_store(vals);
  const std::uint64_t k = 60;
  const SparseMask lo = ablation_mask(s, k, MaskSelector::smallest, 0);
  const SparseMask hi = ablation_mask(s, k, MaskSelector::largest, 0);
  CHECK(lo.groups[0].indices.size() == k);
  CHECK(hi.groups[0].indices.size() == k);

  double max_sel = 0.0, min_unsel = 1e300;
  std::vector<bool> selected(vals.size(), false);
  for (auto i : lo.groups[0].indices) selected[i] = true;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (selected[i]) {
      max_sel = std::max(max_sel, std::fabs(vals[i]));
    } else {
      min_unsel = std::min(min_unsel, std::fabs(vals[i]));
    }
  }
  CHECK(max_sel < min_unsel);  // no ties with continuous draws

  // 2k <= n: smallest and largest selections are disjoint
  for (auto i : lo.groups[0].indices) {
    CHECK(std::find(hi.groups[0].indices.begin(), hi.groups[0].indices.end(), i) ==
          hi.groups[0].indices.end());
  }
}

TEST_CASE("pafi is a pure function of checkpoint bytes and settings") {
  const ToyModel model = build_model({.vocab = 30, .max_seq = 8, .d = 8, .layers = 2, .heads = 2},
                                     21);
  const SparseMask a = pafi_mask(model.params, 0.05, MaskScope::group_wise, MaskPolicy{});
  const SparseMask b = pafi_mask(model.params, 0.05, MaskScope::group_wise, MaskPolicy{});
  CHECK(serialize_mask(a) == serialize_mask(b));
  CHECK(a.provenance == store_content_hash(model.params));
}

TEST_CASE("sparsity 0.005 selects 0.5% of the eligible pool within rounding") {
  const ToyModel model =
      build_model({.vocab = 60, .max_seq = 16, .d = 32, .layers = 2, .heads = 4}, 3);
  const MaskPolicy policy{};
  const SparseMask m = pafi_mask(model.params, 0.005, MaskScope::group_wise, policy);
  const double pool = double(eligible_pool_size(model.params, policy));
  std::size_t in_pool = 0;
  for (const auto& g : m.groups) {
    const ParamGroup* pg = model.params.find(g.name);
    if (!role_is_norm(pg->role) && !role_is_embedding(pg->role)) in_pool += g.indices.size();
  }
  const std::size_t groups_in_pool = 12 * 2;  // attn+ffn weights/biases per layer
  CHECK(std::fabs(double(in_pool) / pool - 0.005) <= double(groups_in_pool) / pool);
}

TEST_CASE("sparsity bounds and empty-pool errors") {
  const ParameterStore s = single_group_store({1, 2, 3});
  CHECK_THROWS_AS(pafi_mask(s, 0.0, MaskScope::group_wise, MaskPolicy{}), ConfigError);
  CHECK_THROWS_AS(pafi_mask(s, 1.5, MaskScope::group_wise, MaskPolicy{}), ConfigError);

  ParameterStore only_classifier;
  only_classifier.add({"classifier.weight", Role::classifier, Tensor::matrix(2, 2, {1, 2, 3, 4})});
  CHECK_THROWS_AS(pafi_mask(only_classifier, 0.5, MaskScope::group_wise, MaskPolicy{}),
                  ConfigError);
}

TEST_CASE("diff mask: hand cases and sort oracle") {
  {
    ParameterStore t0 = single_group_store({0, 0, 0});
    ParameterStore t1 = single_group_store({0, 2, 1});
    const SparseMask m = diff_mask(t0, t1, 1);
    CHECK(m.groups[0].indices == std::vector<std::uint64_t>{1});
  }
  {
    // all-equal scores: deterministic tie-break selects the first k indices
    ParameterStore t0 = single_group_store({1, 1, 1, 1});
    const SparseMask m = diff_mask(t0, t0, 2);
    CHECK(m.groups[0].indices == std::vector<std::uint64_t>{0, 1});
  }
  {
    Rng rng(5);
    std::vector<double> a(50), b(50);
    for (std::size_t i = 0; i < 50; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    ParameterStore t0 = single_group_store(a);
    ParameterStore t1 = single_group_store(b);
    const SparseMask m = diff_mask(t0, t1, 5);
    std::vector<double> diffs(50);
    for (std::size_t i = 0; i < 50; ++i) diffs[i] = std::fabs(a[i] - b[i]);
    CHECK(m.groups[0].indices == sort_oracle(diffs, 5, true));
  }
  {
    ParameterStore t0 = single_group_store({1, 2});
    ParameterStore t1 = single_group_store({1, 2, 3});
    CHECK_THROWS_AS(diff_mask(t0, t1, 1), AlignmentError);
  }
}

TEST_CASE("fisher scores: hand case, empty data, order invariance") {
  // per-sample loss theta * x_i with x = [1, 2]: mean of squared grads = 2.5
  const std::vector<double> xs = {1.0, 2.0};
  auto grads = [&](std::size_t i) {
    ParameterStore g;
    g.add({"theta", Role::ffn_bias, Tensor::row_vector({xs[i]})});
    return g;
  };
  const ParameterStore scores = fisher_scores(grads, 2);
  CHECK(scores.groups()[0].tensor.at(std::size_t{0}) == doctest::Approx(2.5));

  CHECK_THROWS_AS(fisher_scores(grads, 0), ConfigError);

  // loss independent of theta -> zero scores
  auto zero_grads = [](std::size_t) {
    ParameterStore g;
    g.add({"theta", Role::ffn_bias, Tensor::row_vector({0.0})});
    return g;
  };
  CHECK(fisher_scores(zero_grads, 3).groups()[0].tensor.at(std::size_t{0}) == 0.0);

  // permuting samples changes nothing beyond fp noise
  auto perm = [&](std::size_t i) { return grads(1 - i); };
  CHECK(fisher_scores(perm, 2).groups()[0].tensor.at(std::size_t{0}) ==
        doctest::Approx(2.5).epsilon(1e-12));

  auto nan_grads = [](std::size_t i) {
    ParameterStore g;
    NonFiniteGuard guard;
    g.add({"theta", Role::ffn_bias,
           Tensor::row_vector({i == 1 ? std::nan("") : 1.0})});
    return g;
  };
  try {
    fisher_scores(nan_grads, 2);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("sample 1") != std::string::npos);
  }
}

TEST_CASE("fisher mask: hand cases and sort oracle") {
  {
    ParameterStore scores = single_group_store({3, 1, 2});
    const SparseMask m = fisher_mask(scores, 1, MaskPolicy{.tune_norm = false, .tune_embed = true});
    CHECK(m.groups[0].indices == std::vector<std::uint64_t>{1});
  }
  {
    ParameterStore scores = single_group_store({7, 7, 7, 7});
    const SparseMask m = fisher_mask(scores, 2, MaskPolicy{.tune_norm = false, .tune_embed = true});
    CHECK(m.groups[0].indices == std::vector<std::uint64_t>{0, 1});
  }
  {
    Rng rng(9);
    std::vector<double> vals(40);
    for (auto& v : vals) v = std::fabs(rng.normal());
    ParameterStore scores = single_group_store(vals);
    const SparseMask m = fisher_mask(scores, 10, MaskPolicy{.tune_norm = false, .tune_embed = true});
    CHECK(m.groups[0].indices == sort_oracle(vals, 10, false));
  }
}

TEST_CASE("mask serialization round-trips and hand-built byte layout") {
  const ToyModel model = build_model({.vocab = 20, .max_seq = 8, .d = 8, .layers = 1, .heads = 2},
                                     2);
  const SparseMask m = pafi_mask(model.params, 0.07, MaskScope::group_wise, MaskPolicy{});
  const auto bytes = serialize_mask(m);
  const SparseMask back = parse_mask(bytes);
  CHECK(back.sparsity == m.sparsity);
  CHECK(back.scope == m.scope);
  CHECK(back.selector == m.selector);
  CHECK(back.policy.tune_norm == m.policy.tune_norm);
  CHECK(back.policy.tune_embed == m.policy.tune_embed);
  CHECK(back.provenance == m.provenance);
  REQUIRE(back.groups.size() == m.groups.size());
  for (std::size_t i = 0; i < m.groups.size(); ++i) {
    CHECK(back.groups[i].name == m.groups[i].name);
    CHECK(back.groups[i].indices == m.groups[i].indices);
  }

  // hand-assembled minimal mask: one group "ab" with indices {1, 3, 130}
  SparseMask tiny;
  tiny.groups.push_back({"ab", {1, 3, 130}});
  tiny.sparsity = 0.5;
  tiny.scope = MaskScope::global;
  tiny.selector = MaskSelector::largest;
  tiny.policy = {false, true};
  tiny.provenance.fill(0xAB);
  std::vector<std::uint8_t> want = {'P', 'F', 'M', 'K', 1, 0};
  want.insert(want.end(), 32, 0xAB);
  want.push_back(1);  // scope global
  want.push_back(1);  // selector largest
  want.push_back(2);  // policy: tune_embed only
  std::uint64_t sp_bits;
  double sp = 0.5;
  std::memcpy(&sp_bits, &sp, 8);
  for (int i = 0; i < 8; ++i) want.push_back(std::uint8_t(sp_bits >> (8 * i)));
  want.insert(want.end(), {1, 0, 0, 0});        // group count
  want.insert(want.end(), {2, 0, 0, 0});        // name length
  want.push_back('a');
  want.push_back('b');
  want.insert(want.end(), {3, 0, 0, 0, 0, 0, 0, 0});  // index count
  want.push_back(1);                             // first index
  want.push_back(2);                             // gap to 3
  want.push_back(0xFF);                          // gap 127 -> varint 0x7F? gap to 130 is 127
  // 130 - 3 = 127 fits one varint byte 0x7F
  want.back() = 0x7F;
  const std::uint32_t crc = crc32(want);
  for (int i = 0; i < 4; ++i) want.push_back(std::uint8_t(crc >> (8 * i)));
  CHECK(serialize_mask(tiny) == want);
}

TEST_CASE("global-scope pafi selects exactly k across the flattened pool") {
  const ToyModel model = build_model({.vocab = 30, .max_seq = 8, .d = 8, .layers = 2, .heads = 2},
                                     19);
  const MaskPolicy policy{};
  const double sparsity = 0.03;
  const SparseMask m = pafi_mask(model.params, sparsity, MaskScope::global, policy);
  const std::size_t pool = eligible_pool_size(model.params, policy);
  std::size_t in_pool = 0;
  for (const auto& g : m.groups) {
    const ParamGroup* pg = model.params.find(g.name);
    if (!role_is_norm(pg->role) && !role_is_embedding(pg->role)) in_pool += g.indices.size();
  }
  CHECK(in_pool == std::size_t(std::llround(sparsity * double(pool))));

  // globally selected values are the pool's smallest magnitudes
  std::vector<double> all;
  for (const auto& g : model.params.groups()) {
    if (g.role == Role::classifier || role_is_norm(g.role) || role_is_embedding(g.role)) continue;
    for (double v : g.tensor.data()) all.push_back(std::fabs(v));
  }
  std::sort(all.begin(), all.end());
  const double threshold = all[in_pool];  // no ties with continuous draws
  for (const auto& g : m.groups) {
    const ParamGroup* pg = model.params.find(g.name);
    if (role_is_norm(pg->role) || role_is_embedding(pg->role)) continue;
    for (std::uint64_t idx : g.indices) {
      CHECK(std::fabs(pg->tensor.at(idx)) < threshold);
    }
  }
}

TEST_CASE("mask round-trips across random settings") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const ToyModel model = build_model(
        {.vocab = 10 + rng.below(30), .max_seq = 8, .d = 2 * (1 + rng.below(6)), .layers = 1 + rng.below(2),
         .heads = 2},
        rng.next_u64());
    const MaskScope scope = rng.below(2) == 0 ? MaskScope::group_wise : MaskScope::global;
    const MaskSelector selector =
        std::array{MaskSelector::smallest, MaskSelector::largest, MaskSelector::middle,
                   MaskSelector::random}[rng.below(4)];
    const MaskPolicy policy{rng.below(2) == 0, rng.below(2) == 0};
    const double sparsity = 0.01 + 0.2 * rng.uniform();
    const SparseMask m =
        magnitude_mask(model.params, sparsity, scope, policy, selector, rng.next_u64());
    const SparseMask back = parse_mask(serialize_mask(m));
    CHECK(serialize_mask(back) == serialize_mask(m));
    check_mask_alignment(back, model.params);
  }
}

TEST_CASE("mask parse failures: version, CRC, truncation") {
  const ToyModel model = build_model({.vocab = 20, .max_seq = 8, .d = 8, .layers = 1, .heads = 2},
                                     2);
  const SparseMask m = pafi_mask(model.params, 0.07, MaskScope::group_wise, MaskPolicy{});
  auto bytes = serialize_mask(m);
  {
    auto bad = bytes;
    bad[4] = 9;
    CHECK_THROWS_AS(parse_mask(bad), VersionError);
  }
  {
    auto bad = bytes;
    bad[bad.size() - 2] ^= 0x55;
    CHECK_THROWS_AS(parse_mask(bad), CorruptFileError);
  }
  {
    auto bad = bytes;
    bad.resize(10);
    CHECK_THROWS_AS(parse_mask(bad), CorruptFileError);
  }
}

TEST_CASE("mask alignment check lists offenders") {
  const ToyModel model = build_model({.vocab = 20, .max_seq = 8, .d = 8, .layers = 1, .heads = 2},
                                     2);
  SparseMask m = pafi_mask(model.params, 0.07, MaskScope::group_wise, MaskPolicy{});
  check_mask_alignment(m, model.params);
  m.groups[0].name = "bogus";
  CHECK_THROWS_AS(check_mask_alignment(m, model.params), AlignmentError);
}
