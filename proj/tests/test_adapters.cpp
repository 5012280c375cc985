#include <cmath>

#include "doctest.h"
#include "peftkit/adapters.hpp"
#include "peftkit/checkpoint_io.hpp"
#include "peftkit/rng.hpp"
#include "peftkit/toy_model.hpp"

using namespace peftkit;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::vector<double> data(r * c);
  for (auto& v : data) v = rng.normal() * scale;
  return Tensor({r, c}, std::move(data));
}

AdapterPair random_pair(Rng& rng, std::size_t io, std::size_t bottleneck, bool bias) {
  AdapterPair p;
  p.target = "t";
  p.w_down = random_matrix(rng, io, bottleneck);
  p.w_up = random_matrix(rng, bottleneck, io);
  if (bias) {
    std::vector<double> bd(bottleneck), bu(io);
    for (auto& v : bd) v = rng.normal() * 0.3;
    for (auto& v : bu) v = rng.normal() * 0.3;
    p.b_down = Tensor::row_vector(bd);
    p.b_up = Tensor::row_vector(bu);
  }
  return p;
}

double max_rel_gap(const Tensor& a, const Tensor& b) {
  double scale = 1e-12;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    scale = std::max({scale, std::fabs(a.at(i)), std::fabs(b.at(i))});
  }
  double gap = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    gap = std::max(gap, std::fabs(a.at(i) - b.at(i)) / scale);
  }
  return gap;
}

}  // namespace

TEST_CASE("adapter_forward: zero up-projection is the identity, hand case") {
  AdapterPair p;
  p.target = "t";
  p.w_down = Tensor::matrix(2, 1, {1, 0});
  p.w_up = Tensor::zeros({1, 2});
  const Tensor h = Tensor::row_vector({3, 4});
  CHECK(adapter_forward(h, p, Nonlinearity::identity).data() == h.data());

  p.w_up = Tensor::matrix(1, 2, {1, 0});
  const Tensor out = adapter_forward(h, p, Nonlinearity::identity);
  CHECK(out.at(std::size_t{0}) == doctest::Approx(6.0));
  CHECK(out.at(1) == doctest::Approx(4.0));
}

TEST_CASE("adapter_forward matches the explicit two-matmul reference") {
  Rng rng(3);
  const AdapterPair p = random_pair(rng, 6, 2, true);
  const Tensor h = random_matrix(rng, 4, 6);
  const Tensor got = adapter_forward(h, p, Nonlinearity::relu);
  const Tensor want =
      add(h, add_row_bias(matmul(nonlinearity(add_row_bias(matmul(h, p.w_down), p.b_down),
                                              Nonlinearity::relu),
                                 p.w_up),
                          p.b_up));
  CHECK(max_rel_gap(got, want) == 0.0);
}

TEST_CASE("lora_forward: zero branch, 1-dim case, merged-form reference") {
  Rng rng(4);
  AdapterPair p = random_pair(rng, 3, 1, false);
  const Tensor w = random_matrix(rng, 3, 3);
  const Tensor h = Tensor::row_vector({1, 2, 3});

  p.w_up = Tensor::zeros({1, 3});
  const Tensor base_only = lora_forward(h, w, p, 1.0);
  const Tensor plain = matmul(Tensor({1, 3}, h.data()), w);
  for (std::size_t i = 0; i < 3; ++i) CHECK(base_only.at(i) == plain.at(std::size_t{0}, i));

  AdapterPair one;
  one.target = "t";
  one.w_down = Tensor::matrix(1, 1, {1});
  one.w_up = Tensor::matrix(1, 1, {3});
  CHECK(lora_forward(Tensor::row_vector({1}), Tensor::matrix(1, 1, {2}), one, 1.0)
            .at(std::size_t{0}) == doctest::Approx(5.0));

  const AdapterPair q = random_pair(rng, 3, 2, false);
  const Tensor adapter_form = lora_forward(h, w, q, 0.7);
  const Tensor merged_form = matmul(Tensor({1, 3}, h.data()), lora_merge(w, q, 0.7));
  CHECK(max_rel_gap(adapter_form, Tensor({3}, merged_form.data())) < 1e-10);
}

TEST_CASE("lora_merge: zero adapters leave W unchanged, rank-1 hand case") {
  Rng rng(5);
  AdapterPair p = random_pair(rng, 2, 1, false);
  const Tensor w = Tensor::matrix(2, 2, {1, 2, 3, 4});
  p.w_up = Tensor::zeros({1, 2});
  CHECK(lora_merge(w, p, 1.0).data() == w.data());

  AdapterPair r1;
  r1.target = "t";
  r1.w_down = Tensor::matrix(2, 1, {1, 2});
  r1.w_up = Tensor::matrix(1, 2, {3, 4});
  const Tensor merged = lora_merge(w, r1, 1.0);
  // W + [1;2][3 4] = [[1+3, 2+4], [3+6, 4+8]]
  CHECK(merged.at(0, 0) == 4.0);
  CHECK(merged.at(0, 1) == 6.0);
  CHECK(merged.at(1, 0) == 9.0);
  CHECK(merged.at(1, 1) == 12.0);
}

TEST_CASE("hiwi_weight_merge: zero up, 1-dim hand case, training-form equivalence") {
  Rng rng(6);
  const Tensor w = random_matrix(rng, 4, 8);
  AdapterPair p = random_pair(rng, 4, 2, true);
  p.w_up = Tensor::zeros({2, 4});
  p.b_up = Tensor::zeros({4});
  CHECK(hiwi_weight_merge(w, p, Nonlinearity::relu).data() == w.data());

  AdapterPair one;
  one.target = "t";
  one.w_down = Tensor::matrix(1, 1, {1});
  one.w_up = Tensor::matrix(1, 1, {1});
  CHECK(hiwi_weight_merge(Tensor::matrix(1, 1, {2}), one, Nonlinearity::relu).at(0, 0) ==
        doctest::Approx(4.0));

  // merged forward equals the explicit adapter-form composition
  const AdapterPair q = random_pair(rng, 4, 2, true);
  const Tensor merged = hiwi_weight_merge(w, q, Nonlinearity::relu);
  const Tensor want = add(w, transpose(adapter_mlp_rows(transpose(w), q, Nonlinearity::relu)));
  CHECK(max_rel_gap(merged, want) == 0.0);
  const Tensor h = random_matrix(rng, 3, 4);
  CHECK(max_rel_gap(matmul(h, merged), matmul(h, want)) < 1e-10);
}

TEST_CASE("hiwi_bias_merge: zero up, relu dead-zone hand case") {
  AdapterPair p;
  p.target = "t";
  p.w_down = Tensor::matrix(2, 1, {1, -1});
  p.w_up = Tensor::matrix(1, 2, {1, 1});
  p.b_down = Tensor::zeros({1});
  p.b_up = Tensor::zeros({2});
  const Tensor b = Tensor::row_vector({1, 2});
  // b Wd = -1, relu -> 0, so b' == b
  CHECK(hiwi_bias_merge(b, p, Nonlinearity::relu).data() == b.data());

  p.w_up = Tensor::zeros({1, 2});
  CHECK(hiwi_bias_merge(b, p, Nonlinearity::gelu).data() == b.data());
}

TEST_CASE("hiwi_bias artifact bytes are invariant to r") {
  const ToyModel model =
      build_model({.vocab = 20, .max_seq = 8, .d = 8, .layers = 2, .heads = 2}, 31);
  std::vector<std::size_t> sizes;
  for (std::size_t r : {1u, 4u, 16u}) {
    AdapterSpec spec;
    spec.kind = AdapterKind::hiwi_bias;
    spec.r = r;
    const AdapterWeights w = init_adapter_weights(spec, model.params, 5);
    const ParameterStore merged = merge_adapters(model.params, w);
    ParameterStore bias_only;
    for (const auto& g : merged.groups()) {
      if (w.find(g.name) != nullptr) bias_only.add(g);
    }
    sizes.push_back(serialize_checkpoint(bias_only).size());
  }
  CHECK(sizes[0] == sizes[1]);
  CHECK(sizes[1] == sizes[2]);
}

TEST_CASE("rank_of: zero matrix, identity, random low-rank product") {
  CHECK(rank_of(Tensor::zeros({3, 3}), 1e-8) == 0);
  CHECK(rank_of(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), 1e-8) == 3);

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor w = random_matrix(rng, 8, 8);
    const Tensor a = random_matrix(rng, 8, 2);
    const Tensor b = random_matrix(rng, 2, 8);
    const Tensor product = matmul(w, matmul(a, b));
    CHECK(rank_of(product, 1e-8) <= 2);
  }
}

TEST_CASE("rank bound: rank(W Wd Wu) <= min(rank W, r)") {
  Rng rng(8);
  for (std::size_t r : {1u, 2u, 4u}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor w = random_matrix(rng, 16, 16);
      const Tensor wd = random_matrix(rng, 16, r);
      const Tensor wu = random_matrix(rng, r, 16);
      const int got = rank_of(matmul(w, matmul(wd, wu)), 1e-8);
      CHECK(got <= int(r));
    }
  }
}

TEST_CASE("lora inequality demo: degenerate zero-gap, generic gap, identity distributivity") {
  {
    AdapterPair p;
    p.target = "t";
    p.w_down = Tensor::matrix(1, 1, {-1});
    p.w_up = Tensor::matrix(1, 1, {1});
    const auto res = demonstrate_lora_inequality(Tensor::matrix(1, 1, {0}), p,
                                                 Tensor::row_vector({1}), Nonlinearity::relu);
    CHECK(res.max_abs_gap == doctest::Approx(0.0));  // both sides hit the dead zone
  }
  {
    AdapterPair p;
    p.target = "t";
    p.w_down = Tensor::matrix(1, 1, {1});
    p.w_up = Tensor::matrix(1, 1, {1});
    const auto res = demonstrate_lora_inequality(Tensor::matrix(1, 1, {0}), p,
                                                 Tensor::row_vector({-1}), Nonlinearity::relu);
    CHECK(res.max_abs_gap == doctest::Approx(1.0));  // lhs 0, rhs -1
  }
  Rng rng(9);
  int gaps = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor w = random_matrix(rng, 4, 4);
    AdapterPair p = random_pair(rng, 4, 2, false);
    const Tensor h = Tensor({4}, random_matrix(rng, 1, 4).data());
    const auto relu_res = demonstrate_lora_inequality(w, p, h, Nonlinearity::relu);
    if (relu_res.max_abs_gap > 1e-6) ++gaps;
    const auto id_res = demonstrate_lora_inequality(w, p, h, Nonlinearity::identity);
    CHECK(id_res.max_abs_gap <= 1e-10);
  }
  CHECK(gaps >= 95);
}

TEST_CASE("init: down in +-1/sqrt(io), up exactly zero, counts match the formulas") {
  const ToyModel model =
      build_model({.vocab = 20, .max_seq = 8, .d = 8, .layers = 2, .heads = 2}, 41);
  const std::size_t d = 8, L = 2, r = 3;

  AdapterSpec spec;
  spec.r = r;

  spec.kind = AdapterKind::hiwi_bias;
  const AdapterWeights hb = init_adapter_weights(spec, model.params, 1);
  CHECK(hb.param_count() == (18 * d * r + 3 * r + 5 * d) * L);

  spec.kind = AdapterKind::hiwi_weight;
  CHECK(init_adapter_weights(spec, model.params, 1).param_count() ==
        (18 * d * r + 3 * r + 5 * d) * L);

  spec.kind = AdapterKind::lora;
  CHECK(init_adapter_weights(spec, model.params, 1).param_count() == 4 * d * r * L);

  spec.kind = AdapterKind::adapter;
  CHECK(init_adapter_weights(spec, model.params, 1).param_count() ==
        (4 * d * r + 2 * r + 2 * d) * L);  // + 4dL norm params tuned separately

  spec.kind = AdapterKind::pfeiffer_adapter;
  CHECK(init_adapter_weights(spec, model.params, 1).param_count() == (2 * d * r + r + d) * L);

  for (const auto& pair : hb.pairs) {
    for (double v : pair.w_up.data()) CHECK(v == 0.0);
    for (double v : pair.b_up.data()) CHECK(v == 0.0);
    const double limit = 1.0 / std::sqrt(double(pair.w_down.rows()));
    for (double v : pair.w_down.data()) CHECK(std::fabs(v) <= limit);
  }

  // hiwi_bias bottlenecks: 2r on the 4d first-FFN bias, r on the second
  const AdapterPair* ffn1 = hb.find("encoder.layer.0.ffn1.bias");
  const AdapterPair* ffn2 = hb.find("encoder.layer.0.ffn2.bias");
  REQUIRE(ffn1 != nullptr);
  REQUIRE(ffn2 != nullptr);
  CHECK(ffn1->w_down.cols() == 2 * r);
  CHECK(ffn1->w_down.rows() == 4 * d);
  CHECK(ffn2->w_down.cols() == r);
  CHECK(ffn2->w_down.rows() == d);
}

TEST_CASE("identity-f diff matrices match the explicit product oracles") {
  // with f = identity and no biases: hiwi's delta is (W^T Wd Wu)^T and
  // lora's delta is scale * Wd Wu
  Rng rng(53);
  const Tensor w = random_matrix(rng, 5, 7);
  AdapterPair p = random_pair(rng, 5, 2, false);

  const Tensor hiwi_delta = subtract(hiwi_weight_merge(w, p, Nonlinearity::identity), w);
  const Tensor oracle = transpose(matmul(matmul(transpose(w), p.w_down), p.w_up));
  CHECK(max_rel_gap(hiwi_delta, oracle) < 1e-12);

  const Tensor wsq = random_matrix(rng, 5, 5);
  const Tensor lora_delta = subtract(lora_merge(wsq, p, 0.8), wsq);
  CHECK(max_rel_gap(lora_delta, scale(matmul(p.w_down, p.w_up), 0.8)) < 1e-12);
}

TEST_CASE("adapter store round-trip preserves pairs") {
  const ToyModel model =
      build_model({.vocab = 20, .max_seq = 8, .d = 8, .layers = 2, .heads = 2}, 43);
  AdapterSpec spec;
  spec.kind = AdapterKind::lora;
  spec.r = 2;
  const AdapterWeights w = init_adapter_weights(spec, model.params, 77);
  const ParameterStore store = adapters_to_store(w);
  const AdapterWeights back = adapters_from_store(store, w.kind, w.f, w.lora_scale);
  REQUIRE(back.pairs.size() == w.pairs.size());
  for (std::size_t i = 0; i < w.pairs.size(); ++i) {
    CHECK(back.pairs[i].target == w.pairs[i].target);
    CHECK(back.pairs[i].w_down.data() == w.pairs[i].w_down.data());
    CHECK(back.pairs[i].w_up.data() == w.pairs[i].w_up.data());
  }
}

TEST_CASE("merge_adapters refuses hidden-state adapters, keeps inventory") {
  const ToyModel model =
      build_model({.vocab = 20, .max_seq = 8, .d = 8, .layers = 2, .heads = 2}, 47);
  AdapterSpec spec;
  spec.kind = AdapterKind::pfeiffer_adapter;
  const AdapterWeights w = init_adapter_weights(spec, model.params, 1);
  CHECK_THROWS_AS(merge_adapters(model.params, w), ConfigError);

  spec.kind = AdapterKind::hiwi_weight;
  const AdapterWeights hw = init_adapter_weights(spec, model.params, 1);
  const ParameterStore merged = merge_adapters(model.params, hw);
  REQUIRE(merged.size() == model.params.size());
  for (std::size_t i = 0; i < merged.size(); ++i) {
    CHECK(merged.groups()[i].name == model.params.groups()[i].name);
    CHECK(merged.groups()[i].tensor.same_shape(model.params.groups()[i].tensor));
  }
}
