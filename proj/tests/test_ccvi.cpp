#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "colf/ccvi.hpp"
#include "test_util.hpp"

using namespace colf;
using colf::testing::check_gradients;
using colf::testing::random_tensor;

namespace {

std::vector<TensorPtr> random_volumes(int n, int h, int w, int d, Rng& rng, bool grad = false) {
  std::vector<TensorPtr> v;
  for (int i = 0; i < n; ++i) v.push_back(random_tensor({h, w, d}, rng, grad));
  return v;
}

Ccvi make_ccvi(ParamStore& store, int d, int s, int a, Rng& rng, int d_k = 0, int d_ff = 0) {
  CcviConfig cfg;
  cfg.d = d;
  cfg.d_k = d_k ? d_k : d;
  cfg.d_ff = d_ff ? d_ff : 2 * d;
  cfg.patch = s;
  cfg.band = a;
  return Ccvi(store, cfg, rng);
}

void zero_params(ParamStore& store) {
  for (auto& t : store.tensors()) std::fill(t->data.begin(), t->data.end(), 0.0);
}

}  // namespace

TEST_CASE("anchor/aux split: two views") {
  Rng rng(1);
  auto vols = random_volumes(2, 4, 4, 3, rng);
  auto [anchor, aux] = Ccvi::split_anchor_aux(vols, 0);
  CHECK(anchor->data == vols[0]->data);
  CHECK(aux->data == vols[1]->data);
}

TEST_CASE("anchor/aux split: identical views sum to (N-1) copies") {
  Rng rng(2);
  auto base = random_tensor({3, 3, 2}, rng, false);
  std::vector<TensorPtr> vols{base, constant(base->shape, base->data), constant(base->shape, base->data)};
  for (size_t i = 0; i < 3; ++i) {
    auto [anchor, aux] = Ccvi::split_anchor_aux(vols, i);
    for (size_t k = 0; k < base->data.size(); ++k)
      CHECK(aux->data[k] == doctest::Approx(2.0 * base->data[k]).epsilon(1e-15));
  }
}

TEST_CASE("anchor/aux split: single view gets a zero auxiliary") {
  Rng rng(3);
  auto vols = random_volumes(1, 4, 5, 3, rng);
  auto [anchor, aux] = Ccvi::split_anchor_aux(vols, 0);
  for (double v : aux->data) CHECK(v == 0.0);
}

TEST_CASE("anchor/aux split rejects bad input") {
  CHECK_THROWS_AS(Ccvi::split_anchor_aux({}, 0), std::invalid_argument);
  Rng rng(4);
  auto vols = random_volumes(2, 4, 4, 3, rng);
  CHECK_THROWS_AS(Ccvi::split_anchor_aux(vols, 5), std::invalid_argument);
}

TEST_CASE("fuse_aux: zero inputs with zero bias give zero") {
  Rng rng(5);
  ParamStore store;
  auto ccvi = make_ccvi(store, 4, 3, 1, rng);
  auto anchor = zeros({20, 4});
  auto aux = zeros({20, 4});
  auto fused = ccvi.fuse_aux(anchor, aux);
  CHECK(fused->shape == Shape{20, 4});
  for (double v : fused->data) CHECK(v == 0.0);
}

TEST_CASE("fuse_aux reduce conv passes the finite-difference oracle") {
  Rng rng(6);
  ParamStore store;
  auto ccvi = make_ccvi(store, 4, 3, 1, rng);
  auto anchor = random_tensor({12, 4}, rng, false);
  auto aux = random_tensor({12, 4}, rng, false);
  auto w = store.find("ccvi.reduce.w");
  REQUIRE(w);
  CHECK(check_gradients(w, [&] { return sum_all(mul(ccvi.fuse_aux(anchor, aux),
                                                    ccvi.fuse_aux(anchor, aux))); }) < 1e-4);
}

TEST_CASE("partition geometry: 11x11 context for s=5 a=3 and 49 tiles on 32x32") {
  auto p = make_block_partition(32, 32, 5, 3);
  CHECK(p.ctx_cap == 11 * 11);
  CHECK(p.n_blocks == 49);
  // Full interior block: whole context valid. Corner block: band clipped.
  const int64_t mid = 3 * 7 + 3;
  int64_t valid_mid = 0, valid_corner = 0;
  for (int64_t k = 0; k < p.ctx_cap; ++k) {
    valid_mid += p.ctx_idx[mid * p.ctx_cap + k] >= 0;
    valid_corner += p.ctx_idx[0 * p.ctx_cap + k] >= 0;
  }
  CHECK(valid_mid == 121);
  CHECK(valid_corner == 8 * 8);  // 5+3 per side
  // Edge tiles keep 2-wide cores.
  int64_t last_core = 0;
  for (int64_t k = 0; k < p.core_cap; ++k) last_core += p.core_idx[48 * p.core_cap + k] >= 0;
  CHECK(last_core == 2 * 2);
}

TEST_CASE("reassembling the cores reproduces the volume exactly") {
  Rng rng(7);
  auto vol = random_tensor({13, 9, 3}, rng, false);
  auto flat = reshape(vol, {13 * 9, 3});
  auto p = make_block_partition(13, 9, 5, 2);
  auto cores = gather_rows(flat, std::vector<int64_t>(p.core_idx));
  auto back = scatter_rows(cores, std::vector<int64_t>(p.core_idx), 13 * 9);
  CHECK(back->data == flat->data);
}

TEST_CASE("avgi: zero Q/K weights give uniform attention over the valid context") {
  Rng rng(8);
  ParamStore store;
  auto ccvi = make_ccvi(store, 3, 2, 1, rng);
  store.find("ccvi.attn.wq")->data.assign(9, 0.0);
  store.find("ccvi.attn.wk")->data.assign(9, 0.0);
  const auto& part = ccvi.partition_for(2, 2);  // single block, context == core
  auto anchor = random_tensor({4, 3}, rng, false);
  auto fused = random_tensor({4, 3}, rng, false);
  auto res = ccvi.avgi(anchor, fused, part);
  // Weights: uniform over the 4 valid positions.
  for (int64_t q = 0; q < part.core_cap; ++q) {
    double row_sum = 0;
    for (int64_t k = 0; k < part.ctx_cap; ++k) {
      const double w = res.weights->data[q * part.ctx_cap + k];
      row_sum += w;
      if (part.ctx_mask[k] != 0.0) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Every output equals the mean of the V rows.
  auto wv = store.find("ccvi.attn.wv");
  auto v_rows = matmul(anchor, wv);
  std::array<double, 3> mean{0, 0, 0};
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t c = 0; c < 3; ++c) mean[c] += v_rows->data[r * 3 + c] / 4.0;
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t c = 0; c < 3; ++c)
      CHECK(res.out->data[r * 3 + c] == doctest::Approx(mean[c]).epsilon(1e-12));
}

TEST_CASE("avgi attention rows sum to one") {
  Rng rng(9);
  ParamStore store;
  auto ccvi = make_ccvi(store, 4, 3, 2, rng);
  const auto& part = ccvi.partition_for(8, 7);
  auto anchor = random_tensor({56, 4}, rng, false, -3, 3);
  auto fused = random_tensor({56, 4}, rng, false, -3, 3);
  auto res = ccvi.avgi(anchor, fused, part);
  for (int64_t b = 0; b < part.n_blocks; ++b)
    for (int64_t q = 0; q < part.core_cap; ++q) {
      double s = 0;
      for (int64_t k = 0; k < part.ctx_cap; ++k)
        s += res.weights->data[(b * part.core_cap + q) * part.ctx_cap + k];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("avgi: a +40 logit margin selects that position's V row") {
  ParamStore store;
  Rng rng(10);
  auto ccvi = make_ccvi(store, 2, 2, 0, rng, /*d_k=*/1);
  // One 2x2 block, no band. Craft Q/K so context position 3 dominates every
  // query by ~+40 logits (note logits are scaled by 1/sqrt(d_k)=1).
  store.find("ccvi.attn.wq")->data = {1.0, 0.0};  // q = first channel
  store.find("ccvi.attn.wk")->data = {1.0, 0.0};  // k = first channel
  store.find("ccvi.attn.wv")->data = {1, 0, 0, 1};  // identity values
  auto fused = constant({4, 2}, {1, 0, 1, 0, 1, 0, 41, 0});  // position 3 has k = 41
  auto anchor = constant({4, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
  auto res = ccvi.avgi(anchor, fused, ccvi.partition_for(2, 2));
  for (int64_t q = 0; q < 4; ++q) {
    CHECK(std::abs(res.out->data[q * 2 + 0] - 0.7) < 1e-12);
    CHECK(std::abs(res.out->data[q * 2 + 1] - 0.8) < 1e-12);
  }
}

TEST_CASE("avgi output stays in the convex hull of the valid V rows") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    ParamStore store;
    const int d = 2 + static_cast<int>(rng.uniform_int(3));
    const int s = 1 + static_cast<int>(rng.uniform_int(3));
    const int a = static_cast<int>(rng.uniform_int(3));
    const int h = s + static_cast<int>(rng.uniform_int(4));
    const int w = s + static_cast<int>(rng.uniform_int(4));
    auto ccvi = make_ccvi(store, d, s, a, rng);
    auto anchor = random_tensor({static_cast<int64_t>(h) * w, d}, rng, false, -2, 2);
    auto fused = random_tensor({static_cast<int64_t>(h) * w, d}, rng, false, -2, 2);
    const auto& part = ccvi.partition_for(h, w);
    auto res = ccvi.avgi(anchor, fused, part);
    auto v_rows = matmul(anchor, store.find("ccvi.attn.wv"));
    for (int64_t b = 0; b < part.n_blocks; ++b) {
      std::vector<double> lo(d, 1e300), hi(d, -1e300);
      for (int64_t k = 0; k < part.ctx_cap; ++k) {
        const int64_t cell = part.ctx_idx[b * part.ctx_cap + k];
        if (cell < 0) continue;
        for (int c = 0; c < d; ++c) {
          lo[c] = std::min(lo[c], v_rows->data[cell * d + c]);
          hi[c] = std::max(hi[c], v_rows->data[cell * d + c]);
        }
      }
      for (int64_t q = 0; q < part.core_cap; ++q) {
        const int64_t cell = part.core_idx[b * part.core_cap + q];
        if (cell < 0) continue;
        for (int c = 0; c < d; ++c) {
          const double v = res.out->data[cell * d + c];
          CHECK(v >= lo[c] - 1e-9);
          CHECK(v <= hi[c] + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("ccvi_forward is exactly equivariant under view permutations") {
  Rng rng(12);
  ParamStore store;
  auto ccvi = make_ccvi(store, 4, 3, 1, rng);
  auto vols = random_volumes(4, 7, 6, 4, rng);
  auto out = ccvi.forward(vols);
  const std::vector<size_t> perm{2, 0, 3, 1};
  std::vector<TensorPtr> shuffled;
  for (size_t i : perm) shuffled.push_back(vols[i]);
  auto out_perm = ccvi.forward(shuffled);
  for (size_t i = 0; i < perm.size(); ++i) CHECK(out_perm[i]->data == out[perm[i]]->data);
}

TEST_CASE("two identical views fuse identically") {
  Rng rng(13);
  ParamStore store;
  auto ccvi = make_ccvi(store, 4, 3, 1, rng);
  auto v = random_tensor({6, 6, 4}, rng, false);
  auto out = ccvi.forward({v, constant(v->shape, v->data)});
  CHECK(out[0]->data == out[1]->data);
}

TEST_CASE("gradients reach every ccvi parameter") {
  Rng rng(14);
  ParamStore store;
  auto ccvi = make_ccvi(store, 4, 3, 1, rng);
  std::vector<TensorPtr> vols = random_volumes(3, 6, 6, 4, rng, /*grad=*/true);
  Tape tape;
  auto out = ccvi.forward(vols);
  TensorPtr loss;
  for (auto& o : out) loss = loss ? add(loss, sum_all(mul(o, o))) : sum_all(mul(o, o));
  tape.backward(loss);
  for (size_t i = 0; i < store.count(); ++i) {
    double norm = 0;
    for (double g : store.tensors()[i]->grad) norm += g * g;
    CHECK_MESSAGE(norm > 0.0, store.names()[i]);
  }
}

TEST_CASE("ccvi forward/backward agrees with finite differences") {
  Rng rng(15);
  ParamStore store;
  auto ccvi = make_ccvi(store, 3, 2, 1, rng);
  auto vols = random_volumes(2, 4, 4, 3, rng);
  auto probe = constant({4, 4, 3}, std::vector<double>(48, 0.37));
  auto build = [&] {
    auto out = ccvi.forward(vols);
    return add(sum_all(mul(out[0], probe)), sum_all(mul(out[1], out[1])));
  };
  for (const char* name :
       {"ccvi.attn.wq", "ccvi.attn.wk", "ccvi.attn.wv", "ccvi.reduce.w", "ccvi.ffn1.w", "ccvi.ffn2.b"}) {
    auto p = store.find(name);
    REQUIRE(p);
    CHECK_MESSAGE(check_gradients(p, build) < 1e-4, name);
  }
}

TEST_CASE("band width is irrelevant for a volume smaller than the patch") {
  Rng rng(16);
  auto vol = random_tensor({3, 3, 4}, rng, false);
  std::vector<double> with_band, without_band;
  for (int a : {3, 0}) {
    ParamStore store;
    Rng prng(99);  // identical parameters across both configurations
    auto ccvi = make_ccvi(store, 4, 5, a, prng);
    auto out = ccvi.forward({vol, vol});
    (a == 3 ? with_band : without_band) = out[0]->data;
  }
  CHECK(with_band == without_band);
}

TEST_CASE("zero parameters leave the anchor untouched") {
  Rng rng(17);
  ParamStore store;
  auto ccvi = make_ccvi(store, 4, 3, 1, rng);
  zero_params(store);
  auto vols = random_volumes(3, 6, 5, 4, rng);
  auto out = ccvi.forward(vols);
  for (size_t i = 0; i < vols.size(); ++i) CHECK(out[i]->data == vols[i]->data);
}
