#include <catch2/catch_amalgamated.hpp>

#include "leaffew/core/rng.hpp"
#include "leaffew/fusion/fusion.hpp"

using namespace leaffew;
using namespace leaffew::fusion;

TEST_CASE("fuse concatenates in order and records the layout") {
  auto f = fuse({{"mnv2", {1, 2}}, {"mnv3_small", {3}}, {"mnv3_large", {4, 5}}});
  REQUIRE(f.vector == std::vector<double>{1, 2, 3, 4, 5});
  REQUIRE(f.layout.size() == 3);
  REQUIRE(f.layout[0].offset == 0);
  REQUIRE(f.layout[0].length == 2);
  REQUIRE(f.layout[1].offset == 2);
  REQUIRE(f.layout[1].length == 1);
  REQUIRE(f.layout[2].offset == 3);
  REQUIRE(f.layout[2].length == 2);
}

TEST_CASE("slices recover the originals exactly") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NamedEmbedding> in;
    const char* names[3] = {"a", "b", "c"};
    for (int i = 0; i < 3; ++i) {
      NamedEmbedding e;
      e.backbone_name = names[i];
      const int d = 1 + static_cast<int>(rng.next_below(16));
      for (int j = 0; j < d; ++j) e.values.push_back(rng.normal());
      in.push_back(std::move(e));
    }
    auto f = fuse(in);
    for (int i = 0; i < 3; ++i) REQUIRE(f.slice(names[i]) == in[i].values);
    REQUIRE(f.dim() == static_cast<int>(in[0].values.size() +
                                        in[1].values.size() +
                                        in[2].values.size()));
  }
}

TEST_CASE("dimension checks name the offending backbone") {
  std::vector<NamedEmbedding> in{{"mnv2", {1, 2}}, {"mnv3_small", {3, 4}}};
  REQUIRE_THROWS_WITH(
      check_embedding_dims(in, {{"mnv2", 2}, {"mnv3_small", 3}}),
      Catch::Matchers::ContainsSubstring("mnv3_small"));
  REQUIRE_NOTHROW(check_embedding_dims(in, {{"mnv2", 2}, {"mnv3_small", 2}}));
}

TEST_CASE("per-slice scaling touches exactly one slice") {
  std::vector<NamedEmbedding> in{{"a", {1, 2}}, {"b", {3}}, {"c", {4, 5}}};
  auto base = fuse(in);
  in[0].values = {2, 4};
  auto scaled = fuse(in);
  REQUIRE(scaled.slice("a") == std::vector<double>{2, 4});
  REQUIRE(scaled.slice("b") == base.slice("b"));
  REQUIRE(scaled.slice("c") == base.slice("c"));
}

TEST_CASE("chunked sequence pads and de-chunks to identity") {
  FusedFeature f = fuse({{"a", {1, 2, 3, 4, 5}}});
  auto v = to_sequence_chunked(f, 2);
  REQUIRE(v.tokens == 3);
  REQUIRE(v.token_dim == 2);
  REQUIRE(v.data == std::vector<double>{1, 2, 3, 4, 5, 0});
  REQUIRE(de_chunk(v, f.dim()) == f.vector);
}

TEST_CASE("chunked round trip over random dims") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + static_cast<int>(rng.next_below(64));
    const int dt = 1 + static_cast<int>(rng.next_below(16));
    NamedEmbedding e{"x", {}};
    for (int i = 0; i < d; ++i) e.values.push_back(rng.normal());
    auto f = fuse({e});
    auto v = to_sequence_chunked(f, dt);
    REQUIRE(v.tokens * v.token_dim >= d);
    REQUIRE(de_chunk(v, d) == f.vector);
    // padding is zero
    for (int i = d; i < v.tokens * v.token_dim; ++i)
      REQUIRE(v.data[i] == 0.0);
  }
}

TEST_CASE("l2 normalization applies per slice when asked") {
  auto f = fuse({{"a", {3, 4}}, {"b", {5}}}, /*l2_normalize_slices=*/true);
  REQUIRE(f.vector[0] == Catch::Approx(0.6));
  REQUIRE(f.vector[1] == Catch::Approx(0.8));
  REQUIRE(f.vector[2] == Catch::Approx(1.0));
}

TEST_CASE("layout json round trip") {
  auto f = fuse({{"a", {1, 2}}, {"b", {3}}});
  auto j = layout_to_json(f.layout);
  auto back = layout_from_json(j);
  REQUIRE(back.size() == 2);
  REQUIRE(back[1].backbone_name == "b");
  REQUIRE(back[1].offset == 2);
  check_layout(f, back);
}
