#include <stdexcept>

#include "ct/boxes.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ct;

TEST_CASE("iou: identity, disjoint, half overlap") {
  Box unit{0, 0, 1, 1};
  CHECK(iou(unit, unit) == doctest::Approx(1.0));
  CHECK(iou(unit, Box{2, 2, 3, 3}) == 0.0);
  CHECK(iou(unit, Box{0, 0, 0.5, 1}) == doctest::Approx(0.5));
}

TEST_CASE("iou: degenerate boxes rejected") {
  CHECK_THROWS_AS(iou(Box{0, 0, 0, 1}, Box{0, 0, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(iou(Box{0, 0, 1, 1}, Box{0.5, 0.5, 0.5, 0.6}), std::invalid_argument);
}

TEST_CASE("box deltas: zero deltas reproduce proposals") {
  std::vector<Box> props = {{0.1, 0.2, 0.4, 0.5}, {0.5, 0.5, 0.9, 0.8}};
  Tensor deltas(2, 4);
  auto out = decode_boxes(props, deltas);
  for (int i = 0; i < 2; ++i) {
    CHECK(out[i].x1 == doctest::Approx(props[i].x1).epsilon(1e-12));
    CHECK(out[i].y2 == doctest::Approx(props[i].y2).epsilon(1e-12));
  }
}

TEST_CASE("box deltas: encode then decode is exact") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto rand_box = [&] {
      double w = rng.uniform(0.05, 0.4), h = rng.uniform(0.05, 0.4);
      double x1 = rng.uniform(0.0, 1.0 - w), y1 = rng.uniform(0.0, 1.0 - h);
      return Box{x1, y1, x1 + w, y1 + h};
    };
    Box p = rand_box(), g = rand_box();
    auto d = encode_box_delta(p, g);
    Tensor deltas(1, 4);
    for (int t = 0; t < 4; ++t) deltas.at(0, t) = d[t];
    Box back = decode_boxes({p}, deltas)[0];
    CHECK(std::abs(back.x1 - g.x1) < 1e-12);
    CHECK(std::abs(back.y1 - g.y1) < 1e-12);
    CHECK(std::abs(back.x2 - g.x2) < 1e-12);
    CHECK(std::abs(back.y2 - g.y2) < 1e-12);
  }
}

TEST_CASE("box deltas: decode clips to the unit canvas") {
  Tensor deltas(1, 4);
  deltas.at(0, 0) = 5.0;  // pushes the center far right
  deltas.at(0, 2) = 1.0;
  auto out = decode_boxes({Box{0.6, 0.6, 0.9, 0.9}}, deltas);
  CHECK(out[0].x2 <= 1.0);
  CHECK(out[0].y2 <= 1.0);
  CHECK(out[0].x1 >= 0.0);
}

TEST_CASE("box deltas: degenerate proposal rejected") {
  Tensor deltas(1, 4);
  CHECK_THROWS_AS(decode_boxes({Box{0.5, 0.5, 0.5, 0.9}}, deltas), std::invalid_argument);
  CHECK_THROWS_AS(encode_box_delta(Box{0, 0, 0, 0}, Box{0, 0, 1, 1}), std::invalid_argument);
}
