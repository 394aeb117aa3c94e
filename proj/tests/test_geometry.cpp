#include <gtest/gtest.h>

#include <random>

#include "ebod/geometry.hpp"
#include "support.hpp"

using namespace ebod;

TEST(BBox, IouOfIdenticalBoxesIsOne) {
  const BBox a{0, 0, 10, 10};
  EXPECT_DOUBLE_EQ(bbox_iou(a, a), 1.0);
}

TEST(BBox, IouOfDisjointBoxesIsZero) {
  EXPECT_DOUBLE_EQ(bbox_iou({0, 0, 10, 10}, {20, 20, 30, 30}), 0.0);
}

TEST(BBox, IouHandComputed) {
  // Overlap 5x10 = 50, union 100 + 100 - 50 = 150.
  EXPECT_DOUBLE_EQ(bbox_iou({0, 0, 10, 10}, {5, 0, 15, 10}), 50.0 / 150.0);
}

TEST(BBox, DegenerateBoxHasZeroIou) {
  EXPECT_DOUBLE_EQ(bbox_iou({0, 0, 0, 10}, {0, 0, 10, 10}), 0.0);
}

TEST(BBox, IntersectionOfDisjointHasZeroExtent) {
  const BBox r = bbox_intersection({0, 0, 1, 1}, {5, 5, 6, 6});
  EXPECT_EQ(r.area(), 0.0);
  EXPECT_GE(r.width(), 0.0);
  EXPECT_GE(r.height(), 0.0);
}

TEST(Expand, HandExample) {
  const BBox b = expand_and_clip({10, 20, 30, 40}, 8, 6, 100, 100);
  EXPECT_EQ(b, (BBox{6, 17, 34, 43}));
}

TEST(Expand, ClipsToImage) {
  const BBox b = expand_and_clip({2, 2, 10, 10}, 20, 20, 15, 15);
  EXPECT_EQ(b, (BBox{0, 0, 15, 15}));
}

TEST(Expand, EmptyAfterClipThrows) {
  try {
    expand_and_clip({200, 200, 210, 210}, 4, 4, 100, 100);
    FAIL() << "expected EmptyAfterClip";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyAfterClip);
  }
}

TEST(Expand, NegativeQueryThrows) {
  EXPECT_THROW(expand_and_clip({0, 0, 1, 1}, -1, 4, 100, 100), Error);
}

TEST(Expand, PropertyContainsBoundsAndStaysInImage) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 300.0);
  for (int t = 0; t < 2000; ++t) {
    const double x0 = u(rng), y0 = u(rng);
    const BBox bounds{x0, y0, x0 + u(rng) / 3, y0 + u(rng) / 3};
    const double qw = u(rng) / 2, qh = u(rng) / 2;
    const BBox raw = expand_box(bounds, qw, qh);
    EXPECT_EQ(raw.x_min, bounds.x_min - qw / 2);
    EXPECT_EQ(raw.y_max, bounds.y_max + qh / 2);
    BBox clipped;
    try {
      clipped = expand_and_clip(bounds, qw, qh, 256, 256);
    } catch (const Error&) {
      continue;
    }
    EXPECT_TRUE(BBox(0, 0, 256, 256).contains(clipped));
    EXPECT_TRUE(raw.contains(clipped));
  }
}

TEST(Quad, AxisAlignedRectangleIsValid) {
  const Quad q{{Point2{0, 0}, {10, 0}, {10, 5}, {0, 5}}};
  EXPECT_TRUE(q.valid());
  EXPECT_DOUBLE_EQ(q.signed_area2(), 100.0);
  EXPECT_EQ(q.hull(), (BBox{0, 0, 10, 5}));
}

TEST(Quad, MirroredWindingIsInvalid) {
  const Quad q{{Point2{10, 0}, {0, 0}, {0, 5}, {10, 5}}};
  EXPECT_FALSE(q.valid());
}

TEST(Quad, BowtieIsInvalid) {
  const Quad q{{Point2{0, 0}, {10, 0}, {0, 5}, {10, 5}}};
  EXPECT_FALSE(q.valid());
}

TEST(Quad, NonConvexIsInvalid) {
  const Quad q{{Point2{0, 0}, {10, 0}, {2, 2}, {0, 10}}};
  EXPECT_FALSE(q.valid());
}

TEST(Homography, IdentityMapsPointsToThemselves) {
  const Point2 p = apply_homography(HomographyMatrix::identity(), {3.5, -2});
  EXPECT_EQ(p, (Point2{3.5, -2}));
}

TEST(Homography, TranslationHand) {
  const Point2 p = apply_homography(HomographyMatrix::translation(4, -3), {1, 1});
  EXPECT_NEAR(p.x, 5.0, 1e-12);
  EXPECT_NEAR(p.y, -2.0, 1e-12);
}

TEST(Homography, LargeTranslationIsNotDegenerate) {
  EXPECT_NO_THROW(HomographyMatrix::translation(400, 380));
}

TEST(Homography, SingularMatrixRejected) {
  try {
    HomographyMatrix(HomographyMatrix::Storage{{{1, 2, 3}, {2, 4, 6}, {0, 0, 1}}});
    FAIL() << "expected DegenerateHomography";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateHomography);
  }
}

TEST(Homography, NonFiniteRejected) {
  EXPECT_THROW(HomographyMatrix(HomographyMatrix::Storage{{{1, 0, 0}, {0, std::nan(""), 0}, {0, 0, 1}}}), Error);
}

TEST(Homography, ScaleInvariantStorage) {
  const HomographyMatrix a(HomographyMatrix::Storage{{{2, 0.1, 5}, {0.2, 1.5, -3}, {1e-3, 0, 1}}});
  const HomographyMatrix b(HomographyMatrix::Storage{{{-6, -0.3, -15}, {-0.6, -4.5, 9}, {-3e-3, 0, -3}}});
  EXPECT_LT(a.max_abs_difference(b), 1e-12);
  EXPECT_DOUBLE_EQ(a(2, 2), 1.0);
}

TEST(Homography, PointAtInfinityThrows) {
  const HomographyMatrix h(HomographyMatrix::Storage{{{1, 0, 0}, {0, 1, 0}, {1, 0, 1}}});
  try {
    apply_homography(h, {-1, 0});
    FAIL() << "expected DegeneratePoint";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegeneratePoint);
  }
}

TEST(Homography, PropertyInverseRoundTrip) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 200.0);
  for (int t = 0; t < 200; ++t) {
    const HomographyMatrix h = test::random_homography(rng);
    const HomographyMatrix inv = h.inverse();
    for (int k = 0; k < 5; ++k) {
      const Point2 p{u(rng), u(rng)};
      const Point2 back = apply_homography(inv, apply_homography(h, p));
      EXPECT_NEAR(back.x, p.x, 1e-7);
      EXPECT_NEAR(back.y, p.y, 1e-7);
    }
  }
}

TEST(Homography, PropertyCompositionMatchesSequentialApplication) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 200.0);
  for (int t = 0; t < 200; ++t) {
    const HomographyMatrix a = test::random_homography(rng);
    const HomographyMatrix b = test::random_homography(rng);
    const Point2 p{u(rng), u(rng)};
    const Point2 seq = apply_homography(a, apply_homography(b, p));
    const Point2 comp = apply_homography(a * b, p);
    EXPECT_NEAR(seq.x, comp.x, 1e-7);
    EXPECT_NEAR(seq.y, comp.y, 1e-7);
  }
}

TEST(CoveringRect, FloorsCeilsAndClips) {
  const PixelRect r = covering_rect({-2.5, 3.2, 10.1, 99.0}, 50, 50);
  EXPECT_EQ(r.x0, 0);
  EXPECT_EQ(r.y0, 3);
  EXPECT_EQ(r.x1, 11);
  EXPECT_EQ(r.y1, 50);
}
