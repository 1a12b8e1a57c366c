#include <doctest.h>

#include <vector>

#include "test_util.hpp"
#include "tpose/kernels/kernels.hpp"

using namespace tpose;
using namespace tpose::kernels;

namespace {

struct DepthCase {
  std::vector<double> pred, gt;
  std::vector<std::uint8_t> mask;
};

DepthCase random_depth_case(Rng& rng, std::size_t n) {
  DepthCase c;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.3, 4.0);
    double p = g * rng.uniform(0.8, 1.3);
    if (rng.uniform() < 0.05) p = 0.0;
    c.gt.push_back(g);
    c.pred.push_back(p);
    c.mask.push_back(rng.uniform() < 0.7 ? 1 : 0);
  }
  return c;
}

void check_close(double a, double b) { CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b))); }

}  // namespace

TEST_CASE("scalar is always available and the table has every entry") {
  CHECK(isa_supported(Isa::Scalar));
  const KernelTable& t = table(Isa::Scalar);
  CHECK(t.depth_error_sums != nullptr);
  CHECK(t.normal_dots != nullptr);
  CHECK(t.unit_ray_row != nullptr);
  CHECK(isa_name(Isa::Scalar) == "scalar");
}

TEST_CASE("scalar depth sums by hand") {
  const std::vector<double> pred{1.0, 1.0, 2.0, 5.0}, gt{1.04, 1.30, 2.2, 0.0};
  const std::vector<std::uint8_t> mask{1, 1, 1, 1};
  const DepthErrorSums s = scalar::depth_error_sums(pred.data(), gt.data(), mask.data(), 4);
  CHECK(s.count == 3);
  CHECK(s.absolute == doctest::Approx(0.04 + 0.30 + 0.2));
  CHECK(s.within[0] == 1);
  // 2.2 / 2.0 lands on 1.1 and fails the strict test.
  CHECK(s.within[1] == 1);
  CHECK(s.within[2] == 2);
}

#if defined(TPOSE_HAVE_AVX2)
TEST_CASE("avx2 kernels match scalar") {
  if (!isa_supported(Isa::Avx2)) {
    MESSAGE("AVX2 not supported on this CPU; equivalence not exercised");
    return;
  }
  Rng rng(51);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 17u, 64u, 1001u, 65536u}) {
    const DepthCase c = random_depth_case(rng, n);
    const DepthErrorSums a = scalar::depth_error_sums(c.pred.data(), c.gt.data(), c.mask.data(), n);
    const DepthErrorSums b = avx2::depth_error_sums(c.pred.data(), c.gt.data(), c.mask.data(), n);
    CHECK(a.count == b.count);
    CHECK(a.within == b.within);
    check_close(b.squared, a.squared);
    check_close(b.absolute, a.absolute);
    check_close(b.relative, a.relative);

    std::vector<double> x(3 * n), y(3 * n), da(n), db(n);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    scalar::normal_dots(x.data(), y.data(), da.data(), n);
    avx2::normal_dots(x.data(), y.data(), db.data(), n);
    for (std::size_t i = 0; i < n; ++i) check_close(db[i], da[i]);
  }
  for (int width : {1, 3, 4, 5, 640, 1001}) {
    const double fx = rng.uniform(200, 800), fy = rng.uniform(200, 800);
    const double cx = rng.uniform(0, width), cy = rng.uniform(0, 480), v = rng.uniform(0, 480);
    std::vector<double> ra(3 * width), rb(3 * width);
    scalar::unit_ray_row(fx, fy, cx, cy, v, width, ra.data());
    avx2::unit_ray_row(fx, fy, cx, cy, v, width, rb.data());
    for (int i = 0; i < 3 * width; ++i) CHECK(std::abs(ra[i] - rb[i]) < 1e-15);
  }
}

TEST_CASE("active isa can be pinned") {
  const Isa before = active_isa();
  set_active_isa(Isa::Scalar);
  CHECK(active_isa() == Isa::Scalar);
  CHECK(&active() == &table(Isa::Scalar));
  if (isa_supported(Isa::Avx2)) {
    set_active_isa(Isa::Avx2);
    CHECK(active_isa() == Isa::Avx2);
  }
  set_active_isa(before);
}
#endif

TEST_CASE("scalar unit rays are unit length") {
  std::vector<double> out(3 * 50);
  scalar::unit_ray_row(300, 310, 25, 20, 7, 50, out.data());
  for (int i = 0; i < 50; ++i) {
    const Vec3 r(out[3 * i], out[3 * i + 1], out[3 * i + 2]);
    CHECK(std::abs(r.norm() - 1.0) < 1e-15);
    CHECK((r - Vec3((i - 25) / 300.0, (7 - 20) / 310.0, 1).normalized()).norm() < 1e-15);
  }
}
