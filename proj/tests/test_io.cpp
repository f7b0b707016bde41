#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lumen/io.hpp"
#include "lumen/rng.hpp"

using namespace lumen;

TEST_CASE("fnv1a matches published vectors") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("format_double round-trips exactly") {
    for (double v : {1.0, -0.1, 3.141592653589793, 1e-300, 6.02e23, 0.0}) {
        CHECK(parse_double(format_double(v)) == v);
    }
}

TEST_CASE("csv round-trip is exact") {
    Table t;
    t.columns = {"a", "b"};
    t.values.resize(2, 2);
    t.values << 0.1, -2.5e-17, 3.0, 1e300;
    const Table back = from_csv(to_csv(t));
    REQUIRE(back.columns == t.columns);
    CHECK(back.values == t.values);
    CHECK(back.column("b")[1] == 1e300);
    CHECK_THROWS_AS(back.column("c"), IoError);
}

TEST_CASE("csv rejects ragged rows") {
    CHECK_THROWS_AS(from_csv("a,b\n1,2,3\n"), IoError);
}

TEST_CASE("model file round-trip") {
    ModelFile mf;
    mf.kind = "demo";
    mf.add_int("n", 42);
    mf.add_scalar("x", 0.1);
    Vector v(3);
    v << 1.0, -2.0, 0.5;
    mf.add_matrix_row("W", v);
    mf.add_matrix_row("W", 2.0 * v);
    const ModelFile back = ModelFile::parse(mf.serialize());
    CHECK(back.kind == "demo");
    CHECK(back.get_int("n") == 42);
    CHECK(back.get_scalar("x") == 0.1);
    const Matrix W = back.get_matrix("W");
    REQUIRE(W.rows() == 2);
    CHECK(W(1, 2) == 1.0);
    CHECK_THROWS_AS(back.get("missing"), IoError);
}

TEST_CASE("rng is deterministic and mappings behave") {
    Rng a(7), b(7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(123);
    double mean = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        mean += u;
    }
    mean /= n;
    CHECK(std::abs(mean - 0.5) < 0.01);

    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = r.normal();
        m1 += g;
        m2 += g * g;
    }
    m1 /= n;
    m2 /= n;
    CHECK(std::abs(m1) < 0.03);
    CHECK(std::abs(m2 - 1.0) < 0.05);

    for (int i = 0; i < 100; ++i) CHECK(r.uniform_int(7) < 7);
    const auto idx = shuffled_indices(10, 5);
    std::vector<std::size_t> sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
    CHECK(idx == shuffled_indices(10, 5));
}
