#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <vector>

#include "tabfair/matching.hpp"

using namespace tabfair;

namespace {

FeatureSchema synth_schema(int dims) {
    FeatureSchema sc;
    sc.label_name = "y";
    sc.protected_name = "s";
    sc.protected_values = {"a", "b"};
    for (int i = 0; i < dims; ++i) {
        FeatureGroup g;
        g.name = "f" + std::to_string(i);
        g.kind = GroupKind::Continuous;
        sc.groups.push_back(g);
    }
    return sc;
}

Dataset synth_dataset(Rng& rng, int n, int dims, double dup_chance = 0.0) {
    Dataset ds;
    ds.schema = synth_schema(dims);
    ds.X = Tensor(n, dims);
    ds.y.resize(n);
    ds.s.resize(n);
    for (int r = 0; r < n; ++r) {
        if (r > 0 && rng.uniform() < dup_chance) {
            // exact duplicate of an earlier row: exercises tie-breaking
            int src = static_cast<int>(rng.below(r));
            for (int c = 0; c < dims; ++c) ds.X.at(r, c) = ds.X.at(src, c);
        } else {
            for (int c = 0; c < dims; ++c)
                ds.X.at(r, c) = std::round(rng.uniform(-2, 2) * 4) / 4.0;  // coarse grid
        }
        ds.y[r] = static_cast<int>(rng.below(2));
        ds.s[r] = static_cast<int>(rng.below(2));
    }
    // guarantee non-empty strata
    ds.y[0] = 0; ds.s[0] = 0;
    ds.y[1] = 0; ds.s[1] = 1;
    ds.y[2] = 1; ds.s[2] = 0;
    ds.y[3] = 1; ds.s[3] = 1;
    ds.provenance.role = "synthetic";
    return ds;
}

// The independent oracle: scan every candidate, order by (d2, source index).
std::vector<std::pair<int, double>> brute_force(const Dataset& ds, int y, int s,
                                                const double* x, int k) {
    std::vector<std::pair<double, int>> all;
    for (int r = 0; r < ds.n(); ++r)
        if (ds.y[r] == y && ds.s[r] == s)
            all.emplace_back(euclidean_d2(x, &ds.X.v[static_cast<std::size_t>(r) * ds.dims()],
                                          ds.dims()),
                             r);
    std::sort(all.begin(), all.end());
    std::vector<std::pair<int, double>> out;
    for (std::size_t i = 0; i < all.size() && static_cast<int>(i) < k; ++i)
        out.emplace_back(all[i].second, all[i].first);
    return out;
}

}  // namespace

TEST_CASE("index queries equal the brute-force oracle on 200 random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        // alternate between the kd-tree regime and the scan regime
        int dims = trial % 2 == 0 ? 2 + static_cast<int>(rng.below(8)) : 40;
        int n = 20 + static_cast<int>(rng.below(100));
        Dataset ds = synth_dataset(rng, n, dims, 0.3);
        MatchIndex index = build_index(ds);

        int queries = 5;
        for (int q = 0; q < queries; ++q) {
            int row = static_cast<int>(rng.below(n));
            int y = static_cast<int>(rng.below(2));
            int s = static_cast<int>(rng.below(2));
            int k = 1 + static_cast<int>(rng.below(4));
            auto got = index.query(y, s, &ds.X.v[static_cast<std::size_t>(row) * dims], k);
            auto want = brute_force(ds, y, s, &ds.X.v[static_cast<std::size_t>(row) * dims], k);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i].first == want[i].first);    // identical source row
                CHECK(got[i].second == want[i].second);  // identical distance
            }
        }
    }
}

TEST_CASE("four records covering all strata form four singleton buckets") {
    Rng rng(5);
    Dataset ds = synth_dataset(rng, 4, 3);
    MatchIndex index = build_index(ds);
    for (int y = 0; y < 2; ++y)
        for (int s = 0; s < 2; ++s) {
            CHECK(index.bucket(y, s).X.rows == 1);
            CHECK(index.bucket(y, s).src.size() == 1);
        }
}

TEST_CASE("bucket sizes match independently counted strata") {
    Rng rng(6);
    Dataset ds = synth_dataset(rng, 500, 5);
    MatchIndex index = build_index(ds);
    std::map<std::pair<int, int>, int> counts;
    for (int i = 0; i < ds.n(); ++i) ++counts[{ds.y[i], ds.s[i]}];
    for (int y = 0; y < 2; ++y)
        for (int s = 0; s < 2; ++s)
            CHECK(index.bucket(y, s).X.rows == counts[{y, s}]);
}

TEST_CASE("an exact opposite-group duplicate is matched at distance zero") {
    Rng rng(7);
    Dataset ds = synth_dataset(rng, 30, 4);
    // make row 20 a duplicate of row 10 with flipped s, same y
    for (int c = 0; c < 4; ++c) ds.X.at(20, c) = ds.X.at(10, c);
    ds.y[20] = ds.y[10];
    ds.s[20] = 1 - ds.s[10];
    MatchIndex index = build_index(ds);

    NnResult r = nn_contrastive(index, ds, 10, 1);
    REQUIRE(r.items.size() == 1);
    CHECK(r.items[0].target_s == 1 - ds.s[10]);
    CHECK(r.items[0].inherited_y == ds.y[10]);
    std::vector<double> want(&ds.X.v[20 * 4], &ds.X.v[20 * 4] + 4);
    CHECK(r.items[0].x_bar == want);
}

TEST_CASE("every contrastive flips s, keeps y, and copies a real record") {
    Rng rng(8);
    Dataset ds = synth_dataset(rng, 200, 6);
    MatchIndex index = build_index(ds);
    ContrastiveSet cs = nn_contrastive_all(index, ds, 1);
    REQUIRE(cs.items.size() == static_cast<std::size_t>(ds.n()));
    for (auto& e : cs.items) {
        CHECK(e.target_s != ds.s[e.source_index]);
        CHECK(e.inherited_y == ds.y[e.source_index]);
    }
    CHECK(cs.schema_hash == ds.schema.hash());
}

TEST_CASE("k beyond the bucket size truncates with a flag") {
    Rng rng(9);
    Dataset ds = synth_dataset(rng, 8, 3);
    MatchIndex index = build_index(ds);
    int row = 0;  // y=0, s=0; opposite bucket (0, 1) is small
    int bucket_n = index.bucket(ds.y[row], 1 - ds.s[row]).X.rows;
    NnResult r = nn_contrastive(index, ds, row, bucket_n + 5);
    CHECK(r.truncated);
    CHECK(static_cast<int>(r.items.size()) == bucket_n);
}

TEST_CASE("an empty stratum is reported by name") {
    Rng rng(10);
    Dataset ds = synth_dataset(rng, 20, 3);
    for (int i = 0; i < ds.n(); ++i)
        if (ds.y[i] == 1 && ds.s[i] == 1) ds.s[i] = 0;  // empty the (1, b) cell
    CHECK_THROWS_WITH_AS(build_index(ds), doctest::Contains("unmatchable stratum"),
                         ContractViolation);
}

TEST_CASE("euclidean distance is symmetric with zero self-distance") {
    Rng rng(11);
    Tensor a(1, 10), b(1, 10);
    for (int i = 0; i < 10; ++i) {
        a.v[i] = rng.uniform(-3, 3);
        b.v[i] = rng.uniform(-3, 3);
    }
    CHECK(euclidean_d2(a.v.data(), b.v.data(), 10) ==
          euclidean_d2(b.v.data(), a.v.data(), 10));
    CHECK(euclidean_d2(a.v.data(), a.v.data(), 10) == 0.0);
}

TEST_CASE("metric descriptor round-trips through serialization") {
    MetricDescriptor m;
    MetricDescriptor back = MetricDescriptor::from_json(m.to_json());
    CHECK(back.name == m.name);
}

TEST_CASE("contrastive sets round-trip through the CSV format") {
    Rng rng(12);
    Dataset ds = synth_dataset(rng, 40, 4);
    MatchIndex index = build_index(ds);
    ContrastiveSet cs = nn_contrastive_all(index, ds, 1);

    std::string path =
        (std::filesystem::temp_directory_path() / "tabfair_contrastives.csv").string();
    save_contrastives(cs, path);
    ContrastiveSet back = load_contrastives(path);
    std::remove(path.c_str());

    CHECK(back.schema_hash == cs.schema_hash);
    CHECK(back.source_provenance == cs.source_provenance);
    REQUIRE(back.items.size() == cs.items.size());
    for (std::size_t i = 0; i < cs.items.size(); ++i) {
        CHECK(back.items[i].source_index == cs.items[i].source_index);
        CHECK(back.items[i].target_s == cs.items[i].target_s);
        CHECK(back.items[i].inherited_y == cs.items[i].inherited_y);
        CHECK(back.items[i].x_bar == cs.items[i].x_bar);  // exact round trip
    }
}
