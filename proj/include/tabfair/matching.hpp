#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tabfair/contrastive.hpp"
#include "tabfair/data.hpp"

namespace tabfair {

// Distance metric over encoded vectors. Only "euclidean" is implemented; the
// descriptor exists so indexes and exports state what they were built with.
struct MetricDescriptor {
    std::string name = "euclidean";

    std::string to_json() const;
    static MetricDescriptor from_json(const std::string& text);
};

double euclidean_d2(const double* a, const double* b, int dims);

class KdTree;

// Exact nearest-neighbour index over the (y, s) strata of a dataset.
// Low-dimensional buckets get a kd-tree; one-hot-heavy spaces (dims > 30,
// e.g. Adult) fall back to a scan — both return exactly the brute-force
// answer under the (distance, lowest source index) order.
class MatchIndex {
public:
    struct Bucket {
        Tensor X;                      // one row per record in the stratum
        std::vector<int> src;          // ascending source row ids
        std::shared_ptr<KdTree> tree;  // null when the scan path is used
    };

    static constexpr int kTreeMaxDims = 30;

    MatchIndex(const Dataset& ds, MetricDescriptor metric);

    const Bucket& bucket(int y, int s) const;
    int n_protected() const { return n_s_; }
    int dims() const { return dims_; }
    const MetricDescriptor& metric() const { return metric_; }
    std::uint64_t schema_hash() const { return schema_hash_; }
    std::uint64_t provenance_hash() const { return provenance_hash_; }

    // k nearest records from bucket (y, s), as (source row, squared distance),
    // ties broken toward the lowest source index. Returns fewer than k only
    // when the bucket is smaller than k.
    std::vector<std::pair<int, double>> query(int y, int s, const double* x, int k) const;

private:
    std::vector<Bucket> buckets_;  // indexed y * n_s + s
    int n_s_ = 0;
    int dims_ = 0;
    MetricDescriptor metric_;
    std::uint64_t schema_hash_ = 0;
    std::uint64_t provenance_hash_ = 0;
};

MatchIndex build_index(const Dataset& ds, MetricDescriptor metric = {});

struct NnResult {
    std::vector<ContrastiveExample> items;
    bool truncated = false;  // k exceeded some bucket's size
};

// The k nearest same-label records from every opposite protected group.
NnResult nn_contrastive(const MatchIndex& index, const Dataset& ds, int row, int k);

// One pass over the whole dataset (k matches per record and opposite group).
ContrastiveSet nn_contrastive_all(const MatchIndex& index, const Dataset& ds, int k);

}  // namespace tabfair
