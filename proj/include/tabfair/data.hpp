#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tabfair/common.hpp"
#include "tabfair/tensor.hpp"

namespace tabfair {

enum class GroupKind { Continuous, Categorical };

// One encoded feature group: a single standardized continuous column or a
// one-hot block with one column per category.
struct FeatureGroup {
    std::string name;
    GroupKind kind = GroupKind::Continuous;
    std::vector<std::string> categories;  // categorical only, sorted
    double mean = 0.0;                    // continuous only: standardization stats
    double stddev = 1.0;

    int width() const {
        return kind == GroupKind::Continuous ? 1 : static_cast<int>(categories.size());
    }
};

// Ordered description of the encoded feature space. The protected attribute
// and the label are carried next to the matrix, never inside it.
struct FeatureSchema {
    std::vector<FeatureGroup> groups;
    std::string label_name;
    std::string protected_name;
    std::vector<std::string> protected_values;  // sorted; s is an index into this

    int total_dims() const;
    int group_offset(int group_index) const;
    std::vector<std::string> column_names() const;

    // Stable textual form; its hash ties models, checkpoints and contrastive
    // files to the exact encoding they were built against.
    std::string canonical() const;
    std::uint64_t hash() const { return fnv1a64(canonical()); }

    std::string to_json() const;
    static FeatureSchema from_json(const std::string& text);
};

struct Provenance {
    std::uint64_t source_hash = 0;  // hash of the raw input file bytes
    std::uint64_t split_seed = 0;
    int repeat = 0;
    std::string role;  // "full", "train", "test", "subsample"

    std::uint64_t hash() const;
};

// Immutable once built: every operation below returns a new Dataset.
struct Dataset {
    FeatureSchema schema;
    Tensor X;            // (n, total_dims), row per record
    std::vector<int> y;  // 0/1
    std::vector<int> s;  // index into schema.protected_values
    Provenance provenance;

    int n() const { return X.rows; }
    int dims() const { return X.cols; }
};

// Generic tabular ingestion --------------------------------------------------

enum class ColumnRole { Continuous, Categorical, Protected, Label, Drop };

struct ColumnSpec {
    std::string name;
    ColumnRole role = ColumnRole::Drop;
    // Categorical values other than keep_value collapse to "Other" when set
    // (used to binarize native-country to US/non-US).
    std::optional<std::string> keep_value;
};

// Parses a headerless CSV with the given column layout. Rows containing the
// missing marker "?" are dropped; categories are collected from the data and
// sorted; continuous columns are standardized to mean 0 / std 1; categories
// never observed are merged away so no encoded column is constant.
Dataset load_table(const std::string& path, const std::vector<ColumnSpec>& columns,
                   const std::string& positive_label);

// Dataset persistence: <stem>.csv (encoded matrix with y, s) plus
// <stem>.schema.json sidecar carrying schema and provenance.
void save_encoded(const Dataset& ds, const std::string& stem);
Dataset load_encoded(const std::string& stem);

// Uniformly random, disjoint, exhaustive split; continuous columns are
// re-standardized against the train subset so the train invariant
// (mean 0, std 1) holds exactly, and the same affine map is applied to test.
std::pair<Dataset, Dataset> split(const Dataset& ds, int test_n, std::uint64_t seed);

// Stratified (by y) subsample of one protected group to exactly `count`
// records; all other groups pass through untouched. Preserves the group's
// positive fraction to the nearest record.
Dataset subsample_group(const Dataset& ds, int group, int count, std::uint64_t seed);

// The imbalance-sweep primitive: shrink the minority protected group (the one
// with the fewest records) to minority_count.
Dataset subsample_majority(const Dataset& ds, int minority_count, std::uint64_t seed);

// Round-trip helpers (also used by tests and by hardening).
std::vector<std::string> decode_row(const FeatureSchema& schema, const double* x);
std::vector<double> encode_row(const FeatureSchema& schema,
                               const std::vector<std::string>& raw);

}  // namespace tabfair
