#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tabfair/data.hpp"

namespace tabfair {

// A synthesized or matched counterpart of one source record with the
// protected attribute intervened to target_s. The label is inherited from
// the source, never predicted.
struct ContrastiveExample {
    int source_index = -1;
    int target_s = -1;
    std::vector<double> x_bar;
    int inherited_y = -1;
};

// The common container + file format shared by the GAN and nearest-neighbour
// generators, so downstream consumers cannot tell them apart.
struct ContrastiveSet {
    std::uint64_t schema_hash = 0;
    std::uint64_t source_provenance = 0;  // Provenance::hash of the fit dataset
    std::vector<ContrastiveExample> items;
};

void save_contrastives(const ContrastiveSet& cs, const std::string& path);
ContrastiveSet load_contrastives(const std::string& path);

}  // namespace tabfair
