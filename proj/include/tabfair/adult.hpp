#pragma once

#include <string>

#include "tabfair/data.hpp"

namespace tabfair {

// Loads the UCI Adult census file(s): train and test parts concatenated,
// comma-separated, with or without trailing periods on the income label.
// Drops fnlwgt, drops rows containing "?", binarizes native-country to
// US/non-US, standardizes the five continuous columns and one-hot encodes
// the rest. The encoded width must come out at 62; anything else aborts with
// the realized layout printed.
Dataset load_adult(const std::string& raw_path);

}  // namespace tabfair
