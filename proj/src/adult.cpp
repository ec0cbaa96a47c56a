#include "tabfair/adult.hpp"

#include <iostream>
#include <sstream>

namespace tabfair {

Dataset load_adult(const std::string& raw_path) {
    // UCI Adult column order. fnlwgt is a census sampling weight, not a
    // feature; education-num duplicates education ordinally and is kept as
    // the paper's feature count requires. native-country is binarized to
    // US/non-US to avoid 41 near-empty one-hot columns.
    const std::vector<ColumnSpec> columns = {
        {"age", ColumnRole::Continuous, {}},
        {"workclass", ColumnRole::Categorical, {}},
        {"fnlwgt", ColumnRole::Drop, {}},
        {"education", ColumnRole::Categorical, {}},
        {"education-num", ColumnRole::Continuous, {}},
        {"marital-status", ColumnRole::Categorical, {}},
        {"occupation", ColumnRole::Categorical, {}},
        {"relationship", ColumnRole::Categorical, {}},
        {"race", ColumnRole::Categorical, {}},
        {"sex", ColumnRole::Protected, {}},
        {"capital-gain", ColumnRole::Continuous, {}},
        {"capital-loss", ColumnRole::Continuous, {}},
        {"hours-per-week", ColumnRole::Continuous, {}},
        {"native-country", ColumnRole::Categorical, std::string("United-States")},
        {"income", ColumnRole::Label, {}},
    };

    Dataset ds = load_table(raw_path, columns, ">50K");

    if (ds.schema.total_dims() != 62) {
        std::ostringstream msg;
        msg << "adult encoding produced " << ds.schema.total_dims()
            << " feature columns instead of 62; realized layout:\n";
        for (auto& g : ds.schema.groups)
            msg << "  " << g.name << ": "
                << (g.kind == GroupKind::Continuous ? 1 : g.width()) << "\n";
        throw ContractViolation(msg.str());
    }
    return ds;
}

}  // namespace tabfair
