#include "tabfair/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tabfair {

std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractViolation("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string trim(std::string_view sv) {
    std::size_t a = 0, b = sv.size();
    while (a < b && std::isspace(static_cast<unsigned char>(sv[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(sv[b - 1]))) --b;
    return std::string(sv.substr(a, b - a));
}

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            out.push_back(trim(line.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

double parse_double(const std::string& tok, std::size_t line_no) {
    double v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw ParseError("line " + std::to_string(line_no) + ": not a number: '" + tok + "'");
    return v;
}

// Two-pass mean/std (population) — accurate enough for the exact-ish
// standardization invariant on tens of thousands of rows.
std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double m = 0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(xs.size()))};
}

json group_to_json(const FeatureGroup& g) {
    json j;
    j["name"] = g.name;
    if (g.kind == GroupKind::Continuous) {
        j["kind"] = "continuous";
        j["mean"] = g.mean;
        j["std"] = g.stddev;
    } else {
        j["kind"] = "categorical";
        j["categories"] = g.categories;
    }
    return j;
}

FeatureGroup group_from_json(const json& j) {
    FeatureGroup g;
    g.name = j.at("name").get<std::string>();
    if (j.at("kind") == "continuous") {
        g.kind = GroupKind::Continuous;
        g.mean = j.at("mean").get<double>();
        g.stddev = j.at("std").get<double>();
    } else {
        g.kind = GroupKind::Categorical;
        g.categories = j.at("categories").get<std::vector<std::string>>();
    }
    return g;
}

}  // namespace

int FeatureSchema::total_dims() const {
    int d = 0;
    for (auto& g : groups) d += g.width();
    return d;
}

int FeatureSchema::group_offset(int group_index) const {
    require(group_index >= 0 && group_index < static_cast<int>(groups.size()),
            "group index out of range");
    int off = 0;
    for (int i = 0; i < group_index; ++i) off += groups[i].width();
    return off;
}

std::vector<std::string> FeatureSchema::column_names() const {
    std::vector<std::string> names;
    for (auto& g : groups) {
        if (g.kind == GroupKind::Continuous) {
            names.push_back(g.name);
        } else {
            for (auto& c : g.categories) names.push_back(g.name + "=" + c);
        }
    }
    return names;
}

std::string FeatureSchema::canonical() const {
    std::ostringstream ss;
    ss << "label=" << label_name << ";protected=" << protected_name << "{";
    for (std::size_t i = 0; i < protected_values.size(); ++i)
        ss << (i ? "," : "") << protected_values[i];
    ss << "};";
    for (auto& g : groups) {
        ss << "group=" << g.name << ":";
        if (g.kind == GroupKind::Continuous) {
            ss << "cont:" << format_double(g.mean) << ":" << format_double(g.stddev);
        } else {
            ss << "cat:";
            for (std::size_t i = 0; i < g.categories.size(); ++i)
                ss << (i ? "," : "") << g.categories[i];
        }
        ss << ";";
    }
    return ss.str();
}

std::string FeatureSchema::to_json() const {
    json j;
    j["label"] = label_name;
    j["protected"] = protected_name;
    j["protected_values"] = protected_values;
    j["groups"] = json::array();
    for (auto& g : groups) j["groups"].push_back(group_to_json(g));
    return j.dump(2);
}

FeatureSchema FeatureSchema::from_json(const std::string& text) {
    json j = json::parse(text);
    FeatureSchema s;
    s.label_name = j.at("label").get<std::string>();
    s.protected_name = j.at("protected").get<std::string>();
    s.protected_values = j.at("protected_values").get<std::vector<std::string>>();
    for (auto& gj : j.at("groups")) s.groups.push_back(group_from_json(gj));
    return s;
}

std::uint64_t Provenance::hash() const {
    std::string tag = "src=" + std::to_string(source_hash) +
                      ";seed=" + std::to_string(split_seed) +
                      ";repeat=" + std::to_string(repeat) + ";role=" + role;
    return fnv1a64(tag);
}

Dataset load_table(const std::string& path, const std::vector<ColumnSpec>& columns,
                   const std::string& positive_label) {
    require(!columns.empty(), "load_table: empty column spec");
    int label_col = -1, prot_col = -1;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i].role == ColumnRole::Label) {
            require(label_col < 0, "load_table: multiple label columns");
            label_col = static_cast<int>(i);
        }
        if (columns[i].role == ColumnRole::Protected) {
            require(prot_col < 0, "load_table: multiple protected columns");
            prot_col = static_cast<int>(i);
        }
    }
    require(label_col >= 0, "load_table: no label column");
    require(prot_col >= 0, "load_table: no protected column");

    std::string raw = read_file(path);
    std::uint64_t source_hash = fnv1a64(raw);

    // Tokenize, filter comment/header/missing rows.
    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 0, start = 0;
    while (start <= raw.size()) {
        std::size_t end = raw.find('\n', start);
        if (end == std::string::npos) end = raw.size();
        std::string_view line(raw.data() + start, end - start);
        start = end + 1;
        ++line_no;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '|') continue;
        std::vector<std::string> toks = split_csv_line(stripped);
        if (toks.size() == 1 && toks[0].empty()) continue;
        // tolerate a header row naming the first column
        if (!toks.empty() && toks[0] == columns[0].name) continue;
        if (toks.size() != columns.size())
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(columns.size()) + " columns, got " +
                             std::to_string(toks.size()));
        bool missing = false;
        for (auto& t : toks)
            if (t == "?") missing = true;
        if (missing) continue;
        // trailing-period label variant (UCI adult.test)
        std::string& lab = toks[label_col];
        if (!lab.empty() && lab.back() == '.') lab.pop_back();
        // value collapsing (e.g. native-country -> US / Other)
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i].keep_value && toks[i] != *columns[i].keep_value)
                toks[i] = "Other";
        rows.push_back(std::move(toks));
    }
    require(!rows.empty(), "load_table: no usable rows in " + path);

    // Collect category sets and protected values.
    std::set<std::string> prot_set;
    std::vector<std::set<std::string>> cats(columns.size());
    for (auto& r : rows) {
        prot_set.insert(r[prot_col]);
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i].role == ColumnRole::Categorical) cats[i].insert(r[i]);
    }

    FeatureSchema schema;
    schema.label_name = columns[label_col].name;
    schema.protected_name = columns[prot_col].name;
    schema.protected_values.assign(prot_set.begin(), prot_set.end());

    std::vector<int> group_col;  // source column per group
    for (std::size_t i = 0; i < columns.size(); ++i) {
        const ColumnSpec& c = columns[i];
        if (c.role == ColumnRole::Continuous) {
            FeatureGroup g;
            g.name = c.name;
            g.kind = GroupKind::Continuous;
            schema.groups.push_back(g);
            group_col.push_back(static_cast<int>(i));
        } else if (c.role == ColumnRole::Categorical) {
            require(cats[i].size() >= 2, "column '" + c.name +
                                             "' has a single value; its one-hot block "
                                             "would be constant");
            FeatureGroup g;
            g.name = c.name;
            g.kind = GroupKind::Categorical;
            g.categories.assign(cats[i].begin(), cats[i].end());
            schema.groups.push_back(g);
            group_col.push_back(static_cast<int>(i));
        }
    }

    const int n = static_cast<int>(rows.size());
    const int d = schema.total_dims();
    Dataset ds;
    ds.X = Tensor(n, d);
    ds.y.resize(n);
    ds.s.resize(n);

    for (int r = 0; r < n; ++r) {
        auto& toks = rows[r];
        ds.y[r] = toks[label_col] == positive_label ? 1 : 0;
        auto it = std::lower_bound(schema.protected_values.begin(),
                                   schema.protected_values.end(), toks[prot_col]);
        ds.s[r] = static_cast<int>(it - schema.protected_values.begin());
        int off = 0;
        for (std::size_t gi = 0; gi < schema.groups.size(); ++gi) {
            FeatureGroup& g = schema.groups[gi];
            const std::string& tok = toks[group_col[gi]];
            if (g.kind == GroupKind::Continuous) {
                ds.X.at(r, off) = parse_double(tok, static_cast<std::size_t>(r) + 1);
                off += 1;
            } else {
                auto ct = std::lower_bound(g.categories.begin(), g.categories.end(), tok);
                ds.X.at(r, off + static_cast<int>(ct - g.categories.begin())) = 1.0;
                off += g.width();
            }
        }
    }

    // Standardize continuous columns in place and record the affine map.
    int off = 0;
    for (auto& g : schema.groups) {
        if (g.kind == GroupKind::Continuous) {
            std::vector<double> col(n);
            for (int r = 0; r < n; ++r) col[r] = ds.X.at(r, off);
            auto [m, sd] = mean_std(col);
            // a single record cannot be standardized; center it and move on
            require(sd > 0 || n == 1,
                    "column '" + g.name + "' is constant; cannot standardize");
            if (sd == 0) sd = 1.0;
            g.mean = m;
            g.stddev = sd;
            for (int r = 0; r < n; ++r) ds.X.at(r, off) = (col[r] - m) / sd;
        }
        off += g.width();
    }

    ds.schema = schema;
    ds.provenance = Provenance{source_hash, 0, 0, "full"};
    return ds;
}

void save_encoded(const Dataset& ds, const std::string& stem) {
    json meta;
    meta["version"] = 1;
    meta["source_hash"] = ds.provenance.source_hash;
    meta["split_seed"] = ds.provenance.split_seed;
    meta["repeat"] = ds.provenance.repeat;
    meta["role"] = ds.provenance.role;
    meta["schema"] = json::parse(ds.schema.to_json());
    std::ofstream sj(stem + ".schema.json");
    require(static_cast<bool>(sj), "cannot write " + stem + ".schema.json");
    sj << meta.dump(2) << "\n";

    std::ofstream out(stem + ".csv");
    require(static_cast<bool>(out), "cannot write " + stem + ".csv");
    out << "y,s";
    for (auto& name : ds.schema.column_names()) {
        require(name.find(',') == std::string::npos, "column name contains a comma");
        out << "," << name;
    }
    out << "\n";
    for (int r = 0; r < ds.n(); ++r) {
        out << ds.y[r] << "," << ds.s[r];
        for (int c = 0; c < ds.dims(); ++c) out << "," << format_double(ds.X.at(r, c));
        out << "\n";
    }
}

Dataset load_encoded(const std::string& stem) {
    json meta = json::parse(read_file(stem + ".schema.json"));
    Dataset ds;
    ds.schema = FeatureSchema::from_json(meta.at("schema").dump());
    ds.provenance.source_hash = meta.at("source_hash").get<std::uint64_t>();
    ds.provenance.split_seed = meta.at("split_seed").get<std::uint64_t>();
    ds.provenance.repeat = meta.at("repeat").get<int>();
    ds.provenance.role = meta.at("role").get<std::string>();

    std::string raw = read_file(stem + ".csv");
    std::vector<std::string> expect = ds.schema.column_names();
    const int d = ds.schema.total_dims();

    std::size_t start = 0, line_no = 0;
    std::vector<std::vector<double>> xrows;
    while (start < raw.size()) {
        std::size_t end = raw.find('\n', start);
        if (end == std::string::npos) end = raw.size();
        std::string_view line(raw.data() + start, end - start);
        start = end + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> toks = split_csv_line(line);
        if (line_no == 1) {
            require(static_cast<int>(toks.size()) == d + 2 && toks[0] == "y" && toks[1] == "s",
                    "encoded csv header does not match schema");
            for (int c = 0; c < d; ++c)
                require(toks[c + 2] == expect[c], "encoded csv column mismatch: " + toks[c + 2]);
            continue;
        }
        if (static_cast<int>(toks.size()) != d + 2)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(d + 2) + " fields");
        ds.y.push_back(static_cast<int>(parse_double(toks[0], line_no)));
        ds.s.push_back(static_cast<int>(parse_double(toks[1], line_no)));
        std::vector<double> row(d);
        for (int c = 0; c < d; ++c) row[c] = parse_double(toks[c + 2], line_no);
        xrows.push_back(std::move(row));
    }
    ds.X = Tensor(static_cast<int>(xrows.size()), d);
    for (std::size_t r = 0; r < xrows.size(); ++r)
        std::copy(xrows[r].begin(), xrows[r].end(),
                  ds.X.v.begin() + static_cast<std::ptrdiff_t>(r) * d);
    return ds;
}

namespace {

Dataset take_rows(const Dataset& ds, const std::vector<int>& idx, const char* role,
                  std::uint64_t seed) {
    Dataset out;
    out.schema = ds.schema;
    out.X = Tensor(static_cast<int>(idx.size()), ds.dims());
    out.y.reserve(idx.size());
    out.s.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        for (int c = 0; c < ds.dims(); ++c) out.X.at(static_cast<int>(r), c) = ds.X.at(idx[r], c);
        out.y.push_back(ds.y[idx[r]]);
        out.s.push_back(ds.s[idx[r]]);
    }
    out.provenance = ds.provenance;
    out.provenance.split_seed = seed;
    out.provenance.role = role;
    return out;
}

// Re-fit the continuous standardization on `fit_to` and apply the same affine
// map to every dataset in `apply_to`, composing the schema statistics so that
// decoding still recovers raw values.
void restandardize(Dataset& fit_to, std::vector<Dataset*> apply_to) {
    int off = 0;
    for (std::size_t gi = 0; gi < fit_to.schema.groups.size(); ++gi) {
        FeatureGroup& g = fit_to.schema.groups[gi];
        if (g.kind == GroupKind::Continuous) {
            std::vector<double> col(fit_to.n());
            for (int r = 0; r < fit_to.n(); ++r) col[r] = fit_to.X.at(r, off);
            auto [m, sd] = mean_std(col);
            require(sd > 0 || fit_to.n() == 1,
                    "train split leaves column '" + g.name + "' constant");
            if (sd == 0) sd = 1.0;
            double new_mean = g.mean + g.stddev * m;
            double new_std = g.stddev * sd;
            for (Dataset* d : apply_to) {
                for (int r = 0; r < d->n(); ++r)
                    d->X.at(r, off) = (d->X.at(r, off) - m) / sd;
                d->schema.groups[gi].mean = new_mean;
                d->schema.groups[gi].stddev = new_std;
            }
        }
        off += g.width();
    }
}

}  // namespace

std::pair<Dataset, Dataset> split(const Dataset& ds, int test_n, std::uint64_t seed) {
    require(test_n >= 0 && test_n < ds.n(), "split: test_n must be in [0, n)");
    std::vector<int> idx(ds.n());
    for (int i = 0; i < ds.n(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    std::vector<int> test_idx(idx.begin(), idx.begin() + test_n);
    std::vector<int> train_idx(idx.begin() + test_n, idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(train_idx.begin(), train_idx.end());

    Dataset train = take_rows(ds, train_idx, "train", seed);
    Dataset test = take_rows(ds, test_idx, "test", seed);
    restandardize(train, {&train, &test});
    return {std::move(train), std::move(test)};
}

Dataset subsample_group(const Dataset& ds, int group, int count, std::uint64_t seed) {
    require(group >= 0 && group < static_cast<int>(ds.schema.protected_values.size()),
            "subsample_group: bad group");
    std::vector<int> pos, neg, rest;
    for (int i = 0; i < ds.n(); ++i) {
        if (ds.s[i] != group) rest.push_back(i);
        else if (ds.y[i] == 1) pos.push_back(i);
        else neg.push_back(i);
    }
    const int avail = static_cast<int>(pos.size() + neg.size());
    require(count >= 0 && count <= avail,
            "subsample_group: requested " + std::to_string(count) + " of " +
                std::to_string(avail) + " available in group '" +
                ds.schema.protected_values[group] + "'");

    // Stratify by y: keep the group's positive fraction to the nearest record.
    double frac = avail ? static_cast<double>(pos.size()) / avail : 0.0;
    int n_pos = static_cast<int>(std::llround(frac * count));
    n_pos = std::min(n_pos, static_cast<int>(pos.size()));
    n_pos = std::max(n_pos, count - static_cast<int>(neg.size()));
    int n_neg = count - n_pos;

    Rng rng(seed);
    Rng rp = rng.child(1), rn = rng.child(2);
    rp.shuffle(pos);
    rn.shuffle(neg);
    std::vector<int> keep(rest);
    keep.insert(keep.end(), pos.begin(), pos.begin() + n_pos);
    keep.insert(keep.end(), neg.begin(), neg.begin() + n_neg);
    std::sort(keep.begin(), keep.end());
    return take_rows(ds, keep, "subsample", seed);
}

Dataset subsample_majority(const Dataset& ds, int minority_count, std::uint64_t seed) {
    const int k = static_cast<int>(ds.schema.protected_values.size());
    require(k >= 2, "subsample_majority: need at least two protected groups");
    std::vector<int> counts(k, 0);
    for (int v : ds.s) ++counts[v];
    int minority = 0;
    for (int g = 1; g < k; ++g)
        if (counts[g] < counts[minority]) minority = g;
    return subsample_group(ds, minority, minority_count, seed);
}

std::vector<std::string> decode_row(const FeatureSchema& schema, const double* x) {
    std::vector<std::string> out;
    int off = 0;
    for (auto& g : schema.groups) {
        if (g.kind == GroupKind::Continuous) {
            out.push_back(format_double(x[off] * g.stddev + g.mean));
        } else {
            int best = 0;
            for (int c = 1; c < g.width(); ++c)
                if (x[off + c] > x[off + best]) best = c;
            out.push_back(g.categories[best]);
        }
        off += g.width();
    }
    return out;
}

std::vector<double> encode_row(const FeatureSchema& schema,
                               const std::vector<std::string>& raw) {
    require(raw.size() == schema.groups.size(), "encode_row: wrong value count");
    std::vector<double> x(schema.total_dims(), 0.0);
    int off = 0;
    for (std::size_t gi = 0; gi < schema.groups.size(); ++gi) {
        const FeatureGroup& g = schema.groups[gi];
        if (g.kind == GroupKind::Continuous) {
            x[off] = (parse_double(raw[gi], gi) - g.mean) / g.stddev;
        } else {
            auto it = std::find(g.categories.begin(), g.categories.end(), raw[gi]);
            require(it != g.categories.end(),
                    "encode_row: unknown category '" + raw[gi] + "' for " + g.name);
            x[off + static_cast<int>(it - g.categories.begin())] = 1.0;
        }
        off += g.width();
    }
    return x;
}

}  // namespace tabfair
