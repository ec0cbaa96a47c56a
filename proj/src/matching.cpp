#include "tabfair/matching.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace tabfair {

namespace {

// Sorted best-k candidates under the exact (squared distance, source index)
// order; the back element is the current worst.
struct BestK {
    int k;
    std::vector<std::pair<double, int>> heap;  // (d2, src), ascending

    bool full() const { return static_cast<int>(heap.size()) == k; }
    double worst_d2() const { return heap.back().first; }

    void offer(double d2, int src) {
        std::pair<double, int> cand{d2, src};
        if (full() && !(cand < heap.back())) return;
        auto pos = std::lower_bound(heap.begin(), heap.end(), cand);
        heap.insert(pos, cand);
        if (static_cast<int>(heap.size()) > k) heap.pop_back();
    }
};

}  // namespace

double euclidean_d2(const double* a, const double* b, int dims) {
    double acc = 0;
    for (int i = 0; i < dims; ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

std::string MetricDescriptor::to_json() const {
    nlohmann::json j;
    j["metric"] = name;
    return j.dump();
}

MetricDescriptor MetricDescriptor::from_json(const std::string& text) {
    MetricDescriptor m;
    m.name = nlohmann::json::parse(text).at("metric").get<std::string>();
    require(m.name == "euclidean", "unsupported metric: " + m.name);
    return m;
}

// Exact kd-tree over one bucket. Queries prune a subtree only when every
// point in it is strictly farther than the current k-th best, so tie-breaks
// by source index are never lost to pruning.
class KdTree {
public:
    KdTree(Tensor X, int dims) : X_(std::move(X)), dims_(dims) {
        std::vector<int> rows(X.rows);
        std::iota(rows.begin(), rows.end(), 0);
        root_ = build(rows, 0, static_cast<int>(rows.size()));
        order_ = std::move(rows);  // leaf ranges index into this arrangement
    }

    void query(const double* x, const std::vector<int>& src, BestK& best) const {
        search(root_, x, src, best);
    }

private:
    struct Node {
        int axis = -1;         // -1: leaf
        double split = 0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf: range in order_
    };

    static constexpr int kLeafSize = 16;

    int build(std::vector<int>& rows, int begin, int end) {
        Node n;
        if (end - begin <= kLeafSize) {
            n.begin = begin;
            n.end = end;
            // deterministic leaf order: ascending row id
            std::sort(rows.begin() + begin, rows.begin() + end);
            nodes_.push_back(n);
            return static_cast<int>(nodes_.size()) - 1;
        }
        // split on the axis with the largest spread
        int axis = 0;
        double best_spread = -1;
        for (int a = 0; a < dims_; ++a) {
            double lo = X_.at(rows[begin], a), hi = lo;
            for (int i = begin + 1; i < end; ++i) {
                lo = std::min(lo, X_.at(rows[i], a));
                hi = std::max(hi, X_.at(rows[i], a));
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                axis = a;
            }
        }
        int mid = (begin + end) / 2;
        std::nth_element(rows.begin() + begin, rows.begin() + mid, rows.begin() + end,
                         [&](int ra, int rb) { return X_.at(ra, axis) < X_.at(rb, axis); });
        n.axis = axis;
        n.split = X_.at(rows[mid], axis);
        int self = static_cast<int>(nodes_.size());
        nodes_.push_back(n);
        int l = build(rows, begin, mid);
        int r = build(rows, mid, end);
        nodes_[self].left = l;
        nodes_[self].right = r;
        return self;
    }

    void search(int id, const double* x, const std::vector<int>& src, BestK& best) const {
        const Node& n = nodes_[id];
        if (n.axis < 0) {
            for (int i = n.begin; i < n.end; ++i) {
                int row = order_[i];
                best.offer(euclidean_d2(x, &X_.v[static_cast<std::size_t>(row) * dims_], dims_),
                           src[row]);
            }
            return;
        }
        double gap = x[n.axis] - n.split;
        int near = gap < 0 ? n.left : n.right;
        int far = gap < 0 ? n.right : n.left;
        search(near, x, src, best);
        if (!best.full() || gap * gap <= best.worst_d2()) search(far, x, src, best);
    }

    Tensor X_;  // owned copy: the tree must not dangle if buckets move
    int dims_;
    std::vector<Node> nodes_;
    std::vector<int> order_;
    int root_ = -1;
};

MatchIndex::MatchIndex(const Dataset& ds, MetricDescriptor metric)
    : metric_(std::move(metric)) {
    require(metric_.name == "euclidean", "unsupported metric: " + metric_.name);
    n_s_ = static_cast<int>(ds.schema.protected_values.size());
    dims_ = ds.dims();
    schema_hash_ = ds.schema.hash();
    provenance_hash_ = ds.provenance.hash();

    std::vector<std::vector<int>> rows(2 * n_s_);
    for (int i = 0; i < ds.n(); ++i) {
        require(ds.y[i] == 0 || ds.y[i] == 1, "matching expects binary labels");
        rows[static_cast<std::size_t>(ds.y[i]) * n_s_ + ds.s[i]].push_back(i);
    }
    for (int y = 0; y < 2; ++y)
        for (int s = 0; s < n_s_; ++s)
            if (rows[static_cast<std::size_t>(y) * n_s_ + s].empty())
                throw ContractViolation(
                    "unmatchable stratum: no records with y=" + std::to_string(y) +
                    ", " + ds.schema.protected_name + "=" + ds.schema.protected_values[s]);

    buckets_.resize(rows.size());
    for (std::size_t b = 0; b < rows.size(); ++b) {
        Bucket& bucket = buckets_[b];
        bucket.src = rows[b];  // already ascending
        bucket.X = Tensor(static_cast<int>(rows[b].size()), dims_);
        for (std::size_t r = 0; r < rows[b].size(); ++r)
            std::copy(&ds.X.v[static_cast<std::size_t>(rows[b][r]) * dims_],
                      &ds.X.v[static_cast<std::size_t>(rows[b][r]) * dims_] + dims_,
                      bucket.X.v.begin() + static_cast<std::ptrdiff_t>(r) * dims_);
        if (dims_ <= kTreeMaxDims) bucket.tree = std::make_shared<KdTree>(bucket.X, dims_);
    }
}

const MatchIndex::Bucket& MatchIndex::bucket(int y, int s) const {
    require(y == 0 || y == 1, "bucket: y must be binary");
    require(s >= 0 && s < n_s_, "bucket: bad protected value");
    return buckets_[static_cast<std::size_t>(y) * n_s_ + s];
}

std::vector<std::pair<int, double>> MatchIndex::query(int y, int s, const double* x,
                                                      int k) const {
    require(k >= 1, "query: k must be positive");
    const Bucket& b = bucket(y, s);
    BestK best{std::min<int>(k, b.X.rows), {}};
    best.heap.reserve(best.k + 1);
    if (b.tree) {
        b.tree->query(x, b.src, best);
    } else {
        for (int r = 0; r < b.X.rows; ++r)
            best.offer(euclidean_d2(x, &b.X.v[static_cast<std::size_t>(r) * dims_], dims_),
                       b.src[r]);
    }
    std::vector<std::pair<int, double>> out;
    out.reserve(best.heap.size());
    for (auto& [d2, src] : best.heap) out.emplace_back(src, d2);
    return out;
}

MatchIndex build_index(const Dataset& ds, MetricDescriptor metric) {
    return MatchIndex(ds, std::move(metric));
}

NnResult nn_contrastive(const MatchIndex& index, const Dataset& ds, int row, int k) {
    require(row >= 0 && row < ds.n(), "nn_contrastive: bad row");
    require(ds.schema.hash() == index.schema_hash(),
            "nn_contrastive: dataset schema does not match the index");
    NnResult res;
    const int d = index.dims();
    for (int sbar = 0; sbar < index.n_protected(); ++sbar) {
        if (sbar == ds.s[row]) continue;
        const MatchIndex::Bucket& b = index.bucket(ds.y[row], sbar);
        auto matches = index.query(ds.y[row], sbar,
                                   &ds.X.v[static_cast<std::size_t>(row) * ds.dims()], k);
        if (static_cast<int>(matches.size()) < k) res.truncated = true;
        for (auto& [src, d2] : matches) {
            auto pos = std::lower_bound(b.src.begin(), b.src.end(), src);
            require(pos != b.src.end() && *pos == src, "index bucket lost a source row");
            const double* xb =
                &b.X.v[static_cast<std::size_t>(pos - b.src.begin()) * d];
            ContrastiveExample ce;
            ce.source_index = row;
            ce.target_s = sbar;
            ce.x_bar.assign(xb, xb + d);
            ce.inherited_y = ds.y[row];
            res.items.push_back(std::move(ce));
        }
    }
    return res;
}

ContrastiveSet nn_contrastive_all(const MatchIndex& index, const Dataset& ds, int k) {
    ContrastiveSet cs;
    cs.schema_hash = ds.schema.hash();
    cs.source_provenance = index.provenance_hash();
    for (int row = 0; row < ds.n(); ++row) {
        NnResult r = nn_contrastive(index, ds, row, k);
        for (auto& item : r.items) cs.items.push_back(std::move(item));
    }
    return cs;
}

namespace {

double parse_double_tok(const std::string& tok, std::size_t line_no) {
    double v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw ParseError("line " + std::to_string(line_no) + ": not a number: '" + tok + "'");
    return v;
}

}  // namespace

void save_contrastives(const ContrastiveSet& cs, const std::string& path) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "cannot write " + path);
    out << "# contrastives v1 schema_hash=" << cs.schema_hash
        << " source_provenance=" << cs.source_provenance << "\n";
    out << "source_index,target_s,inherited_y";
    if (!cs.items.empty())
        for (std::size_t i = 0; i < cs.items[0].x_bar.size(); ++i) out << ",f" << i;
    out << "\n";
    for (auto& e : cs.items) {
        out << e.source_index << "," << e.target_s << "," << e.inherited_y;
        for (double v : e.x_bar) out << "," << format_double(v);
        out << "\n";
    }
}

ContrastiveSet load_contrastives(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open " + path);
    ContrastiveSet cs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ss(line);
            std::string tok;
            while (ss >> tok) {
                if (tok.rfind("schema_hash=", 0) == 0)
                    cs.schema_hash = std::stoull(tok.substr(12));
                if (tok.rfind("source_provenance=", 0) == 0)
                    cs.source_provenance = std::stoull(tok.substr(18));
            }
            continue;
        }
        if (line.rfind("source_index,", 0) == 0) continue;  // header
        std::vector<std::string> toks;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i)
            if (i == line.size() || line[i] == ',') {
                toks.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        if (toks.size() < 4) throw ParseError("line " + std::to_string(line_no) + ": too few fields");
        ContrastiveExample e;
        e.source_index = static_cast<int>(parse_double_tok(toks[0], line_no));
        e.target_s = static_cast<int>(parse_double_tok(toks[1], line_no));
        e.inherited_y = static_cast<int>(parse_double_tok(toks[2], line_no));
        e.x_bar.reserve(toks.size() - 3);
        for (std::size_t i = 3; i < toks.size(); ++i)
            e.x_bar.push_back(parse_double_tok(toks[i], line_no));
        cs.items.push_back(std::move(e));
    }
    return cs;
}

}  // namespace tabfair
