#pragma once

#include "amfl/data.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace amfl {

struct CsvColumns {
    std::vector<std::string> features;
    std::string protected_attr;
    std::string label;
    std::string client;
    bool standardize = false;
};

namespace csv_detail {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    const char* b = s.data();
    const char* e = b + s.size();
    double v = 0;
    auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) return std::nullopt;
    return v;
}

struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;   // rows that had all used fields present
};

inline RawTable read_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    RawTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty CSV: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = split_line(line);
    size_t row_index = 1;
    while (std::getline(in, line)) {
        ++row_index;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != t.header.size())
            throw std::runtime_error("malformed row " + std::to_string(row_index) + " in " + path +
                                     ": expected " + std::to_string(t.header.size()) + " fields");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline int column_index(const RawTable& t, const std::string& name) {
    for (size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i] == name) return static_cast<int>(i);
    throw std::runtime_error("column not found: " + name);
}

/// Per-feature encoder: numeric passthrough or one-hot with category order
/// fixed by first appearance.
struct FeatureEncoder {
    bool numeric = true;
    std::vector<std::string> categories;

    int width() const { return numeric ? 1 : static_cast<int>(categories.size()); }
};

} // namespace csv_detail

/// Loads one CSV into per-client datasets ordered by client value
/// (numeric order when every client id parses as a number, else
/// lexicographic). Rows with an empty value in any used column are
/// rejected (skipped); malformed rows and non-binary labels are errors.
inline std::vector<ClientDataset> load_csv_clients(const std::string& path, const CsvColumns& cols,
                                                   int* group_count_out = nullptr) {
    using namespace csv_detail;
    RawTable t = read_table(path);
    std::vector<int> fidx;
    for (const auto& f : cols.features) fidx.push_back(column_index(t, f));
    const int aidx = column_index(t, cols.protected_attr);
    const int yidx = column_index(t, cols.label);
    const int cidx = column_index(t, cols.client);

    // First pass: decide encodings from first-appearance order.
    std::vector<FeatureEncoder> enc(fidx.size());
    for (const auto& row : t.rows) {
        for (size_t f = 0; f < fidx.size(); ++f) {
            const std::string& cell = row[fidx[f]];
            if (cell.empty()) continue;
            if (enc[f].numeric && !parse_number(cell)) enc[f].numeric = false;
        }
    }
    for (const auto& row : t.rows) {
        for (size_t f = 0; f < fidx.size(); ++f) {
            if (enc[f].numeric) continue;
            const std::string& cell = row[fidx[f]];
            if (cell.empty()) continue;
            auto& cats = enc[f].categories;
            if (std::find(cats.begin(), cats.end(), cell) == cats.end()) cats.push_back(cell);
        }
    }
    int width = 0;
    for (const auto& e : enc) width += e.width();

    std::map<std::string, std::vector<Sample>> by_client;
    int max_group = 0;
    for (size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        bool missing = row[aidx].empty() || row[yidx].empty() || row[cidx].empty();
        for (int fi : fidx) missing = missing || row[fi].empty();
        if (missing) continue;   // reject rows with missing fields

        auto yv = parse_number(row[yidx]);
        if (!yv || (*yv != 0.0 && *yv != 1.0))
            throw std::runtime_error("non-binary label '" + row[yidx] + "' at row " + std::to_string(r + 2));
        auto av = parse_number(row[aidx]);
        if (!av || *av < 0 || *av != std::floor(*av) || *av > 31)
            throw std::runtime_error("protected attribute not a small integer at row " + std::to_string(r + 2));

        Sample s;
        s.x.resize(width);
        int off = 0;
        for (size_t f = 0; f < fidx.size(); ++f) {
            const std::string& cell = row[fidx[f]];
            if (enc[f].numeric) {
                auto v = parse_number(cell);
                if (!v) throw std::runtime_error("non-numeric value '" + cell + "' at row " + std::to_string(r + 2));
                s.x[off++] = *v;
            } else {
                for (const auto& cat : enc[f].categories) s.x[off++] = (cell == cat) ? 1.0 : 0.0;
            }
        }
        s.a = static_cast<int>(*av);
        s.y = static_cast<int>(*yv);
        max_group = std::max(max_group, s.a);
        by_client[row[cidx]].push_back(std::move(s));
    }
    if (by_client.empty()) throw std::runtime_error("no usable rows in " + path);

    std::vector<std::pair<std::string, std::vector<Sample>>> ordered(by_client.begin(), by_client.end());
    const bool all_numeric = std::all_of(ordered.begin(), ordered.end(), [](const auto& kv) {
        return csv_detail::parse_number(kv.first).has_value();
    });
    if (all_numeric) {
        std::sort(ordered.begin(), ordered.end(), [](const auto& l, const auto& r) {
            return *csv_detail::parse_number(l.first) < *csv_detail::parse_number(r.first);
        });
    }
    std::vector<ClientDataset> clients;
    for (size_t c = 0; c < ordered.size(); ++c)
        clients.push_back(ClientDataset::from_samples(static_cast<int>(c), ordered[c].second));

    if (cols.standardize) {
        // z-score each feature over the pooled data
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(width), m2 = Eigen::VectorXd::Zero(width);
        long total = 0;
        for (const auto& c : clients) {
            mean += c.X.colwise().sum().transpose();
            total += c.size();
        }
        mean /= static_cast<double>(total);
        for (const auto& c : clients)
            m2 += (c.X.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
        Eigen::VectorXd sd = (m2 / static_cast<double>(total)).array().sqrt().max(1e-12);
        for (auto& c : clients)
            c.X = (c.X.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
    }
    if (group_count_out) *group_count_out = max_group + 1;
    return clients;
}

/// Single-file ingestion with a deterministic per-client 80/20 split.
inline FederationData load_csv(const std::string& path, const CsvColumns& cols,
                               std::uint64_t seed = 0, double test_fraction = 0.2) {
    int groups = 2;
    auto clients = load_csv_clients(path, cols, &groups);
    FederationData fed;
    fed.group_count = groups;
    for (const auto& c : clients) {
        auto [tr, te] = detail::train_test_indices(c.size(), seed, static_cast<std::uint64_t>(c.client_id),
                                                   test_fraction);
        fed.clients.push_back(detail::subset(c, tr));
        fed.test_clients.push_back(detail::subset(c, te));
    }
    fed.feature_dim = fed.clients.front().feature_dim();
    fed.validate();
    return fed;
}

/// Paired train/test files; the client sets must agree in count.
inline FederationData load_csv_pair(const std::string& train_path, const std::string& test_path,
                                    const CsvColumns& cols) {
    int groups_tr = 2, groups_te = 2;
    auto train = load_csv_clients(train_path, cols, &groups_tr);
    auto test = load_csv_clients(test_path, cols, &groups_te);
    if (train.size() != test.size())
        throw std::runtime_error("train/test files disagree on client count");
    FederationData fed;
    fed.clients = std::move(train);
    fed.test_clients = std::move(test);
    fed.group_count = std::max(groups_tr, groups_te);
    fed.feature_dim = fed.clients.front().feature_dim();
    fed.validate();
    return fed;
}

/// Writes one split (train or test) as CSV: client_id, x1..xd, a, y.
inline void save_clients_csv(const std::string& path, const std::vector<ClientDataset>& clients) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    const int d = clients.empty() ? 0 : clients.front().feature_dim();
    out << "client_id";
    for (int j = 0; j < d; ++j) out << ",x" << (j + 1);
    out << ",a,y\n";
    char buf[64];
    for (const auto& c : clients) {
        for (int i = 0; i < c.size(); ++i) {
            out << c.client_id;
            for (int j = 0; j < d; ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", c.X(i, j));
                out << ',' << buf;
            }
            out << ',' << c.a[i] << ',' << c.y[i] << '\n';
        }
    }
}

} // namespace amfl
