#include "hre/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "hre/error.hpp"
#include "hre/util.hpp"

namespace hre::analysis {

double MetricRow::metric(std::size_t i) const {
    switch (i) {
        case 0: return s_id;
        case 1: return s_ds;
        case 2: return s_adv;
        case 3: return s_cal;
        case 4: return s_ood;
        case 5: return s_hr;
    }
    throw ValueError("metric index out of range");
}

double& MetricRow::metric(std::size_t i) {
    switch (i) {
        case 0: return s_id;
        case 1: return s_ds;
        case 2: return s_adv;
        case 3: return s_cal;
        case 4: return s_ood;
        case 5: return s_hr;
    }
    throw ValueError("metric index out of range");
}

namespace {

constexpr const char* kHeader = "model_id,group,s_id,s_ds,s_adv,s_cal,s_ood,s_hr";

void check_id(const std::string& s, const char* what) {
    if (s.empty()) throw ValueError(std::string(what) + " must be non-empty");
    if (s.find_first_of(",\"\n\r") != std::string::npos)
        throw ValueError(std::string(what) + " must not contain commas, quotes or newlines");
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_field(const std::string& s, const std::string& column) {
    if (s.empty())
        throw ValueError("missing value in column " + column +
                         " (every row needs all five scores)");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        throw FormatError("bad number '" + s + "' in column " + column);
    return v;
}

} // namespace

void MetricTable::validate() const {
    std::set<std::string> ids;
    for (const auto& row : rows) {
        check_id(row.model_id, "model_id");
        check_id(row.group, "group");
        if (!ids.insert(row.model_id).second)
            throw ValueError("duplicate model_id: " + row.model_id);
    }
}

void MetricTable::save_csv(const std::filesystem::path& path) const {
    validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << kHeader << '\n';
    for (const auto& row : rows) {
        out << row.model_id << ',' << row.group;
        for (std::size_t i = 0; i < 6; ++i) {
            const double v = row.metric(i);
            out << ',';
            if (!std::isnan(v)) out << format_double(v); // empty cell = not measured
        }
        out << '\n';
    }
}

MetricTable MetricTable::load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metric table: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty metric table");
    if (split_csv_line(line) != split_csv_line(kHeader))
        throw FormatError("unexpected header in " + path.string());

    MetricTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 8)
            throw FormatError("expected 8 columns, got " +
                              std::to_string(fields.size()));
        MetricRow row;
        row.model_id = fields[0];
        row.group = fields[1];
        static constexpr std::array<const char*, 6> cols{"s_id",  "s_ds",  "s_adv",
                                                         "s_cal", "s_ood", "s_hr"};
        for (std::size_t i = 0; i < 6; ++i) row.metric(i) = parse_field(fields[2 + i], cols[i]);
        table.rows.push_back(std::move(row));
    }
    table.validate();
    return table;
}

MetricTable group_center(const MetricTable& table) {
    if (table.rows.empty()) throw EmptyTable("cannot center an empty table");

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        groups[table.rows[i].group].push_back(i);

    MetricTable out = table;
    for (const auto& [group, members] : groups) {
        for (std::size_t m = 0; m < 6; ++m) {
            double mean = 0.0;
            for (auto i : members) mean += table.rows[i].metric(m);
            mean /= static_cast<double>(members.size());
            for (auto i : members) out.rows[i].metric(m) = table.rows[i].metric(m) - mean;
        }
    }
    return out;
}

Pearson pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw LengthMismatch("pearson inputs differ in length");
    if (x.size() < 2) throw ValueError("pearson needs at least 2 points");

    const auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double e) { return e == v[0]; });
    };
    if (constant(x) || constant(y))
        throw ZeroVariance("correlation undefined for constant input");

    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    Pearson p;
    p.r = sxy / std::sqrt(sxx * syy);
    p.r_squared = p.r * p.r;
    return p;
}

CorrelationMatrices correlation_matrix(const MetricTable& table, bool centered) {
    const MetricTable& source = table;
    MetricTable centered_table;
    const MetricTable* active = &source;
    if (centered) {
        centered_table = group_center(table);
        active = &centered_table;
    }
    if (active->rows.size() < 2)
        throw EmptyTable("correlation needs at least 2 rows");

    std::array<std::vector<double>, 5> columns;
    for (std::size_t m = 0; m < 5; ++m) {
        columns[m].reserve(active->rows.size());
        for (const auto& row : active->rows) columns[m].push_back(row.metric(m));
    }

    CorrelationMatrices out;
    for (std::size_t a = 0; a < 5; ++a) {
        for (std::size_t b = a; b < 5; ++b) {
            try {
                const auto p = pearson(columns[a], columns[b]);
                // self-correlation is 1 by definition, not up to rounding
                const bool diag = a == b;
                out.r[a][b] = out.r[b][a] = diag ? 1.0 : p.r;
                out.r_squared[a][b] = out.r_squared[b][a] = diag ? 1.0 : p.r_squared;
                out.defined[a][b] = out.defined[b][a] = true;
            } catch (const ZeroVariance&) {
                out.r[a][b] = out.r[b][a] = std::nan("");
                out.r_squared[a][b] = out.r_squared[b][a] = std::nan("");
                out.defined[a][b] = out.defined[b][a] = false;
            }
        }
    }
    return out;
}

HrImprovement hr_improvement(std::span<const MetricTable> tables,
                             const std::string& baseline_group) {
    if (tables.empty()) throw EmptyTable("no metric tables supplied");

    HrImprovement out;
    std::map<std::string, std::pair<double, std::size_t>> accum; // sum, count
    for (const auto& table : tables) {
        std::map<std::string, double> best;
        for (const auto& row : table.rows) {
            auto [it, inserted] = best.try_emplace(row.group, row.s_hr);
            if (!inserted) it->second = std::max(it->second, row.s_hr);
        }
        const auto baseline = best.find(baseline_group);
        if (baseline == best.end())
            throw MissingGroup("baseline group '" + baseline_group +
                               "' not present in table");

        std::vector<GroupDelta> deltas;
        for (const auto& [group, best_hr] : best) {
            if (group == baseline_group) continue;
            GroupDelta d;
            d.group = group;
            d.best_hr = best_hr;
            d.baseline_best_hr = baseline->second;
            d.delta = best_hr - baseline->second;
            deltas.push_back(d);
            auto& [sum, count] = accum[group];
            sum += d.delta;
            ++count;
        }
        out.per_table.push_back(std::move(deltas));
    }

    for (const auto& [group, sc] : accum) {
        GroupDelta d;
        d.group = group;
        d.delta = sc.first / static_cast<double>(sc.second);
        out.average.push_back(d);
    }
    return out;
}

} // namespace hre::analysis
