#include "btbrecon/infer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

namespace btbrecon {

namespace {

struct Column
{
    unsigned exponent;
    std::size_t index;
    std::uint64_t n;
};

std::vector<Column> stride_columns(const MissMatrix& m)
{
    std::vector<Column> cols;
    for (std::size_t i = 0; i < m.n_values().size(); ++i)
        if (is_power_of_two(m.n_values()[i]))
            cols.push_back({log2_floor(m.n_values()[i]), i, m.n_values()[i]});
    return cols;
}

std::optional<double> clamped(const MissMatrix& m, std::size_t bi, std::size_t ni)
{
    const auto& c = m.at(bi, ni);
    if (!c) return std::nullopt;
    return std::min(c->rate, 1.0);
}

std::string fmt(double v)
{
    std::ostringstream os;
    os.precision(3);
    os << std::fixed << v;
    return os.str();
}

std::string stride_name(std::uint64_t n)
{
    return "N=" + std::to_string(n);
}

double mean(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

std::uint64_t nearest_power_of_two(std::uint64_t v)
{
    const std::uint64_t lower = std::bit_floor(v);
    if (lower == v) return v;
    const std::uint64_t upper = lower * 2;
    return (v - lower) <= (upper - v) ? lower : upper;
}

} // namespace

void InferenceConfig::validate() const
{
    for (double t : {theta_low, delta_jump, epsilon_similar, theta_zero, capacity_band})
        if (!(t >= 0.0 && t <= 1.0))
            throw std::invalid_argument("inference thresholds must lie in [0, 1]");
    if (!(delta_jump > epsilon_similar))
        throw std::invalid_argument("delta_jump must exceed epsilon_similar");
}

bool InferenceReport::complete() const
{
    return capacity && !capacity->grid_limited && index_lo && index_hi && ways && verdict &&
           verdict->consistent;
}

BitFinding infer_index_lo(const MissMatrix& matrix, const InferenceConfig& cfg)
{
    Evidence ev{"index_lo", {}, {}, {}};
    const auto cols = stride_columns(matrix);
    if (cols.size() < 2)
        throw IndeterminateError("need at least two power-of-two stride columns", ev);

    std::optional<std::uint64_t> max_b;
    for (std::size_t bi = matrix.b_values().size(); bi-- > 0 && !max_b;)
        for (std::size_t ni = 0; ni < matrix.n_values().size(); ++ni)
            if (matrix.at(bi, ni)) {
                max_b = matrix.b_values()[bi];
                break;
            }
    if (!max_b)
        throw IndeterminateError("matrix has no measured cells", ev);

    const double band_floor = cfg.capacity_band * static_cast<double>(*max_b);
    std::vector<std::size_t> band;
    for (std::size_t bi = 0; bi < matrix.b_values().size(); ++bi)
        if (static_cast<double>(matrix.b_values()[bi]) >= band_floor) band.push_back(bi);
    ev.notes.push_back("capacity band: B >= " + fmt(band_floor) + " (" + fmt(cfg.capacity_band) + " x max B " +
                       std::to_string(*max_b) + ")");

    bool compared = false;
    std::vector<std::string> weak_rises;
    for (std::size_t i = 0; i + 1 < cols.size(); ++i) {
        const Column& a = cols[i];
        const Column& b = cols[i + 1];
        if (b.exponent != a.exponent + 1) {
            ev.notes.push_back("stride gap between " + stride_name(a.n) + " and " + stride_name(b.n) +
                               "; pair skipped");
            continue;
        }
        std::vector<double> lower, upper;
        std::vector<CellRef> cells;
        for (std::size_t bi : band) {
            auto ra = clamped(matrix, bi, a.index);
            auto rb = clamped(matrix, bi, b.index);
            if (!ra || !rb) continue;
            lower.push_back(*ra);
            upper.push_back(*rb);
            cells.push_back({matrix.b_values()[bi], a.n, *ra});
            cells.push_back({matrix.b_values()[bi], b.n, *rb});
        }
        if (lower.empty()) continue;

        const bool first_pair = !compared;
        compared = true;
        const double rise = mean(upper) - mean(lower);
        ev.comparisons.push_back(stride_name(a.n) + " -> " + stride_name(b.n) + ": band mean " +
                                 fmt(mean(lower)) + " -> " + fmt(mean(upper)) + ", rise " + fmt(rise) +
                                 (rise > cfg.delta_jump ? " > " : " <= ") + "delta_jump " + fmt(cfg.delta_jump));
        if (rise > cfg.delta_jump) {
            ev.cells = std::move(cells);
            if (first_pair)
                ev.notes.push_back("jump at the smallest compared stride pair: bits below " +
                                   std::to_string(a.exponent) + " were never varied, so the index may start lower");
            for (const auto& w : weak_rises)
                ev.notes.push_back("ambiguous: " + w);
            return {a.exponent, std::move(ev)};
        }
        if (rise > cfg.epsilon_similar)
            weak_rises.push_back("sub-threshold rise " + fmt(rise) + " between " + stride_name(a.n) + " and " +
                                 stride_name(b.n));
    }

    if (!compared)
        throw IndeterminateError("need two consecutive power-of-two strides with capacity-band rows", ev);
    throw IndeterminateError("no index-lo signature; extend N or B range", ev);
}

CapacityFinding infer_capacity(const MissMatrix& matrix, unsigned index_lo, const InferenceConfig& cfg)
{
    CapacityFinding out;
    out.evidence.conclusion = "capacity";
    auto& ev = out.evidence;

    const std::uint64_t ref = std::uint64_t{1} << index_lo;
    std::optional<Column> column;
    for (const Column& c : stride_columns(matrix)) {
        if (c.n >= ref) {
            column = c;
            break;
        }
    }
    if (!column)
        throw IndeterminateError("no stride column at or above 2^" + std::to_string(index_lo), ev);
    if (column->n != ref)
        ev.notes.push_back("reference stride " + stride_name(ref) + " not in matrix; using " +
                           stride_name(column->n));
    out.reference_stride = column->n;

    struct Row
    {
        std::uint64_t b;
        double rate;
    };
    std::vector<Row> rows;
    for (std::size_t bi = 0; bi < matrix.b_values().size(); ++bi)
        if (auto r = clamped(matrix, bi, column->index)) rows.push_back({matrix.b_values()[bi], *r});
    if (rows.size() < 2)
        throw IndeterminateError("reference column " + stride_name(column->n) + " has fewer than two cells", ev);

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].rate < cfg.theta_low) best = i;

    if (!best) {
        ev.cells = {{rows[0].b, column->n, rows[0].rate}, {rows[1].b, column->n, rows[1].rate}};
        ev.comparisons.push_back("every rate in " + stride_name(column->n) + " is >= theta_low " +
                                 fmt(cfg.theta_low));
        throw IndeterminateError("capacity below grid minimum", ev);
    }

    const Row& hit = rows[*best];
    out.raw = hit.b;
    out.entries = nearest_power_of_two(hit.b);
    out.grid_limited = *best + 1 == rows.size();

    ev.cells.push_back({hit.b, column->n, hit.rate});
    ev.comparisons.push_back("rate(B=" + std::to_string(hit.b) + ", " + stride_name(column->n) + ") = " +
                             fmt(hit.rate) + " < theta_low " + fmt(cfg.theta_low));
    if (out.grid_limited) {
        const Row& prev = rows[*best - 1];
        ev.cells.push_back({prev.b, column->n, prev.rate});
        ev.notes.push_back("capacity >= " + std::to_string(hit.b) + " (grid-limited)");
    } else {
        const Row& next = rows[*best + 1];
        ev.cells.push_back({next.b, column->n, next.rate});
        ev.comparisons.push_back("rate(B=" + std::to_string(next.b) + ", " + stride_name(column->n) + ") = " +
                                 fmt(next.rate) + (next.rate < cfg.theta_low ? " < " : " >= ") + "theta_low");
    }
    if (out.entries != out.raw)
        ev.notes.push_back("raw capacity " + std::to_string(out.raw) + " rounded to " + std::to_string(out.entries));
    return out;
}

namespace {

struct PlateauCheck
{
    bool ok = false;
    std::string reason;
    std::vector<CellRef> outliers;
};

PlateauCheck check_plateau(const MissMatrix& m, const std::vector<Column>& cols, std::size_t start,
                           const InferenceConfig& cfg)
{
    PlateauCheck result;
    const std::size_t width = cols.size() - start;
    std::vector<unsigned> outlier_count(width, 0);
    std::vector<bool> column_compared(width, false);
    bool informative = false;

    for (std::size_t bi = 0; bi < m.b_values().size(); ++bi) {
        std::vector<std::optional<double>> values(width);
        std::vector<double> present;
        for (std::size_t p = 0; p < width; ++p) {
            values[p] = clamped(m, bi, cols[start + p].index);
            if (values[p]) present.push_back(*values[p]);
        }
        if (present.size() < 2) continue;

        const double med = median(present);
        if (med < cfg.theta_low) informative = true;
        auto near_median = [&](std::size_t p) {
            return values[p] && std::abs(*values[p] - med) <= cfg.epsilon_similar;
        };

        std::vector<double> kept;
        for (std::size_t p = 0; p < width; ++p) {
            if (!values[p]) continue;
            column_compared[p] = true;
            const double d = *values[p] - med;
            const CellRef ref{m.b_values()[bi], cols[start + p].n, *values[p]};
            if (d < -cfg.epsilon_similar) {
                result.reason = "B=" + std::to_string(ref.b) + " at " + stride_name(ref.n) + " is " + fmt(-d) +
                                " below the plateau median";
                return result;
            }
            if (d > cfg.epsilon_similar && cfg.plateau_outliers > 0) {
                // A lone high cell flanked by on-median columns is a noise
                // spike; a step that persists to the top column is structure.
                bool below = false, above = false;
                for (std::size_t q = 0; q < p; ++q) below = below || near_median(q);
                for (std::size_t q = p + 1; q < width; ++q) above = above || near_median(q);
                // In a single-set column the rate cannot drop as B grows, so a
                // cell above a larger-B cell of its own column is noise too.
                bool inverted = false;
                for (std::size_t bj = bi + 1; bj < m.b_values().size() && !inverted; ++bj) {
                    const auto larger = clamped(m, bj, cols[start + p].index);
                    inverted = larger && *values[p] - *larger > cfg.epsilon_similar;
                }
                if (((below && above) || inverted) && ++outlier_count[p] <= cfg.plateau_outliers) {
                    result.outliers.push_back(ref);
                    continue;
                }
                result.reason = "B=" + std::to_string(ref.b) + " at " + stride_name(ref.n) + " is " + fmt(d) +
                                " above the plateau median";
                return result;
            }
            kept.push_back(*values[p]);
        }
        if (!kept.empty()) {
            const auto [lo, hi] = std::minmax_element(kept.begin(), kept.end());
            if (*hi - *lo > cfg.epsilon_similar) {
                result.reason = "B=" + std::to_string(m.b_values()[bi]) + " spread " + fmt(*hi - *lo) +
                                " exceeds epsilon_similar";
                return result;
            }
        }
    }

    if (std::find(column_compared.begin(), column_compared.end(), false) != column_compared.end()) {
        result.reason = "a column shares no rows with the rest of the plateau";
        return result;
    }
    if (!informative) {
        result.reason = "every shared row is saturated; the columns carry no index information";
        return result;
    }
    result.ok = true;
    return result;
}

} // namespace

BitFinding infer_index_hi(const MissMatrix& matrix, const InferenceConfig& cfg)
{
    Evidence ev{"index_hi", {}, {}, {}};
    const auto cols = stride_columns(matrix);
    if (cols.size() < 2)
        throw IndeterminateError("need at least two stride columns to find a plateau", ev);

    for (std::size_t start = 0; start + 1 < cols.size(); ++start) {
        PlateauCheck check = check_plateau(matrix, cols, start, cfg);
        if (!check.ok) {
            ev.comparisons.push_back("columns " + stride_name(cols[start].n) + ".." + stride_name(cols.back().n) +
                                     " not a plateau: " + check.reason);
            continue;
        }
        const Column& first = cols[start];
        if (first.exponent == 0)
            throw IndeterminateError("plateau starts at N=1", ev);

        ev.comparisons.push_back("columns " + stride_name(first.n) + ".." + stride_name(cols.back().n) +
                                 " mutually similar within epsilon_similar " + fmt(cfg.epsilon_similar));
        for (const auto& o : check.outliers)
            ev.notes.push_back("isolated high cell B=" + std::to_string(o.b) + " at " + stride_name(o.n) + " (" +
                               fmt(o.rate) + ") attributed to noise");

        // Cite the row that separates the plateau from the column below it,
        // or the plateau's own first two columns when nothing lies below.
        std::size_t a = start, b = start + 1;
        if (start > 0) {
            a = start - 1;
            b = start;
            const Column& prev = cols[start - 1];
            if (prev.exponent + 1 != first.exponent)
                ev.notes.push_back("stride gap below the plateau: index_hi lies in [" + std::to_string(prev.exponent) +
                                   ", " + std::to_string(first.exponent - 1) + "]; reporting the upper end");
        } else {
            ev.notes.push_back("plateau starts at the smallest stride probed; index_hi may be lower");
        }
        double widest = -1.0;
        std::optional<std::size_t> row;
        for (std::size_t bi = 0; bi < matrix.b_values().size(); ++bi) {
            auto ra = clamped(matrix, bi, cols[a].index);
            auto rb = clamped(matrix, bi, cols[b].index);
            if (!ra || !rb) continue;
            if (std::abs(*rb - *ra) > widest) {
                widest = std::abs(*rb - *ra);
                row = bi;
            }
        }
        if (row) {
            const auto bv = matrix.b_values()[*row];
            const double ra = *clamped(matrix, *row, cols[a].index);
            const double rb = *clamped(matrix, *row, cols[b].index);
            ev.cells.push_back({bv, cols[a].n, ra});
            ev.cells.push_back({bv, cols[b].n, rb});
            ev.comparisons.push_back("B=" + std::to_string(bv) + ": " + stride_name(cols[a].n) + " " + fmt(ra) +
                                     " vs " + stride_name(cols[b].n) + " " + fmt(rb));
        }
        return {first.exponent - 1, std::move(ev)};
    }
    throw IndeterminateError("no stable plateau of >= 2 similar columns; extend the N range", ev);
}

WaysFinding infer_ways(const MissMatrix& matrix, unsigned index_hi, const InferenceConfig& cfg)
{
    WaysFinding out;
    out.evidence.conclusion = "ways";
    auto& ev = out.evidence;

    std::vector<Column> single;
    for (const Column& c : stride_columns(matrix))
        if (c.exponent >= index_hi + 1) single.push_back(c);
    if (single.empty())
        throw IndeterminateError("no single-set column (N >= 2^" + std::to_string(index_hi + 1) + ")", ev);

    std::vector<std::pair<std::uint64_t, unsigned>> per_column;
    for (const Column& c : single) {
        std::vector<std::pair<std::uint64_t, double>> rows;
        for (std::size_t bi = 0; bi < matrix.b_values().size(); ++bi)
            if (auto r = clamped(matrix, bi, c.index)) rows.emplace_back(matrix.b_values()[bi], *r);
        if (rows.size() < 2) {
            ev.notes.push_back(stride_name(c.n) + ": fewer than two cells, skipped");
            continue;
        }
        std::optional<std::size_t> best;
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (rows[i].second <= cfg.theta_zero) best = i;
        if (!best) {
            ev.notes.push_back(stride_name(c.n) + ": no row at or below theta_zero, no vote");
            continue;
        }
        const auto [w, rate] = rows[*best];
        const auto& other = *best + 1 < rows.size() ? rows[*best + 1] : rows[*best - 1];
        ev.cells.push_back({w, c.n, rate});
        ev.cells.push_back({other.first, c.n, other.second});
        ev.comparisons.push_back(stride_name(c.n) + ": largest B with rate <= theta_zero " + fmt(cfg.theta_zero) +
                                 " is " + std::to_string(w) + " (next B=" + std::to_string(other.first) + " rate " +
                                 fmt(other.second) + ")");
        if (*best + 1 == rows.size())
            ev.notes.push_back(stride_name(c.n) + ": buffered at every B probed (grid-limited vote)");
        const auto vote = static_cast<unsigned>(std::min<std::uint64_t>(w, UINT32_MAX));
        per_column.emplace_back(c.n, vote);
        ++out.votes[vote];
    }
    if (out.votes.empty())
        throw IndeterminateError("no single-set column shows a buffered row", ev);

    unsigned top = 0;
    for (const auto& [w, count] : out.votes) top = std::max(top, count);
    std::vector<unsigned> leaders;
    for (const auto& [w, count] : out.votes)
        if (count == top) leaders.push_back(w);
    out.ways = leaders.back();
    out.tie = leaders.size() > 1;
    if (out.tie)
        ev.notes.push_back("vote tie; taking the largest candidate " + std::to_string(out.ways));
    for (const auto& [n, vote] : per_column)
        if (vote != out.ways)
            ev.notes.push_back("dissent: " + stride_name(n) + " votes " + std::to_string(vote));
    return out;
}

ConsistencyVerdict cross_check(std::uint64_t capacity, unsigned index_lo, unsigned index_hi, unsigned ways)
{
    ConsistencyVerdict v;
    if (index_hi < index_lo || index_hi - index_lo + 1 >= 64) {
        v.suggestions.push_back("index range is empty or too wide");
        return v;
    }
    v.sets = std::uint64_t{1} << (index_hi - index_lo + 1);
    v.product = v.sets * ways;
    v.consistent = v.product == capacity;
    if (!v.consistent) {
        if (capacity % v.sets == 0 && capacity / v.sets >= 1)
            v.suggestions.push_back("ways=" + std::to_string(capacity / v.sets));
        v.suggestions.push_back("capacity=" + std::to_string(v.product));
    }
    return v;
}

InferenceReport infer_all(const MissMatrix& matrix, const InferenceConfig& cfg)
{
    cfg.validate();
    InferenceReport report;
    report.config = cfg;

    std::size_t over = 0;
    for (std::size_t bi = 0; bi < matrix.b_values().size(); ++bi)
        for (std::size_t ni = 0; ni < matrix.n_values().size(); ++ni)
            if (const auto& c = matrix.at(bi, ni); c && c->rate > 1.0) ++over;

    report.assumptions = {
        "bit positions are 0-based (LSB = bit 0); 1-based echoes add one",
        "the BTB is indexed by the PC of the indirect branch (block offset +4)",
        "index bits 0-2 cannot be probed: strides start at 8 bytes and every probed PC has bits 0-2 = 0b100",
        "input rates above 1.0 are clamped to 1.0 for inference (" + std::to_string(over) + " cells clamped)",
    };

    auto attempt = [&](const std::string& field, auto&& step) {
        try {
            step();
        } catch (const IndeterminateError& e) {
            report.indeterminate[field] = e.what();
            report.evidence.push_back(e.evidence());
        }
    };

    attempt("index_lo", [&] {
        auto f = infer_index_lo(matrix, cfg);
        report.index_lo = f.bit;
        report.evidence.push_back(std::move(f.evidence));
    });
    if (report.index_lo) {
        attempt("capacity", [&] {
            auto f = infer_capacity(matrix, *report.index_lo, cfg);
            report.evidence.push_back(f.evidence);
            report.capacity = std::move(f);
        });
    } else {
        report.indeterminate["capacity"] = "requires index_lo";
    }

    attempt("index_hi", [&] {
        auto f = infer_index_hi(matrix, cfg);
        report.index_hi = f.bit;
        report.evidence.push_back(std::move(f.evidence));
    });
    if (report.index_hi) {
        attempt("ways", [&] {
            auto f = infer_ways(matrix, *report.index_hi, cfg);
            report.ways = f.ways;
            report.evidence.push_back(std::move(f.evidence));
        });
    } else {
        report.indeterminate["ways"] = "requires index_hi";
    }

    if (report.index_lo && report.index_hi) {
        if (*report.index_hi >= *report.index_lo)
            report.sets = std::uint64_t{1} << (*report.index_hi - *report.index_lo + 1);
        else
            report.indeterminate["sets"] = "index_hi below index_lo";
    } else {
        report.indeterminate["sets"] = "requires index_lo and index_hi";
    }

    if (report.capacity && report.index_lo && report.index_hi && report.ways)
        report.verdict = cross_check(report.capacity->entries, *report.index_lo, *report.index_hi, *report.ways);
    return report;
}

} // namespace btbrecon
