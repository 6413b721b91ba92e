#pragma once

// Reference models used only by tests. They deliberately avoid the library's
// BtbState and decompose so a bug there cannot cancel out.

#include <cstdint>
#include <list>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace btbrecon::oracle {

inline std::uint64_t set_of(std::uint64_t pc, unsigned index_lo, unsigned index_hi)
{
    const unsigned bits = index_hi - index_lo + 1;
    return (pc / (std::uint64_t{1} << index_lo)) % (std::uint64_t{1} << bits);
}

/// Miss rate of a cyclically replayed trace of distinct PCs under LRU with
/// at least one warm-up round: every branch in a set holding more than
/// `ways` branches misses, every other branch hits.
inline double analytic_miss_rate(const std::vector<std::uint64_t>& trace, unsigned index_lo, unsigned index_hi,
                                 unsigned ways)
{
    std::map<std::uint64_t, std::uint64_t> load;
    for (auto pc : trace) ++load[set_of(pc, index_lo, index_hi)];
    std::uint64_t missing = 0;
    for (const auto& [set, count] : load)
        if (count > ways) missing += count;
    return static_cast<double>(missing) / static_cast<double>(trace.size());
}

/// Brute-force LRU: one recency list per set, most recent first. Entries are
/// the PC with its index bits cleared (bits above tag_hi dropped).
class LruReference
{
public:
    LruReference(unsigned ways, unsigned index_lo, unsigned index_hi, unsigned tag_hi)
        : ways_(ways), lo_(index_lo), hi_(index_hi), tag_hi_(tag_hi)
    {
    }

    bool access(std::uint64_t pc)
    {
        auto& list = sets_[set_of(pc, lo_, hi_)];
        const std::uint64_t id = identity(pc);
        for (auto it = list.begin(); it != list.end(); ++it) {
            if (*it == id) {
                list.erase(it);
                list.push_front(id);
                return true;
            }
        }
        list.push_front(id);
        if (list.size() > ways_) list.pop_back();
        return false;
    }

    std::vector<std::uint64_t> contents(std::uint64_t set) const
    {
        auto it = sets_.find(set);
        if (it == sets_.end()) return {};
        return {it->second.begin(), it->second.end()};
    }

    std::uint64_t identity(std::uint64_t pc) const
    {
        std::uint64_t keep = tag_hi_ >= 63 ? ~std::uint64_t{0} : (std::uint64_t{1} << (tag_hi_ + 1)) - 1;
        for (unsigned b = lo_; b <= hi_; ++b) keep &= ~(std::uint64_t{1} << b);
        return pc & keep;
    }

private:
    unsigned ways_, lo_, hi_, tag_hi_;
    std::map<std::uint64_t, std::list<std::uint64_t>> sets_;
};

/// Layout of emitted gadget text, computed by walking the source with a
/// location counter: every instruction is 4 bytes, `.p2align j` rounds up.
struct AsmLayout
{
    std::map<std::string, std::uint64_t> labels;
    std::vector<std::uint64_t> branch_offsets; // offsets of `br`
    std::vector<std::uint64_t> return_offsets;
    std::vector<std::string> mnemonics;        // in order
    std::uint64_t end = 0;                     // bytes after the last instruction
};

inline AsmLayout parse_asm(const std::string& text)
{
    AsmLayout out;
    std::istringstream in(text);
    std::string line;
    std::uint64_t pc = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("//", 0) == 0) continue;
        if (line.back() == ':') {
            out.labels[line.substr(0, line.size() - 1)] = pc;
            continue;
        }
        std::istringstream words(line);
        std::string op;
        words >> op;
        if (op == ".p2align") {
            unsigned j = 0;
            words >> j;
            const std::uint64_t a = std::uint64_t{1} << j;
            pc = (pc + a - 1) / a * a;
            continue;
        }
        if (op.empty() || op[0] == '.') continue;
        out.mnemonics.push_back(op);
        if (op == "br") out.branch_offsets.push_back(pc);
        if (op == "ret") out.return_offsets.push_back(pc);
        pc += 4;
        out.end = pc;
    }
    return out;
}

} // namespace btbrecon::oracle
