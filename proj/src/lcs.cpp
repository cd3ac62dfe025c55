#include "specforge/lcs.hpp"

#include <algorithm>
#include <cstdint>

namespace specforge {

namespace {

bool same(const std::string& x, const std::string& y) { return !x.empty() && x == y; }

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> lcs_align(const std::vector<std::string>& a,
                                                           const std::vector<std::string>& b) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t n = a.size(), m = b.size();

    std::size_t pre = 0;
    while (pre < n && pre < m && same(a[pre], b[pre])) {
        out.emplace_back(pre, pre);
        ++pre;
    }
    const std::size_t rn = n - pre, rm = m - pre;
    // table[i][j] = LCS length of a[pre+i..] and b[pre+j..] (within the trimmed middle)
    std::vector<std::uint32_t> table((rn + 1) * (rm + 1), 0);
    auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return table[i * (rm + 1) + j]; };
    for (std::size_t i = rn; i-- > 0;) {
        for (std::size_t j = rm; j-- > 0;) {
            if (same(a[pre + i], b[pre + j])) {
                at(i, j) = at(i + 1, j + 1) + 1;
            } else {
                at(i, j) = std::max(at(i + 1, j), at(i, j + 1));
            }
        }
    }
    std::size_t i = 0, j = 0;
    while (i < rn && j < rm) {
        if (same(a[pre + i], b[pre + j]) && at(i, j) == at(i + 1, j + 1) + 1) {
            out.emplace_back(pre + i, pre + j);
            ++i;
            ++j;
        } else if (at(i, j + 1) == at(i, j)) {
            ++j;  // skip an element of b first: keeps a[i] free to match later in b
        } else {
            ++i;
        }
    }
    return out;
}

}  // namespace specforge
