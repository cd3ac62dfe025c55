#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace specforge {

/// Matched index pairs (i into a, j into b) of a longest common subsequence, in
/// increasing order. Among optimal alignments, each element of a is matched to the
/// earliest possible element of b. Empty strings never match.
std::vector<std::pair<std::size_t, std::size_t>> lcs_align(const std::vector<std::string>& a,
                                                           const std::vector<std::string>& b);

}  // namespace specforge
