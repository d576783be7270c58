#pragma once

#include "pep/common.hpp"

#include <vector>

namespace pep {

// Disjoint, exhaustive assignment of data indices to blocks, each with its own power.
// vfe marks the alpha -> 0 limit, which is served by the analytic VFE expressions.
struct BlockPartition {
    std::vector<std::vector<Index>> blocks;
    std::vector<double> alphas;
    bool vfe = false;

    // One block per datum (FITC-style sites).
    static BlockPartition singletons(Index N, double alpha);
    // B contiguous blocks of near-equal size.
    static BlockPartition contiguous(Index N, int B, double alpha);
    static BlockPartition vfe_limit(Index N);

    std::size_t size() const { return blocks.size(); }
    bool all_singletons() const;
    // Throws ArgumentError unless the blocks cover 0..N-1 exactly once, every block
    // has at most M entries and every power lies in (0, 1].
    void validate(Index N, Index M) const;
};

}  // namespace pep
