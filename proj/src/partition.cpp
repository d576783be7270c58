#include "pep/partition.hpp"

#include <string>

namespace pep {

BlockPartition BlockPartition::singletons(Index N, double alpha) {
    BlockPartition p;
    p.blocks.reserve(N);
    for (Index n = 0; n < N; ++n) p.blocks.push_back({n});
    p.alphas.assign(N, alpha);
    return p;
}

BlockPartition BlockPartition::contiguous(Index N, int B, double alpha) {
    if (B < 1 || B > N) throw ArgumentError("block count must lie in [1, N]");
    BlockPartition p;
    Index start = 0;
    for (int b = 0; b < B; ++b) {
        const Index len = N / B + (b < N % B ? 1 : 0);
        std::vector<Index> idx(len);
        for (Index i = 0; i < len; ++i) idx[i] = start + i;
        start += len;
        p.blocks.push_back(std::move(idx));
    }
    p.alphas.assign(B, alpha);
    return p;
}

BlockPartition BlockPartition::vfe_limit(Index N) {
    BlockPartition p = singletons(N, 0.0);
    p.vfe = true;
    return p;
}

bool BlockPartition::all_singletons() const {
    for (const auto& b : blocks)
        if (b.size() != 1) return false;
    return true;
}

void BlockPartition::validate(Index N, Index M) const {
    if (alphas.size() != blocks.size()) throw ArgumentError("one power per block is required");
    std::vector<char> seen(N, 0);
    Index count = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].empty()) throw ArgumentError("empty block " + std::to_string(b));
        if (static_cast<Index>(blocks[b].size()) > M)
            throw ArgumentError("block " + std::to_string(b) + " is larger than the number of pseudo-points");
        for (Index i : blocks[b]) {
            if (i < 0 || i >= N) throw ArgumentError("block index out of range");
            if (seen[i]) throw ArgumentError("index " + std::to_string(i) + " appears in two blocks");
            seen[i] = 1;
            ++count;
        }
        if (!vfe && !(alphas[b] > 0.0 && alphas[b] <= 1.0))
            throw ArgumentError("block power must lie in (0, 1]");
    }
    if (count != N) throw ArgumentError("partition does not cover every data index");
}

}  // namespace pep
