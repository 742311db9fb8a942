#pragma once

// Dependency-mask receptive-field oracle: mark one output column, walk the
// network's layer sequence backward with OR semantics over each op's
// structural taps, and measure the widest input extent across output
// alignments. Independent of the analytic recurrence in net.hpp.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "stereocorr/net.hpp"

namespace rf_oracle {

struct Layer {
    enum Kind { Conv3, Pool2, Deconv3 } kind;
};

inline std::vector<Layer> layer_sequence(const stereocorr::ArchSpec& arch) {
    std::vector<Layer> seq;
    size_t pool_idx = 0;
    for (int k = 1; k <= arch.conv_layers; ++k) {
        seq.push_back({Layer::Conv3});
        if (pool_idx < arch.pool_after.size() && arch.pool_after[pool_idx] == k) {
            seq.push_back({Layer::Pool2});
            ++pool_idx;
        }
    }
    for (int d = 0; d < arch.pools(); ++d) seq.push_back({Layer::Deconv3});
    return seq;
}

inline int mask_receptive_field(const stereocorr::ArchSpec& arch, int width) {
    const auto seq = layer_sequence(arch);
    std::vector<int> widths = {width};
    for (const auto& l : seq) {
        const int w = widths.back();
        widths.push_back(l.kind == Layer::Pool2 ? w / 2 : l.kind == Layer::Deconv3 ? w * 2 : w);
    }
    int worst = 0;
    const int out_w = widths.back();
    for (int q0 = out_w / 2; q0 < std::min(out_w, out_w / 2 + arch.pool_factor()); ++q0) {
        std::vector<std::uint8_t> mask(size_t(out_w), 0);
        mask[size_t(q0)] = 1;
        for (int li = int(seq.size()) - 1; li >= 0; --li) {
            const int w_in = widths[size_t(li)];
            std::vector<std::uint8_t> in_mask(size_t(w_in), 0);
            for (int q = 0; q < int(mask.size()); ++q) {
                if (!mask[size_t(q)]) continue;
                switch (seq[size_t(li)].kind) {
                case Layer::Conv3:
                    for (int x = q - 1; x <= q + 1; ++x)
                        if (x >= 0 && x < w_in) in_mask[size_t(x)] = 1;
                    break;
                case Layer::Pool2:
                    for (int x = 2 * q; x <= 2 * q + 1; ++x)
                        if (x >= 0 && x < w_in) in_mask[size_t(x)] = 1;
                    break;
                case Layer::Deconv3:
                    // out q receives in i with 2i + ki - 1 == q, ki in {0,1,2}
                    for (int twice = q - 1; twice <= q + 1; ++twice)
                        if (twice % 2 == 0 && twice / 2 >= 0 && twice / 2 < w_in)
                            in_mask[size_t(twice / 2)] = 1;
                    break;
                }
            }
            mask = std::move(in_mask);
        }
        int lo = -1, hi = -1;
        for (int x = 0; x < int(mask.size()); ++x)
            if (mask[size_t(x)]) {
                if (lo < 0) lo = x;
                hi = x;
            }
        worst = std::max(worst, hi - lo + 1);
    }
    return worst;
}

} // namespace rf_oracle
