#pragma once

#include <optional>

#include "stereocorr/correlation.hpp"
#include "stereocorr/net.hpp"

namespace stereocorr {

enum class CorrMode { Inner, Learned };

inline const char* corr_mode_name(CorrMode m) {
    return m == CorrMode::Inner ? "inner" : "learned";
}
inline CorrMode corr_mode_from_name(const std::string& s) {
    if (s == "inner") return CorrMode::Inner;
    if (s == "learned") return CorrMode::Learned;
    throw ConfigError("unknown correlation mode: " + s + " (expected inner|learned)");
}

/// A trained (or freshly initialized) matcher: the siamese feature network
/// plus, in learned mode, the correlation head.
template <typename T>
struct StereoModelT {
    NetworkT<T> net;
    std::optional<CorrHeadT<T>> head;
    CorrMode corr = CorrMode::Inner;

    static StereoModelT build(const ArchSpec& arch, CorrMode mode, std::uint64_t seed) {
        StereoModelT m;
        m.net = NetworkT<T>::build(arch, seed);
        m.corr = mode;
        if (mode == CorrMode::Learned)
            m.head = CorrHeadT<T>::build(arch.theta, seed, arch.init_gain);
        return m;
    }

    std::vector<std::pair<std::string, Tensor4T<T>*>> parameters() {
        auto out = net.parameters();
        if (head) {
            auto hp = head->parameters();
            out.insert(out.end(), hp.begin(), hp.end());
        }
        return out;
    }
};

using StereoModel = StereoModelT<float>;

} // namespace stereocorr
