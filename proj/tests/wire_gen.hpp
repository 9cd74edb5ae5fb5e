#pragma once

#include "olts/wire.hpp"

#include <random>

namespace olts::testing {

/// Random valid message; reals include negative zero, subnormals and
/// infinities so the codec is checked bit for bit.
inline wire::Message random_message(std::mt19937_64& rng) {
    auto real = [&] {
        switch (rng() % 8) {
            case 0: return -0.0;
            case 1: return 4.9e-324;
            case 2: return std::numeric_limits<double>::infinity();
            default: return std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
        }
    };
    auto reals = [&](std::size_t max_len) {
        std::vector<double> v(rng() % (max_len + 1));
        for (auto& x : v) x = real();
        return v;
    };
    switch (rng() % 7) {
        case 0: {
            wire::Hello h{rng(), rng(), reals(8), {}};
            h.field_shape.resize(rng() % 4);
            for (auto& d : h.field_shape) d = static_cast<std::uint32_t>(rng());
            return h;
        }
        case 1: return wire::Timestep{rng(), static_cast<std::uint32_t>(rng()), reals(64)};
        case 2: return wire::Bye{rng(), static_cast<std::uint32_t>(rng())};
        case 3: return wire::Heartbeat{rng(), rng()};
        case 4: return wire::ParamRequest{static_cast<std::uint32_t>(rng())};
        case 5: return wire::ParamAssign{rng(), reals(8)};
        default: return wire::Ack{static_cast<std::uint16_t>(rng())};
    }
}

}  // namespace olts::testing
