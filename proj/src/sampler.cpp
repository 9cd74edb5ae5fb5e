#include "olts/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace olts::sampler {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream)
    : state_(splitmix64(splitmix64(splitmix64(seed) ^ index) ^ stream)) {}

std::uint64_t CounterRng::next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double CounterRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

ParamSpace::ParamSpace(std::vector<ParamEntry> entries) : entries_(std::move(entries)) {
    std::set<std::string> seen;
    for (const auto& e : entries_) {
        if (e.name.empty()) throw SpaceError("parameter entry without a name");
        if (!seen.insert(e.name).second) throw SpaceError("duplicate parameter '" + e.name + "'");
        std::visit(
            [&](const auto& d) {
                using T = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<T, UniformReal>) {
                    if (!(d.lo < d.hi)) throw SpaceError(e.name + ": uniform needs lo < hi");
                } else if constexpr (std::is_same_v<T, Normal>) {
                    if (!(d.std > 0.0)) throw SpaceError(e.name + ": normal needs std > 0");
                } else if constexpr (std::is_same_v<T, DiscreteSet>) {
                    if (d.values.empty()) throw SpaceError(e.name + ": empty discrete set");
                }
            },
            e.dist);
    }
}

std::vector<std::string> ParamSpace::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

const ParamEntry* ParamSpace::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return &e;
    return nullptr;
}

void validate(const ParamSpace& space, const Strategy& strategy) {
    if (const auto* sweep = std::get_if<OrderedSweep>(&strategy)) {
        const auto* e = space.find(sweep->axis_name);
        if (e == nullptr) throw SpaceError("sweep axis '" + sweep->axis_name + "' not in space");
        if (!std::holds_alternative<DiscreteSet>(e->dist))
            throw SpaceError("sweep axis '" + sweep->axis_name + "' must be a discrete set");
    }
}

namespace {

double draw(const Distribution& dist, CounterRng& rng) {
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, UniformReal>) {
                return d.lo + (d.hi - d.lo) * rng.uniform();
            } else if constexpr (std::is_same_v<T, Normal>) {
                return d.mean + d.std * rng.normal();
            } else if constexpr (std::is_same_v<T, DiscreteSet>) {
                const auto k = static_cast<std::size_t>(rng.uniform() * static_cast<double>(d.values.size()));
                return d.values[std::min(k, d.values.size() - 1)];
            } else {
                return d.value;
            }
        },
        dist);
}

}  // namespace

ParamVector next_params(const ParamSpace& space, const Strategy& strategy, std::uint64_t index,
                        std::uint64_t ensemble_size) {
    validate(space, strategy);
    ParamVector out;
    out.names = space.names();
    out.values.reserve(space.size());

    const std::uint64_t seed = std::visit([](const auto& s) { return s.seed; }, strategy);
    const auto* sweep = std::get_if<OrderedSweep>(&strategy);

    for (std::size_t k = 0; k < space.size(); ++k) {
        const auto& entry = space.entries()[k];
        if (sweep != nullptr && entry.name == sweep->axis_name) {
            auto values = std::get<DiscreteSet>(entry.dist).values;
            std::sort(values.begin(), values.end());
            const std::uint64_t n = values.size();
            const std::uint64_t reps = std::max<std::uint64_t>(1, (ensemble_size + n - 1) / n);
            out.values.push_back(values[std::min<std::uint64_t>(index / reps, n - 1)]);
            continue;
        }
        CounterRng rng(seed, index, k);
        out.values.push_back(draw(entry.dist, rng));
    }
    return out;
}

}  // namespace olts::sampler
