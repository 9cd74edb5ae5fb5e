#pragma once

#include "olts/sample.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace olts::sampler {

struct UniformReal {
    double lo = 0.0;
    double hi = 1.0;
};
struct Normal {
    double mean = 0.0;
    double std = 1.0;
};
struct DiscreteSet {
    std::vector<double> values;
};
struct Fixed {
    double value = 0.0;
};

using Distribution = std::variant<UniformReal, Normal, DiscreteSet, Fixed>;

struct ParamEntry {
    std::string name;
    Distribution dist;
};

class SpaceError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Ordered list of parameter entries; entry order fixes the ParamVector order.
class ParamSpace {
public:
    ParamSpace() = default;
    /// Throws SpaceError when an invariant is violated (lo < hi, std > 0,
    /// non-empty discrete sets, unique names).
    explicit ParamSpace(std::vector<ParamEntry> entries);

    const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
    std::vector<std::string> names() const;
    const ParamEntry* find(const std::string& name) const;
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<ParamEntry> entries_;
};

struct MonteCarlo {
    std::uint64_t seed = 0;
};

/// Sweeps a discrete axis in ascending order, each value repeated
/// ceil(ensemble / |values|) times; other axes are Monte Carlo draws.
struct OrderedSweep {
    std::string axis_name;
    std::uint64_t seed = 0;
};

using Strategy = std::variant<MonteCarlo, OrderedSweep>;

void validate(const ParamSpace& space, const Strategy& strategy);

/// Pure function of (space, strategy, index): the same arguments give the same
/// vector in every process.
ParamVector next_params(const ParamSpace& space, const Strategy& strategy, std::uint64_t index,
                        std::uint64_t ensemble_size);

/// Counter-based random stream. Each draw is splitmix64 over a state derived
/// from (seed, index, entry); uniforms use the top 53 bits.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);
    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Standard normal via Box-Muller (cosine branch).
    double normal();

private:
    std::uint64_t state_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace olts::sampler
