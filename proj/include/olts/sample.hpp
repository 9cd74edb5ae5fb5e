#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace olts {

/// Named real parameters defining one simulation instance. `names` may be
/// empty when the vector arrived over the wire without a schema.
struct ParamVector {
    std::vector<std::string> names;
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    std::optional<double> find(std::string_view name) const;
    double at(std::string_view name) const;
    bool operator==(const ParamVector&) const = default;
};

struct SingleStep {
    std::uint32_t t_index = 0;
    std::vector<double> field;
    bool operator==(const SingleStep&) const = default;
};

/// Whole trajectory stored as one buffer slot; rows are timesteps 0..t_count-1.
struct FullTrajectory {
    std::vector<std::vector<double>> fields;
    std::uint32_t t_count() const noexcept { return static_cast<std::uint32_t>(fields.size()); }
    bool operator==(const FullTrajectory&) const = default;
};

struct Sample {
    std::uint64_t sim_id = 0;
    ParamVector params;
    std::variant<SingleStep, FullTrajectory> unit;
    bool operator==(const Sample&) const = default;
};

}  // namespace olts
