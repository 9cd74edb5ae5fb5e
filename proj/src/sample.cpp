#include "olts/sample.hpp"

#include <stdexcept>

namespace olts {

std::optional<double> ParamVector::find(std::string_view name) const {
    for (std::size_t i = 0; i < names.size() && i < values.size(); ++i)
        if (names[i] == name) return values[i];
    return std::nullopt;
}

double ParamVector::at(std::string_view name) const {
    if (auto v = find(name)) return *v;
    throw std::out_of_range("parameter '" + std::string(name) + "' not present");
}

}  // namespace olts
