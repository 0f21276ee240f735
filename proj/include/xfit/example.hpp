#pragma once

#include <string>

namespace xfit {

// One annotated example in text-to-text form.
struct Example {
    std::string input;
    std::string output;

    bool operator==(const Example&) const = default;
    auto operator<=>(const Example&) const = default;
};

}  // namespace xfit
