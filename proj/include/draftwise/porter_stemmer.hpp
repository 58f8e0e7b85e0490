#pragma once

#include <string>
#include <string_view>

namespace draftwise {

/// Porter (1980) suffix stripper, following the author's reference C
/// implementation (including its "bli"->"ble" and "logi"->"log" variants).
/// Words that are not entirely lowercase ASCII letters are returned as-is.
std::string porter_stem(std::string_view word);

}  // namespace draftwise
