#pragma once

#include <string>
#include <string_view>

namespace scob::utf8 {

// Throws InputError on malformed input.
std::u32string decode(std::string_view text);
std::string encode(char32_t cp);
std::string encode(std::u32string_view cps);

// "U+0041 'A'" style rendering for diagnostics.
std::string describe(char32_t cp);

}  // namespace scob::utf8
