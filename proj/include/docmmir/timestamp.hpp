#pragma once

#include <chrono>
#include <string>

namespace docmmir {

/// "YYYY-MM-DDTHH:MM:SS.mmmZ".
std::string iso8601_utc(std::chrono::system_clock::time_point t);

}  // namespace docmmir
