// SPDX-License-Identifier: Apache-2.0
#pragma once

#if __has_include(<nlohmann/json.hpp>)
#include <nlohmann/json.hpp>
#else
#include "json.hpp"
#endif

namespace semrec {
using Json = nlohmann::json;
}  // namespace semrec
