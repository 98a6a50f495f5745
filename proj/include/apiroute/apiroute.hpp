#pragma once

#include "apiroute/catalog.hpp"
#include "apiroute/dataset.hpp"
#include "apiroute/error.hpp"
#include "apiroute/estimation.hpp"
#include "apiroute/executor.hpp"
#include "apiroute/master.hpp"
#include "apiroute/oracle.hpp"
#include "apiroute/parallel.hpp"
#include "apiroute/random.hpp"
#include "apiroute/strategy.hpp"
#include "apiroute/subproblem.hpp"
#include "apiroute/tables.hpp"

namespace apiroute {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace apiroute
