#pragma once

#include <cstddef>
#include <ostream>
#include <string>

#include "evmamba/model.hpp"

namespace evm::cli {

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Stage table: kind, depth, channels and resolution per stage.
std::string stage_table(const ModelSpec& spec);

/// Group-id grid plus per-group offsets, sizes, directions and step counts.
std::string scan_plan_report(std::size_t height, std::size_t width, std::size_t step);

}  // namespace evm::cli
