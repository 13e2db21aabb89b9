#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"

namespace anl {

// Every CLI run persists one of these next to its outputs; it carries enough
// to re-execute the run bit-identically.
struct RunRecord {
    std::string subcommand;
    nlohmann::json resolved_config;  // fully materialized, defaults included
    std::uint64_t seed = 0;
    std::string git_describe;
    double wall_time_s = 0.0;
    std::vector<std::string> artifacts;
    std::string status = "ok";  // ok | skipped | failed
};

std::string git_describe_string();

// Writes <out_dir>/run_<subcommand>.json (atomic rename).
std::string write_run_record(const std::string& out_dir, const RunRecord& record);

}  // namespace anl
