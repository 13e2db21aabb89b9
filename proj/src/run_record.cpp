#include "anl/run_record.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "anl/errors.hpp"

namespace fs = std::filesystem;

namespace anl {

std::string git_describe_string() {
    std::FILE* pipe = popen("git describe --always --dirty 2>/dev/null", "r");
    if (!pipe) return "unknown";
    char buf[256];
    std::string out;
    while (std::fgets(buf, sizeof(buf), pipe)) out += buf;
    pclose(pipe);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}

std::string write_run_record(const std::string& out_dir, const RunRecord& record) {
    fs::create_directories(out_dir);
    nlohmann::json j;
    j["subcommand"] = record.subcommand;
    j["resolved_config"] = record.resolved_config;
    j["seed"] = record.seed;
    j["git_describe"] = record.git_describe;
    j["wall_time_s"] = record.wall_time_s;
    j["artifacts"] = record.artifacts;
    j["status"] = record.status;

    const fs::path final_path = fs::path(out_dir) / ("run_" + record.subcommand + ".json");
    const fs::path tmp = final_path.string() + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw DataError("cannot write run record: " + tmp.string());
        f << j.dump(2) << "\n";
    }
    fs::rename(tmp, final_path);
    return final_path.string();
}

}  // namespace anl
