#include "anl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "anl/data_io.hpp"
#include "anl/errors.hpp"
#include "nlohmann/json.hpp"

using nlohmann::json;

namespace anl {

namespace {

constexpr char kMagic[8] = {'A', 'N', 'L', 'C', 'K', 'P', 'T', '1'};

void write_container(const std::string& path, const json& header,
                     const std::vector<nn::ParamRef>& params) {
    json h = header;
    h["format_version"] = kCheckpointFormatVersion;
    h["tensors"] = json::array();
    for (const auto& p : params)
        h["tensors"].push_back({{"name", p.name}, {"shape", p.value->shape()}});
    const std::string hs = h.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f.write(kMagic, sizeof(kMagic));
    const std::uint32_t ver = kCheckpointFormatVersion;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : params)
        f.write(reinterpret_cast<const char*>(p.value->data()),
                static_cast<std::streamsize>(sizeof(double) *
                                             static_cast<std::size_t>(p.value->size())));
    if (!f) throw DataError("short checkpoint write: " + path);
}

json read_container(const std::string& path, std::ifstream& f) {
    f.open(path, std::ios::binary);
    if (!f) throw DataError("cannot read checkpoint: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    std::uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (!f || ver != kCheckpointFormatVersion)
        throw DataError("unsupported checkpoint format version " + std::to_string(ver) + ": " +
                        path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen == 0 || hlen > (1u << 26)) throw DataError("bad checkpoint header: " + path);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw DataError("truncated checkpoint header: " + path);
    try {
        return json::parse(hs);
    } catch (const json::parse_error& e) {
        throw DataError("corrupt checkpoint header: " + path + ": " + e.what());
    }
}

void read_tensors(std::ifstream& f, const json& header, std::vector<nn::ParamRef>& params,
                  const std::string& path) {
    const auto& table = header.at("tensors");
    if (table.size() != params.size())
        throw DataError("checkpoint tensor count mismatch: " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = table[i];
        if (entry.at("name").get<std::string>() != params[i].name)
            throw DataError("checkpoint tensor order mismatch at '" + params[i].name + "': " +
                            path);
        if (entry.at("shape").get<std::vector<int>>() != params[i].value->shape())
            throw DataError("checkpoint tensor shape mismatch at '" + params[i].name + "': " +
                            path);
        f.read(reinterpret_cast<char*>(params[i].value->data()),
               static_cast<std::streamsize>(sizeof(double) *
                                            static_cast<std::size_t>(params[i].value->size())));
        if (!f) throw DataError("truncated checkpoint tensors: " + path);
    }
}

}  // namespace

std::string save_diffusion_checkpoint(DiffusionModel& model, const std::string& path) {
    const auto& cfg = model.net.config();
    json h{{"kind", "diffusion"},
           {"trained", model.is_trained},
           {"config",
            {{"channels", cfg.channels},
             {"image_hw", cfg.image_hw},
             {"base_width", cfg.base_width},
             {"levels", cfg.levels},
             {"time_dim", cfg.time_dim},
             {"out_mult", cfg.out_mult}}},
           {"schedule", {{"betas", model.schedule.betas()}}}};
    auto params = model.net.params();
    write_container(path, h, params);
    model.checkpoint_id = sha256_file(path).substr(0, 16);
    return model.checkpoint_id;
}

DiffusionModel load_diffusion_checkpoint(const std::string& path) {
    std::ifstream f;
    json h = read_container(path, f);
    if (h.at("kind").get<std::string>() != "diffusion")
        throw DataError("checkpoint is not a diffusion model: " + path);
    EpsilonNetConfig cfg;
    const auto& jc = h.at("config");
    cfg.channels = jc.at("channels").get<int>();
    cfg.image_hw = jc.at("image_hw").get<int>();
    cfg.base_width = jc.at("base_width").get<int>();
    cfg.levels = jc.at("levels").get<int>();
    cfg.time_dim = jc.at("time_dim").get<int>();
    cfg.out_mult = jc.at("out_mult").get<int>();
    DiffusionModel model(cfg, NoiseSchedule::from_betas(
                                  h.at("schedule").at("betas").get<std::vector<double>>()));
    auto params = model.net.params();
    read_tensors(f, h, params, path);
    model.is_trained = h.at("trained").get<bool>();
    f.close();
    model.checkpoint_id = sha256_file(path).substr(0, 16);
    return model;
}

std::string save_detector_checkpoint(DetectorModel& model, const std::string& path) {
    const auto& cfg = model.cfg;
    json h{{"kind", "detector"},
           {"trained", model.is_trained},
           {"probe_id", model.probe_id},
           {"config",
            {{"input_mode", to_string(cfg.input_mode)},
             {"use_attention", cfg.use_attention},
             {"backbone_width", cfg.backbone_width},
             {"backbone_stages", cfg.backbone_stages},
             {"timestep", cfg.timestep},
             {"channels", cfg.channels},
             {"input_hw", cfg.input_hw}}}};
    auto params = model.net.params();
    write_container(path, h, params);
    model.checkpoint_id = sha256_file(path).substr(0, 16);
    model.cfg.classifier_id = model.checkpoint_id;
    return model.checkpoint_id;
}

DetectorModel load_detector_checkpoint(const std::string& path) {
    std::ifstream f;
    json h = read_container(path, f);
    if (h.at("kind").get<std::string>() != "detector")
        throw DataError("checkpoint is not a detector: " + path);
    DetectorConfig cfg;
    const auto& jc = h.at("config");
    cfg.input_mode = input_mode_from_string(jc.at("input_mode").get<std::string>());
    cfg.use_attention = jc.at("use_attention").get<bool>();
    cfg.backbone_width = jc.at("backbone_width").get<int>();
    cfg.backbone_stages = jc.at("backbone_stages").get<int>();
    cfg.timestep = jc.at("timestep").get<int>();
    cfg.channels = jc.at("channels").get<int>();
    cfg.input_hw = jc.at("input_hw").get<int>();

    DetectorModel model;
    model.cfg = cfg;
    model.net = DetectorNet(cfg);
    auto params = model.net.params();
    read_tensors(f, h, params, path);
    model.probe_id = h.at("probe_id").get<std::string>();
    model.is_trained = h.at("trained").get<bool>();
    f.close();
    model.checkpoint_id = sha256_file(path).substr(0, 16);
    model.cfg.classifier_id = model.checkpoint_id;
    return model;
}

std::string checkpoint_kind(const std::string& path) {
    std::ifstream f;
    json h = read_container(path, f);
    return h.at("kind").get<std::string>();
}

}  // namespace anl
