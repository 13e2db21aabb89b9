#pragma once

#include <string>

#include "anl/detector.hpp"
#include "anl/epsilon_net.hpp"

namespace anl {

// Self-describing checkpoint container: magic, format-version integer, JSON
// header (geometry, schedule, config, named tensor table), then raw tensor
// bytes in table order. The checkpoint id is the sha256 of the file bytes,
// computed on save and on load, so caches key on actual parameters.

constexpr int kCheckpointFormatVersion = 1;

std::string save_diffusion_checkpoint(DiffusionModel& model, const std::string& path);
DiffusionModel load_diffusion_checkpoint(const std::string& path);

std::string save_detector_checkpoint(DetectorModel& model, const std::string& path);
DetectorModel load_detector_checkpoint(const std::string& path);

// Peek at the kind ("diffusion" | "detector") without loading tensors.
std::string checkpoint_kind(const std::string& path);

}  // namespace anl
