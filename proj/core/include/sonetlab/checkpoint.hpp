#pragma once

#include <string>

#include "sonetlab/blocks.hpp"

namespace sonetlab::blocks {

// Checkpoint file: one line of JSON (architecture spec, tensor names/shapes
// and element offsets) terminated by '\n', followed by a flat payload of
// little-endian 64-bit floats.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// NetworkSpec <-> JSON text (used by the checkpoint header and the manifest).
std::string network_spec_to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const std::string& text);

}  // namespace sonetlab::blocks
