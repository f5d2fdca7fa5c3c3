#pragma once

#include <optional>
#include <string>

#include "spanlab/model.hpp"
#include "spanlab/quada.hpp"

namespace spanlab {

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint layout: little-endian header (magic "SPLB", format version,
// model config), then tagged sections of raw 64-bit float blobs. Round trips
// are bit-exact. A file without an adapter section loads as zero-initialized
// adapters.
struct Checkpoint {
    BackboneWeights backbone;
    std::optional<QuadaParams> adapters;
};

void save_checkpoint(const std::string& path, const BackboneWeights& backbone,
                     const QuadaParams* adapters = nullptr);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace spanlab
