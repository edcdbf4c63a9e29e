#pragma once

// A whole trained system in one SGT1 checkpoint: extractor ("epfe."),
// decoder ("llm."), optional gate ("gate.") and small "meta.*" tensors
// holding the configurations. The vocabulary sits next to it in
// "<checkpoint>.vocab".

#include <optional>
#include <string>

#include "streamgate/cognition.hpp"
#include "streamgate/epfe.hpp"
#include "streamgate/gate.hpp"

namespace streamgate {

struct Bundle {
    SsmParams epfe;
    ToyDecoder decoder;
    Vocab vocab;
    std::optional<GateModel> gate;
};

std::string vocab_path_for(const std::string &checkpoint_path);

void save_bundle(const std::string &path, const Bundle &bundle);
// Throws FormatError when meta tensors or parameters are missing.
Bundle load_bundle(const std::string &path);

} // namespace streamgate
