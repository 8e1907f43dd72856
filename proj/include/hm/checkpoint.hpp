#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hm/model.hpp"

namespace hm {

// Binary tensor container, little-endian:
//   magic[4] | version u32 | meta_len u32 | meta JSON | tensors (row-major f64)
// A JSON sidecar at <path>.json lists tensor names, shapes and byte
// offsets plus the sha256 of the binary, which loaders verify.
// Magics: "HMWT" weight checkpoints, "HMPB" probe weights, "HMAT"
// activation tables.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_weights(const WeightSet& weights, const std::string& path);
// verify_checksum: compare the binary's sha256 against the sidecar before parsing
WeightSet load_weights(const std::string& path, bool verify_checksum = true);

// forward declarations to avoid a probes.hpp include cycle
struct ProbeModel;
void save_probe(const ProbeModel& probe, const std::string& path);
ProbeModel load_probe(const std::string& path, bool verify_checksum = true);

// Final-prompt-token activations for every (layer, position), one row
// block per prompt; the capture stage writes this, probe/steering stages
// read it.
struct ActivationTable {
    int n_layers = 0;
    int d_model = 0;
    std::vector<HookKind> positions;      // captured position kinds, fixed order
    std::vector<int> labels;              // DecisionLabel as int, per prompt
    std::vector<std::string> framings;    // per prompt
    std::vector<std::uint64_t> ids;       // per prompt
    Mat acts;  // n_prompts x (n_layers * positions.size() * d_model)

    std::size_t n_prompts() const { return acts.rows; }
    std::size_t slot(int layer, std::size_t pos_index) const {
        return (static_cast<std::size_t>(layer) * positions.size() + pos_index) *
               static_cast<std::size_t>(d_model);
    }
    const double* activation(std::size_t prompt, int layer, std::size_t pos_index) const {
        return acts.row(prompt) + slot(layer, pos_index);
    }
    std::size_t position_index(HookKind kind) const;  // throws DataError if absent
};

void save_activations(const ActivationTable& table, const std::string& path);
ActivationTable load_activations(const std::string& path, bool verify_checksum = true);

} // namespace hm
