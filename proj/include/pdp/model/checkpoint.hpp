#pragma once

#include <map>
#include <string>

#include "pdp/model/config.hpp"
#include "pdp/model/network.hpp"

namespace pdp {

// Named-tensor container with the bookkeeping needed for exact training
// resume. Optimizer momentum is stored under "opt.<param name>".
struct Checkpoint {
    std::string schema_id = kSchemaId;
    RunConfig config;
    int epoch = 0;
    std::int64_t step = 0;
    real best_map50 = -1.0;
    std::string rng_state;  // trainer RNG, empty for eval-only checkpoints
    std::map<std::string, Tensor> tensors;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

// Copies every parameter and buffer of the network into ckpt.tensors.
void store_network(const Network& net, Checkpoint& ckpt);

// Restores parameters and buffers by name; throws IoError on missing names
// or shape mismatches.
void load_network(Network& net, const Checkpoint& ckpt);

// Convenience: build a network from the checkpoint's own config and load the
// weights into it.
Network network_from_checkpoint(const Checkpoint& ckpt);

}  // namespace pdp
