#ifndef QSEG_CHECKPOINT_HPP_
#define QSEG_CHECKPOINT_HPP_

#include <string>

#include "qseg/config.hpp"
#include "qseg/network.hpp"

namespace qseg {

/// Binary container: magic "QSEGCKPT", version, the resolved config text, the class count,
/// then per layer its geometry, grad mode, bit configuration, master weights and BN vectors.
/// Values lying on a quantization grid are stored as int64 grid indices plus (k, scale);
/// anything else as raw IEEE-754 doubles. Loading reproduces the network bit for bit.
struct Checkpoint
{
		ExperimentConfig config;
		Network network;
};

std::string serialize_checkpoint(const Network &net, const ExperimentConfig &cfg);
Checkpoint deserialize_checkpoint(const std::string &bytes);

void save_checkpoint(const std::string &path, const Network &net, const ExperimentConfig &cfg);
Checkpoint load_checkpoint(const std::string &path);

} // namespace qseg

#endif // QSEG_CHECKPOINT_HPP_
