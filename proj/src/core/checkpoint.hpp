#pragma once

#include <string>
#include <utility>
#include <vector>

#include "net.hpp"

namespace deid {

// Versioned plain-text model container. One file stores a model kind plus
// one or more named dense networks; every parameter is written with full
// round-trip decimal precision and the whole payload is checksummed.
//
//   deidckpt 1
//   kind <model_kind>
//   nets <count>
//   net <name>
//   sizes <k> <s0> ... <sk-1>
//   hidden <activation>
//   final <activation>
//   params <n>
//   <n values, 8 per line>
//   ...
//   checksum <16 hex digits>
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointVersion;
  std::string model_kind;
  std::vector<std::pair<std::string, DenseNet>> nets;

  const DenseNet& net(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Single-network convenience wrappers.
void save_checkpoint(const DenseNet& net, const std::string& model_kind,
                     const std::string& path);
DenseNet load_single_net(const std::string& path, const std::string& expected_kind);

std::string format_double(double v);

// Building blocks shared with other versioned text formats (world files,
// bundles): one network section, and the trailing checksum line.
void write_net_block(std::ostream& out, const std::string& name, const DenseNet& net);
std::pair<std::string, DenseNet> read_net_block(std::istream& in);
void write_checksummed(const std::string& payload, const std::string& path);
std::string read_checksummed(const std::string& path, const std::string& magic);

}  // namespace deid
