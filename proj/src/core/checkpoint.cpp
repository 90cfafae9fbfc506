#include "checkpoint.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace deid {

namespace {

uint64_t fnv1a64_bytes(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::string checksum_hex(const std::string& payload) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64_bytes(payload));
  return buf;
}

void expect_tag(std::istream& is, const char* tag) {
  std::string tok;
  if (!(is >> tok) || tok != tag) {
    throw Error(ErrorKind::Truncated,
                std::string("parse error, expected '") + tag + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_checksummed(const std::string& payload, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open for writing: " + path);
  out << payload << "checksum " << checksum_hex(payload) << "\n";
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path);
}

std::string read_checksummed(const std::string& path, const std::string& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open: " + path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  if (content.compare(0, magic.size(), magic) != 0) {
    throw Error(ErrorKind::Io, "not a " + magic + " file: " + path);
  }
  size_t marker = content.rfind("checksum ");
  if (marker == std::string::npos) {
    throw Error(ErrorKind::Truncated, "missing checksum line: " + path);
  }
  std::string payload = content.substr(0, marker);
  std::string stored = content.substr(marker + 9);
  while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r')) {
    stored.pop_back();
  }
  if (stored != checksum_hex(payload)) {
    throw Error(ErrorKind::Checksum, "checksum mismatch: " + path);
  }
  return payload;
}

void write_net_block(std::ostream& out, const std::string& name, const DenseNet& net) {
  out << "net " << name << "\n";
  out << "sizes " << net.sizes.size();
  for (int s : net.sizes) out << " " << s;
  out << "\n";
  out << "hidden " << act_name(net.hidden_act) << "\n";
  out << "final " << act_name(net.final_act) << "\n";
  out << "params " << net.param_count() << "\n";
  size_t col = 0;
  auto emit = [&](double v) {
    out << format_double(v) << (++col % 8 == 0 ? "\n" : " ");
  };
  for (int l = 0; l < net.layer_count(); ++l) {
    for (double v : net.w[l].a) emit(v);
    for (double v : net.b[l]) emit(v);
  }
  if (col % 8 != 0) out << "\n";
}

std::pair<std::string, DenseNet> read_net_block(std::istream& is) {
  expect_tag(is, "net");
  std::string name;
  is >> name;
  expect_tag(is, "sizes");
  size_t n_sizes = 0;
  is >> n_sizes;
  if (n_sizes < 2 || n_sizes > 64) {
    throw Error(ErrorKind::Truncated, "implausible size count in net block");
  }
  std::vector<int> sizes(n_sizes);
  for (auto& s : sizes) {
    if (!(is >> s)) throw Error(ErrorKind::Truncated, "truncated sizes");
  }
  expect_tag(is, "hidden");
  std::string hidden;
  is >> hidden;
  expect_tag(is, "final");
  std::string fin;
  is >> fin;
  expect_tag(is, "params");
  size_t n_params = 0;
  is >> n_params;

  DenseNet net = init_network(sizes, act_from_name(hidden), act_from_name(fin), 0);
  if (net.param_count() != n_params) {
    throw Error(ErrorKind::Truncated, "parameter count disagrees with sizes");
  }
  for (int l = 0; l < net.layer_count(); ++l) {
    for (double& v : net.w[l].a) {
      if (!(is >> v)) throw Error(ErrorKind::Truncated, "truncated parameters");
    }
    for (double& v : net.b[l]) {
      if (!(is >> v)) throw Error(ErrorKind::Truncated, "truncated parameters");
    }
  }
  return {name, std::move(net)};
}

const DenseNet& Checkpoint::net(const std::string& name) const {
  for (const auto& [n, net] : nets) {
    if (n == name) return net;
  }
  throw Error(ErrorKind::Io, "checkpoint has no net named '" + name + "'");
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ostringstream body;
  body << "deidckpt " << ckpt.format_version << "\n";
  body << "kind " << ckpt.model_kind << "\n";
  body << "nets " << ckpt.nets.size() << "\n";
  for (const auto& [name, net] : ckpt.nets) {
    write_net_block(body, name, net);
  }
  write_checksummed(body.str(), path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string payload = read_checksummed(path, "deidckpt");
  std::istringstream is(payload);

  expect_tag(is, "deidckpt");
  int version = -1;
  is >> version;
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::Version,
                "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.format_version = version;
  expect_tag(is, "kind");
  is >> ckpt.model_kind;
  expect_tag(is, "nets");
  size_t n_nets = 0;
  is >> n_nets;
  for (size_t i = 0; i < n_nets; ++i) {
    ckpt.nets.push_back(read_net_block(is));
  }
  return ckpt;
}

void save_checkpoint(const DenseNet& net, const std::string& model_kind,
                     const std::string& path) {
  Checkpoint ckpt;
  ckpt.model_kind = model_kind;
  ckpt.nets.emplace_back("net", net);
  save_checkpoint(ckpt, path);
}

DenseNet load_single_net(const std::string& path, const std::string& expected_kind) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.model_kind != expected_kind) {
    throw Error(ErrorKind::Io, "checkpoint kind '" + ckpt.model_kind +
                                   "' where '" + expected_kind + "' expected");
  }
  return ckpt.net("net");
}

}  // namespace deid
