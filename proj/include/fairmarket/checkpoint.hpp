#pragma once

// Binary policy checkpoints, little-endian:
//
//   char[8]  magic "FMRLCKPT"
//   u32      version (1)
//   u32      agent count
//   per agent:
//     u32    role (0 seller, 1 buyer)
//     u32    observation size
//     u32    head count, then u32 size per head
//     u32    actor layer-size count, then u32 per size
//     u32    critic layer-size count, then u32 per size
//     u64    parameter count
//     f64[]  actor parameters followed by critic parameters
//
// Optimizer moments are not stored; a loaded policy starts a fresh Adam state.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairmarket/ippo.hpp"

namespace fairmarket {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 8> kCheckpointMagic{'F', 'M', 'R', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("checkpoint: truncated file");
  return v;
}

inline void put_sizes(std::ostream& os, const std::vector<int>& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  for (int v : s) put<std::uint32_t>(os, static_cast<std::uint32_t>(v));
}

inline std::vector<int> get_sizes(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > 1024) throw CheckpointError("checkpoint: implausible size list");
  std::vector<int> s(n);
  for (auto& v : s) v = static_cast<int>(get<std::uint32_t>(is));
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, std::span<const PolicyParams> policies) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(policies.size()));
  for (const auto& p : policies) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.role));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.obs_dim));
    detail::put_sizes(os, p.head_sizes);
    detail::put_sizes(os, p.actor.sizes());
    detail::put_sizes(os, p.critic.sizes());
    const auto flat = flat_params(p);
    detail::put<std::uint64_t>(os, flat.size());
    os.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + path);
}

inline std::vector<PolicyParams> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw CheckpointError("checkpoint: bad magic in " + path);
  if (const auto v = detail::get<std::uint32_t>(is); v != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(v));
  const auto n = detail::get<std::uint32_t>(is);
  std::vector<PolicyParams> out;
  for (std::uint32_t a = 0; a < n; ++a) {
    PolicyParams p;
    const auto role = detail::get<std::uint32_t>(is);
    if (role > 1) throw CheckpointError("checkpoint: unknown role");
    p.role = static_cast<AgentRole>(role);
    p.obs_dim = static_cast<int>(detail::get<std::uint32_t>(is));
    p.head_sizes = detail::get_sizes(is);
    try {
      p.actor = Mlp<double>(detail::get_sizes(is));
      p.critic = Mlp<double>(detail::get_sizes(is));
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("checkpoint: bad network shape: ") + e.what());
    }
    const auto count = detail::get<std::uint64_t>(is);
    if (count != p.param_count()) throw CheckpointError("checkpoint: parameter count does not match shapes");
    std::vector<double> flat(count);
    if (!is.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(count * sizeof(double))))
      throw CheckpointError("checkpoint: truncated parameters");
    set_flat_params(p, flat);
    p.actor_opt = {std::vector<double>(p.actor.param_count()), std::vector<double>(p.actor.param_count()), 0};
    p.critic_opt = {std::vector<double>(p.critic.param_count()), std::vector<double>(p.critic.param_count()), 0};
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace fairmarket
