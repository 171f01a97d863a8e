#include "pflab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "pflab/common.hpp"

namespace pflab {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};

void write_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& f, void* p, size_t n, const char* what) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  check(static_cast<size_t>(f.gcount()) == n,
        std::string("checkpoint: truncated file while reading ") + what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ActorCritic& net,
                     const AdamState& adam) {
  int64_t pc = net.param_count();
  check(adam.first_moment.size() == static_cast<size_t>(pc),
        "save_checkpoint: Adam state not congruent with parameters");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "save_checkpoint: cannot open " + path.string());

  write_bytes(f, kMagic, 4);
  uint32_t version = kCheckpointVersion;
  write_bytes(f, &version, 4);
  uint64_t p64 = static_cast<uint64_t>(pc);
  write_bytes(f, &p64, 8);
  for (const Tensor& p : net.params())
    write_bytes(f, p.data().data(), p.data().size() * sizeof(double));
  write_bytes(f, adam.first_moment.data(), adam.first_moment.size() * 8);
  write_bytes(f, adam.second_moment.data(), adam.second_moment.size() * 8);
  write_bytes(f, &adam.step_count, 8);
  f.flush();
  check(f.good(), "save_checkpoint: write failed for " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ActorCritic& net,
                     AdamState& adam) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "load_checkpoint: cannot open " + path.string());

  char magic[4];
  read_bytes(f, magic, 4, "magic");
  check(std::memcmp(magic, kMagic, 4) == 0,
        "load_checkpoint: bad magic in " + path.string());
  uint32_t version = 0;
  read_bytes(f, &version, 4, "version");
  check(version == kCheckpointVersion,
        "load_checkpoint: unsupported version " + std::to_string(version));
  uint64_t p64 = 0;
  read_bytes(f, &p64, 8, "parameter count");
  check(p64 == static_cast<uint64_t>(net.param_count()),
        "load_checkpoint: parameter count " + std::to_string(p64) +
            " does not match configured network (" +
            std::to_string(net.param_count()) + ")");

  std::vector<double> params(p64), m(p64), v(p64);
  read_bytes(f, params.data(), params.size() * 8, "parameters");
  read_bytes(f, m.data(), m.size() * 8, "first moments");
  read_bytes(f, v.data(), v.size() * 8, "second moments");
  uint64_t steps = 0;
  read_bytes(f, &steps, 8, "step count");
  f.peek();
  check(f.eof(), "load_checkpoint: trailing bytes in " + path.string());

  size_t off = 0;
  for (Tensor p : net.params()) {
    auto pd = p.mutable_data();
    std::memcpy(pd.data(), params.data() + off, pd.size() * sizeof(double));
    off += pd.size();
  }
  adam.first_moment = std::move(m);
  adam.second_moment = std::move(v);
  adam.step_count = steps;
}

}  // namespace pflab
