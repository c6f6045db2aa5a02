#pragma once

// Parameter checkpoints.
//
//   PBDR1
//   meta <key> <value>                  (zero or more; value runs to end of line)
//   param <name> <rows>x<cols> <offset> (offset counted in scalars)
//   blob <total scalars>
//   <little-endian float32 payload>

#include "pbdr/tape.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace pbdr {

inline constexpr const char* kCheckpointMagic = "PBDR1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t offset = 0;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<CheckpointEntry> manifest;
  std::vector<float> blob;

  const CheckpointEntry* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

template <class S>
void append_parameters(Checkpoint& ckpt, const std::vector<Parameter<S>*>& params) {
  for (const Parameter<S>* p : params) {
    ckpt.manifest.push_back({p->name, p->value.rows(), p->value.cols(), ckpt.blob.size()});
    for (Eigen::Index i = 0; i < p->value.size(); ++i) ckpt.blob.push_back(static_cast<float>(p->value.data()[i]));
  }
}

/// Copies stored values into `params`; every parameter must be present with
/// a matching shape.
template <class S>
void restore_parameters(const Checkpoint& ckpt, const std::vector<Parameter<S>*>& params) {
  for (Parameter<S>* p : params) {
    const CheckpointEntry* e = ckpt.find(p->name);
    if (e == nullptr) throw CheckpointError("checkpoint is missing parameter " + p->name);
    if (e->rows != p->value.rows() || e->cols != p->value.cols()) {
      throw CheckpointError("checkpoint shape mismatch for " + p->name);
    }
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      p->value.data()[i] = static_cast<S>(ckpt.blob[e->offset + static_cast<std::size_t>(i)]);
    }
  }
}

}  // namespace pbdr
