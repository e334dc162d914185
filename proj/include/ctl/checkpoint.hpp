#pragma once

#include <filesystem>
#include <string>

#include "ctl/config.hpp"
#include "ctl/dataset.hpp"
#include "ctl/model.hpp"
#include "ctl/tokenizer.hpp"

namespace ctl {

struct Checkpoint {
  RunConfig config;
  ModelParams params;
  Vocab vocab;
  NormStats stats;
};

// dir/manifest.json, dir/params.bin (little-endian float64 in manifest order,
// normalization stats last), dir/vocab.json. Each file is written to a
// temporary name and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
// Throws ParseError on damaged files, ConfigError when tensors disagree with
// the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Write `contents` to path via path.tmp + rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace ctl
