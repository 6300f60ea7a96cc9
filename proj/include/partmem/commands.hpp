#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "partmem/config.hpp"
#include "partmem/dataset.hpp"

namespace partmem {

int cmd_synth(const io::SyntheticSpec& spec, const std::filesystem::path& out,
              std::ostream& log);

int cmd_train(const RunConfig& cfg, std::ostream& log);

int cmd_eval(const RunConfig& cfg, std::ostream& log);

int cmd_gradcheck(std::uint64_t seed, std::ostream& log);

int cmd_report(const std::vector<std::filesystem::path>& metrics_files,
               const std::optional<std::filesystem::path>& out_csv, std::ostream& log);

}  // namespace partmem
