#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace xfit::gym {

struct Partition {
    std::string name;
    std::vector<std::string> train;
    std::vector<std::string> dev;
    std::vector<std::string> test;
    // Names found in more than one list; non-empty only under allow_overlap.
    std::vector<std::string> overlaps;
};

struct PartitionOptions {
    // Record cross-list duplicates in Partition::overlaps instead of failing.
    bool allow_overlap = false;
    // When set, every name must be registered.
    const std::set<std::string>* registry = nullptr;
};

// Accepts JSON plus single-quoted strings and trailing commas. Errors carry
// the line number. `name` defaults to the file stem.
Partition parse_partition(std::string_view text, const std::string& name, const PartitionOptions& options = {});
Partition load_partition(const std::filesystem::path& path, const PartitionOptions& options = {});
void write_partition(const std::filesystem::path& path, const Partition& p);

}  // namespace xfit::gym
