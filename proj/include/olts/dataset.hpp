#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

// Offline datasets: a directory holding manifest.json and one binary file of
// length-prefixed trajectory records.
//
// Binary layout, little-endian:
//   "MTRJ"  u32 version  u32 record_count
//   per record: u32 byte_len (of what follows), u64 sim_id, u32 param_count,
//               f64 params[param_count], u32 t_count, u32 field_dim,
//               f64 fields[t_count * field_dim]

namespace olts::dataset {

inline constexpr std::uint32_t kVersion = 1;
inline constexpr const char* kDataFile = "trajectories.mtrj";
inline constexpr const char* kManifestFile = "manifest.json";

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Record {
    std::uint64_t sim_id = 0;
    std::vector<double> params;
    std::uint32_t t_count = 0;
    std::uint32_t field_dim = 0;
    /// Row-major, one row per stored timestep. Row r holds solver timestep
    /// r * Manifest::stride.
    std::vector<double> fields;
    bool operator==(const Record&) const = default;
};

struct Manifest {
    std::string experiment;
    std::string kind;
    std::vector<std::string> param_names;
    /// Human-readable description of each parameter's distribution.
    std::vector<std::string> param_space;
    std::string strategy;
    std::uint64_t count = 0;
    std::vector<std::uint32_t> field_shape;
    std::uint64_t seed = 0;
    /// Timestep stride after subsampling; 1 for a fresh dataset.
    std::uint32_t stride = 1;
    bool operator==(const Manifest&) const = default;
};

/// Streams records to a dataset directory. The manifest is written by
/// close(), with count set to the number of records appended.
class Writer {
public:
    Writer(const std::filesystem::path& dir, Manifest manifest);
    ~Writer();
    Writer(const Writer&) = delete;
    Writer& operator=(const Writer&) = delete;

    void append(const Record& rec);
    void close();

private:
    std::filesystem::path dir_;
    Manifest manifest_;
    std::FILE* file_ = nullptr;
    std::uint64_t written_ = 0;
};

struct Dataset {
    Manifest manifest;
    std::vector<Record> records;
};

/// Throws DatasetError on a bad header, a truncated record, or a manifest
/// count that disagrees with the file.
Dataset read(const std::filesystem::path& dir);
Manifest read_manifest(const std::filesystem::path& dir);

/// Keeps rows whose solver timestep is a multiple of every_k.
Record subsample(const Record& rec, std::uint32_t every_k, std::uint32_t stride);

}  // namespace olts::dataset
