#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace olts::wire {

inline constexpr std::uint32_t kMagic = 0x4D4C5341;  // "MLSA"
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::size_t kCrcSize = 4;
/// Largest element count any array field may carry.
inline constexpr std::uint64_t kMaxValueCount = std::uint64_t{1} << 31;
/// Bodies larger than this are refused by stream readers before allocation.
inline constexpr std::uint32_t kMaxBodyLen = 1u << 30;

/// Sentinel carried by Bye::last_t when a session finalizes without any timestep.
inline constexpr std::uint32_t kEmptyTrajectory = 0xFFFFFFFFu;
/// Bye on the control channel with this sim_id asks the server to drain and stop.
inline constexpr std::uint64_t kDrainSimId = 0xFFFFFFFFFFFFFFFFull;

enum class MsgType : std::uint16_t {
    Hello = 1,
    Timestep = 2,
    Bye = 3,
    Heartbeat = 4,
    ParamRequest = 5,
    ParamAssign = 6,
    Ack = 7,
};

struct Hello {
    std::uint64_t client_id = 0;
    std::uint64_t sim_id = 0;
    std::vector<double> params;
    std::vector<std::uint32_t> field_shape;
    bool operator==(const Hello&) const = default;
};

struct Timestep {
    std::uint64_t sim_id = 0;
    std::uint32_t t_index = 0;
    std::vector<double> values;
    bool operator==(const Timestep&) const = default;
};

struct Bye {
    std::uint64_t sim_id = 0;
    std::uint32_t last_t = 0;
    bool operator==(const Bye&) const = default;
};

struct Heartbeat {
    std::uint64_t sender_id = 0;
    std::uint64_t wallclock_ms = 0;
    bool operator==(const Heartbeat&) const = default;
};

struct ParamRequest {
    std::uint32_t count = 0;
    bool operator==(const ParamRequest&) const = default;
};

struct ParamAssign {
    std::uint64_t sim_id = 0;
    std::vector<double> params;
    bool operator==(const ParamAssign&) const = default;
};

struct Ack {
    std::uint16_t ref_msg_type = 0;
    bool operator==(const Ack&) const = default;
};

using Message = std::variant<Hello, Timestep, Bye, Heartbeat, ParamRequest, ParamAssign, Ack>;

MsgType type_of(const Message& msg);
const char* to_string(MsgType type);

enum class DecodeErrc {
    BadMagic,
    UnsupportedVersion,
    CrcMismatch,
    Truncated,
    UnknownMsgType,
    /// Body length disagrees with the counts it declares (trailing bytes).
    Malformed,
    /// Reader was used after an earlier failure.
    Poisoned,
};

const char* to_string(DecodeErrc code);

class DecodeError : public std::runtime_error {
public:
    DecodeError(DecodeErrc code, const std::string& detail);
    DecodeErrc code() const noexcept { return code_; }

private:
    DecodeErrc code_;
};

class EncodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
std::uint32_t crc32(std::span<const std::byte> data, std::uint32_t seed = 0);

/// Serializes header, body and trailing body CRC. Throws EncodeError when an
/// array exceeds kMaxValueCount.
std::vector<std::byte> encode(const Message& msg);

/// Decodes exactly one frame occupying all of `bytes`.
Message decode(std::span<const std::byte> bytes);

struct FrameHeader {
    std::uint32_t magic = 0;
    std::uint16_t version = 0;
    std::uint16_t msg_type = 0;
    std::uint32_t body_len = 0;
};

/// Parses and validates the 12 header bytes (magic and version only).
FrameHeader parse_header(std::span<const std::byte> bytes);

/// Decodes a body whose CRC has already been checked.
Message decode_body(std::uint16_t msg_type, std::span<const std::byte> body);

/// Incremental decoder for a byte stream. After the first error every further
/// call throws DecodeErrc::Poisoned; the owning connection must be closed.
class FrameDecoder {
public:
    void feed(std::span<const std::byte> bytes);
    /// Returns true and fills `out` when a whole frame is buffered.
    bool next(Message& out);
    bool poisoned() const noexcept { return poisoned_; }
    std::size_t buffered() const noexcept { return buf_.size() - pos_; }

private:
    void fail(DecodeErrc code, const std::string& detail);

    std::vector<std::byte> buf_;
    std::size_t pos_ = 0;
    bool poisoned_ = false;
};

}  // namespace olts::wire
