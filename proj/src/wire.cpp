#include "olts/wire.hpp"

#include <array>
#include <bit>
#include <cstring>

namespace olts::wire {

static_assert(std::endian::native == std::endian::little,
              "the codec copies binary64 values directly and assumes a little-endian host");

namespace {

constexpr std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1u) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
        table[i] = c;
    }
    return table;
}

constexpr auto kCrcTable = make_crc_table();

class Writer {
public:
    explicit Writer(std::vector<std::byte>& out) : out_(out) {}

    template <typename T>
    void put(T value) {
        std::array<std::byte, sizeof(T)> raw;
        std::memcpy(raw.data(), &value, sizeof(T));
        out_.insert(out_.end(), raw.begin(), raw.end());
    }

    void put_reals(const std::vector<double>& values) {
        const auto* p = reinterpret_cast<const std::byte*>(values.data());
        out_.insert(out_.end(), p, p + values.size() * sizeof(double));
    }

private:
    std::vector<std::byte>& out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    template <typename T>
    std::vector<T> get_array(std::uint64_t count) {
        if (count > kMaxValueCount) throw DecodeError(DecodeErrc::Malformed, "array count over limit");
        need(count * sizeof(T));
        std::vector<T> values(count);
        std::memcpy(values.data(), bytes_.data() + pos_, count * sizeof(T));
        pos_ += count * sizeof(T);
        return values;
    }

    void finish() const {
        if (pos_ != bytes_.size())
            throw DecodeError(DecodeErrc::Malformed,
                              std::to_string(bytes_.size() - pos_) + " trailing body bytes");
    }

private:
    void need(std::uint64_t n) const {
        if (n > bytes_.size() - pos_)
            throw DecodeError(DecodeErrc::Truncated, "body shorter than its declared counts");
    }

    std::span<const std::byte> bytes_;
    std::size_t pos_ = 0;
};

void check_count(std::size_t n, const char* what) {
    if (n > kMaxValueCount) throw EncodeError(std::string(what) + " count exceeds 2^31");
}

void encode_body(const Message& msg, Writer& w) {
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Hello>) {
                check_count(m.params.size(), "param");
                check_count(m.field_shape.size(), "shape");
                w.put(m.client_id);
                w.put(m.sim_id);
                w.put(static_cast<std::uint32_t>(m.params.size()));
                w.put_reals(m.params);
                w.put(static_cast<std::uint32_t>(m.field_shape.size()));
                for (auto d : m.field_shape) w.put(d);
            } else if constexpr (std::is_same_v<T, Timestep>) {
                check_count(m.values.size(), "value");
                w.put(m.sim_id);
                w.put(m.t_index);
                w.put(static_cast<std::uint32_t>(m.values.size()));
                w.put_reals(m.values);
            } else if constexpr (std::is_same_v<T, Bye>) {
                w.put(m.sim_id);
                w.put(m.last_t);
            } else if constexpr (std::is_same_v<T, Heartbeat>) {
                w.put(m.sender_id);
                w.put(m.wallclock_ms);
            } else if constexpr (std::is_same_v<T, ParamRequest>) {
                w.put(m.count);
            } else if constexpr (std::is_same_v<T, ParamAssign>) {
                check_count(m.params.size(), "param");
                w.put(m.sim_id);
                w.put(static_cast<std::uint32_t>(m.params.size()));
                w.put_reals(m.params);
            } else if constexpr (std::is_same_v<T, Ack>) {
                w.put(m.ref_msg_type);
            }
        },
        msg);
}

std::uint32_t load_u32(const std::byte* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}

}  // namespace

MsgType type_of(const Message& msg) {
    return static_cast<MsgType>(msg.index() + 1);
}

const char* to_string(MsgType type) {
    switch (type) {
        case MsgType::Hello: return "Hello";
        case MsgType::Timestep: return "Timestep";
        case MsgType::Bye: return "Bye";
        case MsgType::Heartbeat: return "Heartbeat";
        case MsgType::ParamRequest: return "ParamRequest";
        case MsgType::ParamAssign: return "ParamAssign";
        case MsgType::Ack: return "Ack";
    }
    return "Unknown";
}

const char* to_string(DecodeErrc code) {
    switch (code) {
        case DecodeErrc::BadMagic: return "BadMagic";
        case DecodeErrc::UnsupportedVersion: return "UnsupportedVersion";
        case DecodeErrc::CrcMismatch: return "CrcMismatch";
        case DecodeErrc::Truncated: return "Truncated";
        case DecodeErrc::UnknownMsgType: return "UnknownMsgType";
        case DecodeErrc::Malformed: return "Malformed";
        case DecodeErrc::Poisoned: return "Poisoned";
    }
    return "Unknown";
}

DecodeError::DecodeError(DecodeErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

std::uint32_t crc32(std::span<const std::byte> data, std::uint32_t seed) {
    std::uint32_t c = ~seed;
    for (auto b : data) c = kCrcTable[(c ^ std::to_integer<std::uint32_t>(b)) & 0xFFu] ^ (c >> 8);
    return ~c;
}

std::vector<std::byte> encode(const Message& msg) {
    std::vector<std::byte> out(kHeaderSize);
    Writer body(out);
    encode_body(msg, body);
    const auto body_len = static_cast<std::uint32_t>(out.size() - kHeaderSize);

    std::vector<std::byte> header;
    Writer h(header);
    h.put(kMagic);
    h.put(kVersion);
    h.put(static_cast<std::uint16_t>(type_of(msg)));
    h.put(body_len);
    std::memcpy(out.data(), header.data(), kHeaderSize);

    const auto crc = crc32(std::span(out).subspan(kHeaderSize));
    Writer tail(out);
    tail.put(crc);
    return out;
}

FrameHeader parse_header(std::span<const std::byte> bytes) {
    if (bytes.size() < kHeaderSize) throw DecodeError(DecodeErrc::Truncated, "incomplete header");
    Reader r(bytes.first(kHeaderSize));
    FrameHeader h;
    h.magic = r.get<std::uint32_t>();
    h.version = r.get<std::uint16_t>();
    h.msg_type = r.get<std::uint16_t>();
    h.body_len = r.get<std::uint32_t>();
    if (h.magic != kMagic) throw DecodeError(DecodeErrc::BadMagic, "unexpected frame magic");
    if (h.version != kVersion)
        throw DecodeError(DecodeErrc::UnsupportedVersion, "version " + std::to_string(h.version));
    return h;
}

Message decode_body(std::uint16_t msg_type, std::span<const std::byte> body) {
    Reader r(body);
    Message msg;
    switch (static_cast<MsgType>(msg_type)) {
        case MsgType::Hello: {
            Hello m;
            m.client_id = r.get<std::uint64_t>();
            m.sim_id = r.get<std::uint64_t>();
            m.params = r.get_array<double>(r.get<std::uint32_t>());
            m.field_shape = r.get_array<std::uint32_t>(r.get<std::uint32_t>());
            msg = std::move(m);
            break;
        }
        case MsgType::Timestep: {
            Timestep m;
            m.sim_id = r.get<std::uint64_t>();
            m.t_index = r.get<std::uint32_t>();
            m.values = r.get_array<double>(r.get<std::uint32_t>());
            msg = std::move(m);
            break;
        }
        case MsgType::Bye: {
            Bye m;
            m.sim_id = r.get<std::uint64_t>();
            m.last_t = r.get<std::uint32_t>();
            msg = m;
            break;
        }
        case MsgType::Heartbeat: {
            Heartbeat m;
            m.sender_id = r.get<std::uint64_t>();
            m.wallclock_ms = r.get<std::uint64_t>();
            msg = m;
            break;
        }
        case MsgType::ParamRequest:
            msg = ParamRequest{r.get<std::uint32_t>()};
            break;
        case MsgType::ParamAssign: {
            ParamAssign m;
            m.sim_id = r.get<std::uint64_t>();
            m.params = r.get_array<double>(r.get<std::uint32_t>());
            msg = std::move(m);
            break;
        }
        case MsgType::Ack:
            msg = Ack{r.get<std::uint16_t>()};
            break;
        default:
            throw DecodeError(DecodeErrc::UnknownMsgType, "type " + std::to_string(msg_type));
    }
    r.finish();
    return msg;
}

Message decode(std::span<const std::byte> bytes) {
    const auto h = parse_header(bytes);
    const std::uint64_t frame_len = kHeaderSize + std::uint64_t{h.body_len} + kCrcSize;
    if (frame_len > bytes.size()) throw DecodeError(DecodeErrc::Truncated, "frame exceeds input");
    if (frame_len < bytes.size()) throw DecodeError(DecodeErrc::Malformed, "bytes after frame");
    const auto body = bytes.subspan(kHeaderSize, h.body_len);
    if (crc32(body) != load_u32(bytes.data() + kHeaderSize + h.body_len))
        throw DecodeError(DecodeErrc::CrcMismatch, "body checksum differs");
    return decode_body(h.msg_type, body);
}

void FrameDecoder::feed(std::span<const std::byte> bytes) {
    if (pos_ > 0 && pos_ == buf_.size()) {
        buf_.clear();
        pos_ = 0;
    }
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void FrameDecoder::fail(DecodeErrc code, const std::string& detail) {
    poisoned_ = true;
    throw DecodeError(code, detail);
}

bool FrameDecoder::next(Message& out) {
    if (poisoned_) throw DecodeError(DecodeErrc::Poisoned, "decoder failed earlier");
    const auto avail = std::span(buf_).subspan(pos_);
    if (avail.size() < kHeaderSize) return false;
    try {
        const auto h = parse_header(avail);
        if (h.body_len > kMaxBodyLen) fail(DecodeErrc::Malformed, "body length over limit");
        const std::size_t frame_len = kHeaderSize + h.body_len + kCrcSize;
        if (avail.size() < frame_len) return false;
        out = decode(avail.first(frame_len));
        pos_ += frame_len;
        if (pos_ == buf_.size()) {
            buf_.clear();
            pos_ = 0;
        }
        return true;
    } catch (const DecodeError&) {
        poisoned_ = true;
        throw;
    }
}

}  // namespace olts::wire
