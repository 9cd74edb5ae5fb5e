#pragma once

#include "olts/sample.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <variant>
#include <vector>

namespace olts::buffer {

using Rng = std::mt19937_64;

struct Fifo {};
/// Weighted reservoir with Efraimidis-Spirakis keys u^(1/w).
struct ReservoirWeighted {};
/// Writes go to free slots only; each random read removes what it returns.
struct ReadOnceRandom {
    std::uint32_t watermark = 0;
};

using Policy = std::variant<Fifo, ReservoirWeighted, ReadOnceRandom>;

const char* policy_name(const Policy& policy);

struct Batch {
    std::vector<Sample> samples;
    std::uint64_t assembled_at_step = 0;
};

struct Occupancy {
    std::uint32_t count = 0;
    std::uint32_t capacity = 0;
    std::uint32_t free = 0;
    bool operator==(const Occupancy&) const = default;
};

/// Default watermark for a given batch size.
constexpr std::uint32_t default_watermark(std::uint32_t batch_size) { return 4 * batch_size; }
inline constexpr std::uint32_t kDefaultCapacity = 256;

/// Bounded sample store between reception and training.
///
/// Many producers may call put concurrently with one consumer calling
/// try_get_batch; every operation takes the internal lock, so the sequence of
/// puts and gets is linearizable. The reservoir policy draws its put keys from
/// an internal generator seeded at construction.
class MemoryBuffer {
public:
    /// Throws std::invalid_argument when capacity is zero or the watermark
    /// exceeds capacity.
    MemoryBuffer(Policy policy, std::uint32_t capacity, std::uint64_t seed = 0);

    MemoryBuffer(const MemoryBuffer&) = delete;
    MemoryBuffer& operator=(const MemoryBuffer&) = delete;

    /// Inserts under the policy. Fifo evicts the oldest when full and returns
    /// true; the reservoir returns whether the sample was retained; read-once
    /// returns false on a full buffer. On a false return `sample` is left
    /// untouched so the caller may retry it. Weights must be strictly positive.
    bool put(Sample&& sample, double weight = 1.0);

    /// Returns nullopt while the policy's readiness condition is not met.
    std::optional<Batch> try_get_batch(std::uint32_t batch_size, Rng& rng);

    Occupancy occupancy() const;

    /// Blocking put: waits while a read-once buffer is full. Returns false if
    /// the buffer was closed before the sample could be inserted.
    bool put_wait(Sample&& sample, double weight = 1.0);

    /// Blocks until try_get_batch succeeds, the buffer is closed, or the
    /// timeout expires.
    std::optional<Batch> get_batch_wait(std::uint32_t batch_size, Rng& rng,
                                        std::chrono::milliseconds timeout);

    /// Wakes every waiter; later put_wait calls fail immediately.
    void close();
    bool closed() const;

    const Policy& policy() const noexcept { return policy_; }
    std::uint32_t capacity() const noexcept { return capacity_; }
    std::uint64_t batches_served() const;
    std::uint64_t rejected_puts() const;

private:
    bool put_locked(Sample& sample, double weight);
    std::optional<Batch> get_locked(std::uint32_t batch_size, Rng& rng);
    std::uint32_t count_locked() const;

    Policy policy_;
    std::uint32_t capacity_;
    Rng put_rng_;

    mutable std::mutex mu_;
    std::condition_variable not_full_;
    std::condition_variable changed_;
    bool closed_ = false;

    std::deque<Sample> fifo_;
    std::vector<Sample> slots_;
    /// Reservoir keys as log(u) / w, parallel to slots_.
    std::vector<double> keys_;
    std::vector<double> weights_;

    std::uint64_t batches_served_ = 0;
    std::uint64_t rejected_ = 0;
};

}  // namespace olts::buffer
