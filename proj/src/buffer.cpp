#include "olts/buffer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace olts::buffer {

namespace {

// Uniform in the open interval (0, 1).
double open_unit(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

const char* policy_name(const Policy& policy) {
    switch (policy.index()) {
        case 0: return "fifo";
        case 1: return "reservoir";
        default: return "read_once_random";
    }
}

MemoryBuffer::MemoryBuffer(Policy policy, std::uint32_t capacity, std::uint64_t seed)
    : policy_(policy), capacity_(capacity), put_rng_(seed) {
    if (capacity == 0) throw std::invalid_argument("buffer capacity must be positive");
    if (const auto* ro = std::get_if<ReadOnceRandom>(&policy_); ro && ro->watermark > capacity)
        throw std::invalid_argument("watermark exceeds buffer capacity");
    slots_.reserve(std::min<std::uint32_t>(capacity, 1u << 16));
}

std::uint32_t MemoryBuffer::count_locked() const {
    if (std::holds_alternative<Fifo>(policy_)) return static_cast<std::uint32_t>(fifo_.size());
    return static_cast<std::uint32_t>(slots_.size());
}

bool MemoryBuffer::put_locked(Sample& sample, double weight) {
    if (!(weight > 0.0) || !std::isfinite(weight))
        throw std::invalid_argument("reservoir weights must be strictly positive");

    if (std::holds_alternative<Fifo>(policy_)) {
        if (fifo_.size() == capacity_) fifo_.pop_front();
        fifo_.push_back(std::move(sample));
        return true;
    }
    if (std::holds_alternative<ReadOnceRandom>(policy_)) {
        if (slots_.size() == capacity_) {
            ++rejected_;
            return false;
        }
        slots_.push_back(std::move(sample));
        return true;
    }

    // Comparing log(u)/w is equivalent to comparing u^(1/w).
    const double key = std::log(open_unit(put_rng_)) / weight;
    if (slots_.size() < capacity_) {
        slots_.push_back(std::move(sample));
        keys_.push_back(key);
        weights_.push_back(weight);
        return true;
    }
    const auto min_it = std::min_element(keys_.begin(), keys_.end());
    if (key <= *min_it) {
        ++rejected_;
        return false;
    }
    const auto slot = static_cast<std::size_t>(min_it - keys_.begin());
    slots_[slot] = std::move(sample);
    keys_[slot] = key;
    weights_[slot] = weight;
    return true;
}

bool MemoryBuffer::put(Sample&& sample, double weight) {
    bool accepted;
    {
        std::lock_guard lock(mu_);
        accepted = put_locked(sample, weight);
    }
    if (accepted) changed_.notify_all();
    return accepted;
}

bool MemoryBuffer::put_wait(Sample&& sample, double weight) {
    std::unique_lock lock(mu_);
    for (;;) {
        if (closed_) return false;
        if (put_locked(sample, weight)) break;
        if (!std::holds_alternative<ReadOnceRandom>(policy_)) return false;
        not_full_.wait(lock, [&] { return closed_ || slots_.size() < capacity_; });
    }
    lock.unlock();
    changed_.notify_all();
    return true;
}

std::optional<Batch> MemoryBuffer::get_locked(std::uint32_t batch_size, Rng& rng) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
    Batch batch;
    batch.samples.reserve(batch_size);

    if (std::holds_alternative<Fifo>(policy_)) {
        if (fifo_.size() < batch_size) return std::nullopt;
        for (std::uint32_t i = 0; i < batch_size; ++i) {
            batch.samples.push_back(std::move(fifo_.front()));
            fifo_.pop_front();
        }
    } else if (const auto* ro = std::get_if<ReadOnceRandom>(&policy_)) {
        if (slots_.size() < std::max(ro->watermark, batch_size)) return std::nullopt;
        for (std::uint32_t i = 0; i < batch_size; ++i) {
            std::uniform_int_distribution<std::size_t> pick(0, slots_.size() - 1);
            const auto j = pick(rng);
            batch.samples.push_back(std::move(slots_[j]));
            if (j + 1 != slots_.size()) slots_[j] = std::move(slots_.back());
            slots_.pop_back();
        }
    } else {
        if (slots_.size() < batch_size) return std::nullopt;
        // Weighted sampling without replacement: top batch_size keys u^(1/w).
        std::vector<std::pair<double, std::size_t>> keyed(slots_.size());
        for (std::size_t i = 0; i < slots_.size(); ++i)
            keyed[i] = {std::log(open_unit(rng)) / weights_[i], i};
        std::partial_sort(keyed.begin(), keyed.begin() + batch_size, keyed.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::uint32_t i = 0; i < batch_size; ++i) batch.samples.push_back(slots_[keyed[i].second]);
    }
    batch.assembled_at_step = batches_served_++;
    return batch;
}

std::optional<Batch> MemoryBuffer::try_get_batch(std::uint32_t batch_size, Rng& rng) {
    std::optional<Batch> batch;
    {
        std::lock_guard lock(mu_);
        batch = get_locked(batch_size, rng);
    }
    if (batch) not_full_.notify_all();
    return batch;
}

std::optional<Batch> MemoryBuffer::get_batch_wait(std::uint32_t batch_size, Rng& rng,
                                                  std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        if (auto batch = get_locked(batch_size, rng)) {
            lock.unlock();
            not_full_.notify_all();
            return batch;
        }
        if (closed_) return std::nullopt;
        if (changed_.wait_until(lock, deadline) == std::cv_status::timeout) {
            auto last = get_locked(batch_size, rng);
            if (last) {
                lock.unlock();
                not_full_.notify_all();
            }
            return last;
        }
    }
}

Occupancy MemoryBuffer::occupancy() const {
    std::lock_guard lock(mu_);
    const auto count = count_locked();
    return {count, capacity_, capacity_ - count};
}

void MemoryBuffer::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    not_full_.notify_all();
    changed_.notify_all();
}

bool MemoryBuffer::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

std::uint64_t MemoryBuffer::batches_served() const {
    std::lock_guard lock(mu_);
    return batches_served_;
}

std::uint64_t MemoryBuffer::rejected_puts() const {
    std::lock_guard lock(mu_);
    return rejected_;
}

}  // namespace olts::buffer
