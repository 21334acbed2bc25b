#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace popevo {

/// Incremental BLAKE2b (libsodium) with a fixed output width.
template <std::size_t Bytes>
class Digest {
public:
    Digest();
    void update(std::span<const std::uint8_t> bytes);
    std::array<std::uint8_t, Bytes> finish();

private:
    alignas(64) std::array<std::uint8_t, 384> state_{};
};

extern template class Digest<16>;
extern template class Digest<32>;

} // namespace popevo
