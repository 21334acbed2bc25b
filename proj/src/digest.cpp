#include "popevo/digest.hpp"

#include <sodium.h>

#include <stdexcept>

namespace popevo {

namespace {

void ensure_sodium()
{
    static const bool ok = sodium_init() >= 0;
    if (!ok)
        throw std::runtime_error("libsodium initialisation failed");
}

crypto_generichash_state* as_state(std::array<std::uint8_t, 384>& raw)
{
    static_assert(sizeof(crypto_generichash_state) <= 384);
    return reinterpret_cast<crypto_generichash_state*>(raw.data());
}

} // namespace

template <std::size_t Bytes>
Digest<Bytes>::Digest()
{
    ensure_sodium();
    crypto_generichash_init(as_state(state_), nullptr, 0, Bytes);
}

template <std::size_t Bytes>
void Digest<Bytes>::update(std::span<const std::uint8_t> bytes)
{
    crypto_generichash_update(as_state(state_), bytes.data(), bytes.size());
}

template <std::size_t Bytes>
std::array<std::uint8_t, Bytes> Digest<Bytes>::finish()
{
    std::array<std::uint8_t, Bytes> out{};
    crypto_generichash_final(as_state(state_), out.data(), Bytes);
    return out;
}

template class Digest<16>;
template class Digest<32>;

} // namespace popevo
