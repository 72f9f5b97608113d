#pragma once

#include <optional>
#include <string>

#include "blendscore/proxy.hpp"
#include "blendscore/snis.hpp"

namespace blendscore {

// Provenance recorded in the JSON sidecar next to every bank file.
struct BankProvenance {
    std::uint64_t seed = 0;
    std::string target_preset;
    std::string note;
};

// Binary column container: 8-byte magic, u32 version, u32 flags
// (scores / log-likelihoods / proxy section), u64 N_ref, u64 d, then the
// columns as little-endian f64. A fitted proxy appends its kind, k, rank and
// parameter blocks. "<path>.json" carries the provenance sidecar.
void save_bank(const std::string& path, const ReferenceBank& bank,
               const BankProvenance& provenance, const ProxyModel* proxy = nullptr);

struct LoadedBank {
    ReferenceBank bank;
    std::optional<ProxyModel> proxy;
    BankProvenance provenance;
};

LoadedBank load_bank(const std::string& path);

// Sample sets reuse the same container with no optional columns.
void save_samples(const std::string& path, const Matrix& samples,
                  const BankProvenance& provenance);

}  // namespace blendscore
