#pragma once

#include "mvcell/volume.hpp"

namespace mvcell {

// Per-voxel normalized regional entropy, same dims as the source volume.
using EntropyMap = Volume;

// Shannon entropy of the 256-bin histogram in the cubic window centered at
// each voxel (side `window`, clipped at boundaries), normalized by log(256).
EntropyMap local_entropy(const Volume& volume, int window = 9);

// Entropy-weighted average: V = (100^Hi Vi + 100^Hj Vj) / (100^Hi + 100^Hj).
Volume fuse_content_based(const Volume& vi, const Volume& vj, const EntropyMap& hi,
                          const EntropyMap& hj);

} // namespace mvcell
