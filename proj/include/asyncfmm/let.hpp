#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "asyncfmm/traversal.hpp"
#include "asyncfmm/tree.hpp"

namespace asyncfmm {

//! Malformed or duplicated fragment traffic.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FragmentPhase : std::uint8_t { cells = 0, bodies = 1 };

/// Subtree skeleton one rank exports to another. Cells keep the layout of a
/// Tree (root first, contiguous children); cells whose subtree is always
/// accepted by the receiver carry only their multipole and are flagged
/// Cell::kMultipoleOnly. Leaves that may be opened carry their bodies.
struct LetFragment {
  int sender = 0;
  int receiver = 0;
  int order = 0;
  std::vector<Cell> cells;
  std::vector<double> M;
  std::vector<Body> bodies;

  SourceView view() const { return {cells, M, bodies, order, true}; }
  bool empty() const { return cells.empty(); }
};

//! Relative slack on the export test so rounding never flips a guarantee.
inline constexpr double kExportSlack = 1e-10;

/// Cells of `local` the owner of `remote_domain` can reach in a traversal.
/// A cell is shipped multipole-only when
/// (R_cell + R_domain)(1 + slack) < theta * dist(center, remote_domain),
/// with R_domain the domain half-diagonal, because then every receiver cell
/// accepts it; otherwise its children (or, at a leaf, its bodies) follow.
LetFragment select_export(const Tree& local, const Box& remote_domain, double theta, int sender = 0,
                          int receiver = 0);

/// Versioned little-endian wire layout:
///   header  u32 magic "AFLT", u16 version, u8 phase, u8 0, u32 sender,
///           u32 receiver, u32 order, u64 count
///   cells   per cell: u64 key, u8 level, u8 flags, u16 0, u32 parent,
///           u32 child_begin, u32 child_count, u32 body_begin, u32 body_count,
///           u64 subtree_bodies, f64 tight min[3], f64 tight max[3],
///           f64 radius, f64 M[coeff_count(order)]
///   bodies  per body: f64 position[3], f64 charge, u64 id
inline constexpr std::uint32_t kFragmentMagic = 0x544C4641;
inline constexpr std::uint16_t kFragmentVersion = 1;

std::vector<std::uint8_t> encode(const LetFragment& frag, FragmentPhase phase);

//! Decodes one phase part into `frag`, checking the header against what is
//! already there. Throws ProtocolError on malformed input.
FragmentPhase decode(std::span<const std::uint8_t> bytes, LetFragment& frag);

//! Wire size of a phase part without building it.
std::size_t encoded_size(const LetFragment& frag, FragmentPhase phase);

/// Local tree plus remote fragments grafted as extra source roots.
class LET {
 public:
  explicit LET(const Tree& local) : local_(&local) {}

  //! Throws ProtocolError when a fragment from the same sender is already grafted.
  void graft(LetFragment frag);

  std::size_t roots() const { return 1 + remote_.size(); }
  const std::vector<LetFragment>& fragments() const { return remote_; }
  //! Local tree first, then fragments in graft order.
  std::vector<SourceView> sources() const;

 private:
  const Tree* local_;
  std::vector<LetFragment> remote_;
};

LET graft(const Tree& local, std::vector<LetFragment> fragments);

}  // namespace asyncfmm
