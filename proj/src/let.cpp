#include "asyncfmm/let.hpp"

#include <bit>
#include <cstring>

namespace asyncfmm {

namespace {

struct Exporter {
  const Tree& local;
  const Box& domain;
  double theta;
  double domain_radius;
  LetFragment& out;

  bool guaranteed(const Cell& c) const {
    return (c.radius + domain_radius) * (1.0 + kExportSlack) < theta * domain.distance_to(c.center);
  }

  void append(std::uint32_t src, std::uint32_t parent) {
    const Cell& c = local.cells[src];
    Cell copy = c;
    copy.parent = parent;
    copy.child_begin = copy.child_count = 0;
    copy.body_begin = std::uint32_t(out.bodies.size());
    copy.body_count = 0;
    out.cells.push_back(copy);
    const auto m = local.multipole(src);
    out.M.insert(out.M.end(), m.begin(), m.end());
  }

  // Fills in the fragment cell `dst`, a copy of local cell `src`.
  void expand(std::uint32_t src, std::uint32_t dst) {
    const Cell& c = local.cells[src];
    if (guaranteed(c)) {
      out.cells[dst].flags |= Cell::kMultipoleOnly;
      return;
    }
    if (c.leaf()) {
      const auto bodies = local.cell_bodies(src);
      out.cells[dst].body_begin = std::uint32_t(out.bodies.size());
      out.bodies.insert(out.bodies.end(), bodies.begin(), bodies.end());
      out.cells[dst].body_count = c.body_count;
      return;
    }
    const auto first = std::uint32_t(out.cells.size());
    const auto body_start = std::uint32_t(out.bodies.size());
    for (std::uint32_t k = 0; k < c.child_count; ++k) append(c.child_begin + k, dst);
    out.cells[dst].child_begin = first;
    out.cells[dst].child_count = c.child_count;
    for (std::uint32_t k = 0; k < c.child_count; ++k) expand(c.child_begin + k, first + k);
    out.cells[dst].body_begin = body_start;
    out.cells[dst].body_count = std::uint32_t(out.bodies.size()) - body_start;
  }
};

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& buf) : buf_(buf) {}
  template <class T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(std::uint8_t(bits >> (8 * i)));
  }

 private:
  std::vector<std::uint8_t>& buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  template <class T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    if (pos_ + sizeof(U) > bytes_.size()) throw ProtocolError("fragment: truncated payload");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= U(U(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 1 + 4 + 4 + 4 + 8;
constexpr std::size_t kCellFixedBytes = 8 + 1 + 1 + 2 + 4 * 5 + 8 + 8 * 6 + 8;
constexpr std::size_t kBodyBytes = 8 * 4 + 8;

}  // namespace

LetFragment select_export(const Tree& local, const Box& remote_domain, double theta, int sender, int receiver) {
  LetFragment out;
  out.sender = sender;
  out.receiver = receiver;
  out.order = local.order();
  if (local.empty()) return out;
  if (local.order() == 0) throw std::invalid_argument("select_export: upward pass has not run");
  Exporter ex{local, remote_domain, theta, remote_domain.radius(), out};
  ex.append(0, kNoParent);
  ex.expand(0, 0);
  return out;
}

std::size_t encoded_size(const LetFragment& frag, FragmentPhase phase) {
  if (phase == FragmentPhase::cells)
    return kHeaderBytes + frag.cells.size() * (kCellFixedBytes + 8 * coeff_count(frag.order));
  return kHeaderBytes + frag.bodies.size() * kBodyBytes;
}

std::vector<std::uint8_t> encode(const LetFragment& frag, FragmentPhase phase) {
  std::vector<std::uint8_t> buf;
  buf.reserve(encoded_size(frag, phase));
  Writer w(buf);
  w.put(kFragmentMagic);
  w.put(kFragmentVersion);
  w.put(std::uint8_t(phase));
  w.put(std::uint8_t(0));
  w.put(std::uint32_t(frag.sender));
  w.put(std::uint32_t(frag.receiver));
  w.put(std::uint32_t(frag.order));
  if (phase == FragmentPhase::cells) {
    w.put(std::uint64_t(frag.cells.size()));
    const std::size_t nc = frag.cells.empty() ? 0 : coeff_count(frag.order);
    for (std::size_t i = 0; i < frag.cells.size(); ++i) {
      const Cell& c = frag.cells[i];
      w.put(c.key.value);
      w.put(std::uint8_t(c.key.level));
      w.put(c.flags);
      w.put(std::uint16_t(0));
      w.put(c.parent);
      w.put(c.child_begin);
      w.put(c.child_count);
      w.put(c.body_begin);
      w.put(c.body_count);
      w.put(c.subtree_bodies);
      for (int d = 0; d < 3; ++d) w.put(c.tight_box.min[std::size_t(d)]);
      for (int d = 0; d < 3; ++d) w.put(c.tight_box.max[std::size_t(d)]);
      w.put(c.radius);
      for (std::size_t k = 0; k < nc; ++k) w.put(frag.M[i * nc + k]);
    }
  } else {
    w.put(std::uint64_t(frag.bodies.size()));
    for (const Body& b : frag.bodies) {
      for (int d = 0; d < 3; ++d) w.put(b.position[std::size_t(d)]);
      w.put(b.charge);
      w.put(b.id);
    }
  }
  return buf;
}

FragmentPhase decode(std::span<const std::uint8_t> bytes, LetFragment& frag) {
  Reader r(bytes);
  if (r.get<std::uint32_t>() != kFragmentMagic) throw ProtocolError("fragment: bad magic");
  if (r.get<std::uint16_t>() != kFragmentVersion) throw ProtocolError("fragment: unsupported version");
  const auto phase_byte = r.get<std::uint8_t>();
  if (phase_byte > 1) throw ProtocolError("fragment: unknown phase");
  const auto phase = FragmentPhase(phase_byte);
  r.get<std::uint8_t>();
  frag.sender = int(r.get<std::uint32_t>());
  frag.receiver = int(r.get<std::uint32_t>());
  const int order = int(r.get<std::uint32_t>());
  if (order > kMaxOrder) throw ProtocolError("fragment: expansion order out of range");
  frag.order = order;
  const auto count = r.get<std::uint64_t>();
  if (phase == FragmentPhase::cells) {
    if (count > 0 && order < 1) throw ProtocolError("fragment: cells without an expansion order");
    const std::size_t nc = count ? coeff_count(order) : 0;
    if (count * (kCellFixedBytes + 8 * nc) + kHeaderBytes != bytes.size())
      throw ProtocolError("fragment: cell payload size mismatch");
    frag.cells.assign(count, Cell{});
    frag.M.assign(count * nc, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
      Cell& c = frag.cells[i];
      c.key.value = r.get<std::uint64_t>();
      c.key.level = r.get<std::uint8_t>();
      c.flags = r.get<std::uint8_t>();
      r.get<std::uint16_t>();
      c.parent = r.get<std::uint32_t>();
      c.child_begin = r.get<std::uint32_t>();
      c.child_count = r.get<std::uint32_t>();
      c.body_begin = r.get<std::uint32_t>();
      c.body_count = r.get<std::uint32_t>();
      c.subtree_bodies = r.get<std::uint64_t>();
      for (int d = 0; d < 3; ++d) c.tight_box.min[std::size_t(d)] = r.get<double>();
      for (int d = 0; d < 3; ++d) c.tight_box.max[std::size_t(d)] = r.get<double>();
      c.radius = r.get<double>();
      c.center = c.tight_box.center();
      for (std::size_t k = 0; k < nc; ++k) frag.M[i * nc + k] = r.get<double>();
      if (std::uint64_t(c.child_begin) + c.child_count > count) throw ProtocolError("fragment: child range out of bounds");
    }
  } else {
    if (count * kBodyBytes + kHeaderBytes != bytes.size()) throw ProtocolError("fragment: body payload size mismatch");
    frag.bodies.assign(count, Body{});
    for (Body& b : frag.bodies) {
      for (int d = 0; d < 3; ++d) b.position[std::size_t(d)] = r.get<double>();
      b.charge = r.get<double>();
      b.id = r.get<std::uint64_t>();
    }
  }
  if (!r.done()) throw ProtocolError("fragment: trailing bytes");
  return phase;
}

void LET::graft(LetFragment frag) {
  for (const auto& f : remote_)
    if (f.sender == frag.sender)
      throw ProtocolError("graft: duplicate fragment from rank " + std::to_string(frag.sender));
  remote_.push_back(std::move(frag));
}

std::vector<SourceView> LET::sources() const {
  std::vector<SourceView> out{SourceView::of(*local_)};
  for (const auto& f : remote_) out.push_back(f.view());
  return out;
}

LET graft(const Tree& local, std::vector<LetFragment> fragments) {
  LET let(local);
  for (auto& f : fragments) let.graft(std::move(f));
  return let;
}

}  // namespace asyncfmm
