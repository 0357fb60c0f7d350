#pragma once

// DRAMCKPT model files.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dram/backbone.hpp"
#include "dram/binary_io.hpp"
#include "dram/errors.hpp"
#include "dram/model.hpp"

namespace dram {

inline constexpr std::string_view kCheckpointMagic = "DRAMCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void put_backbone(ByteWriter& w, const Backbone& b) {
  if (const auto* t = std::get_if<TcnConfig>(&b.config())) {
    w.u32(static_cast<std::uint32_t>(t->kernel_size));
    w.u32(static_cast<std::uint32_t>(t->hidden_channels));
    w.u8(t->residual ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(t->dilations.size()));
    for (std::size_t d : t->dilations) w.u32(static_cast<std::uint32_t>(d));
  } else {
    const auto& l = std::get<LstmConfig>(b.config());
    w.u32(static_cast<std::uint32_t>(l.hidden));
    w.u32(static_cast<std::uint32_t>(l.layers));
  }
}

inline BackboneSpec get_spec(ByteReader& r, BackboneKind kind) {
  BackboneSpec s;
  s.kind = kind;
  if (kind == BackboneKind::Tcn) {
    s.tcn.kernel_size = r.u32("tcn kernel size");
    s.tcn.hidden_channels = r.u32("tcn hidden channels");
    s.tcn.residual = r.u8("tcn residual flag") != 0;
    const std::uint32_t n = r.u32("tcn dilation count");
    if (n > 64) throw FormatError("checkpoint: implausible dilation count " + std::to_string(n), r.offset() - 4);
    s.tcn.dilations.clear();
    for (std::uint32_t i = 0; i < n; ++i) s.tcn.dilations.push_back(r.u32("tcn dilation"));
  } else {
    s.lstm.hidden = r.u32("lstm hidden size");
    s.lstm.layers = r.u32("lstm layer count");
  }
  return s;
}

}  // namespace ckpt_detail

inline std::string encode_checkpoint(const PoseModel& m) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(m.variant()));
  w.u8(static_cast<std::uint8_t>(m.kind()));
  w.u32(static_cast<std::uint32_t>(m.dims().audio));
  w.u32(static_cast<std::uint32_t>(m.dims().pose));
  w.u32(static_cast<std::uint32_t>(m.dims().history));
  ckpt_detail::put_backbone(w, m.primary());
  w.u8(m.options().detach_attention ? 1 : 0);
  w.u8(m.options().zm_includes_current ? 1 : 0);
  const auto params = m.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f64s(p->value.storage());
  }
  return w.data();
}

inline PoseModel decode_checkpoint(std::string bytes) {
  ByteReader r(std::move(bytes));
  const std::string magic = r.bytes(8, "magic");
  if (magic != kCheckpointMagic) throw FormatError("checkpoint: bad magic string", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version), 8);
  }
  std::size_t at = r.offset();
  const std::uint8_t variant = r.u8("variant");
  if (variant >= kAllVariants.size()) throw FormatError("checkpoint: unknown variant code", at);
  at = r.offset();
  const std::uint8_t kind = r.u8("backbone kind");
  if (kind > 1) throw FormatError("checkpoint: unknown backbone kind", at);
  ModelDims dims;
  dims.audio = r.u32("a");
  dims.pose = r.u32("p");
  dims.history = r.u32("k");
  const BackboneSpec spec = ckpt_detail::get_spec(r, static_cast<BackboneKind>(kind));
  ModelOptions opts;
  opts.detach_attention = r.u8("detach flag") != 0;
  opts.zm_includes_current = r.u8("buffer flag") != 0;

  at = r.offset();
  PoseModel model = [&] {
    try {
      return PoseModel(static_cast<Variant>(variant), spec, dims, 0, opts);
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("checkpoint: inconsistent header: ") + e.what(), at);
    }
  }();
  auto params = model.parameters();
  const std::uint32_t count = r.u32("parameter count");
  if (count != params.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(params.size()) + " parameter tensors, found " +
                      std::to_string(count),
                      r.offset() - 4);
  }
  for (Parameter* p : params) {
    at = r.offset();
    const std::string name = r.str("parameter name");
    if (name != p->name) throw FormatError("checkpoint: expected parameter '" + p->name + "', found '" + name + "'", at);
    at = r.offset();
    const std::uint32_t nd = r.u32("parameter rank");
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < nd && i < 8; ++i) shape.push_back(r.u32("parameter dim"));
    if (shape != p->value.shape()) {
      throw FormatError("checkpoint: parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                            shape_string(p->value.shape()),
                        at);
    }
    r.f64s(p->value.storage(), p->value.size(), "parameter values");
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes", r.offset());
  return model;
}

inline void write_checkpoint(const std::string& path, const PoseModel& m) { write_file_atomic(path, encode_checkpoint(m)); }
inline PoseModel read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace dram
