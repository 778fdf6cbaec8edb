#include "uq/toylm/trace.hpp"

#include "uq/common/error.hpp"

namespace uq::lm {

namespace {
constexpr std::uint32_t kTraceVersion = 1;
}

void TraceRecord::validate() const {
  const std::size_t s = seq_len();
  if (prompt_len > s) fail(ErrorCode::kFormat, "trace prompt length exceeds sequence length");
  if (hidden.size() != layers * s * width) fail(ErrorCode::kFormat, "trace hidden-state block has wrong size");
  if (attention.size() != layers * heads * s * s) fail(ErrorCode::kFormat, "trace attention block has wrong size");
  if (logits.size() != gen_len() * vocab) fail(ErrorCode::kFormat, "trace logits block has wrong size");
}

void write_trace(BinaryWriter& out, const TraceRecord& t) {
  t.validate();
  out.raw("UQT1");
  out.u32(kTraceVersion);
  for (std::size_t v : {t.layers, t.heads, t.width, t.seq_len(), t.prompt_len, t.vocab}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  for (auto id : t.tokens) out.u32(static_cast<std::uint32_t>(id));
  out.f32(t.hidden);
  out.f32(t.attention);
  out.f32(t.logits);
}

TraceRecord read_trace(BinaryReader& in) {
  if (in.raw(4) != "UQT1") fail(ErrorCode::kFormat, "not a trace blob (bad magic)");
  if (auto v = in.u32(); v != kTraceVersion) fail(ErrorCode::kFormat, "unsupported trace version " + std::to_string(v));
  TraceRecord t;
  t.layers = in.u32();
  t.heads = in.u32();
  t.width = in.u32();
  const std::size_t s = in.u32();
  t.prompt_len = in.u32();
  t.vocab = in.u32();
  if (t.prompt_len > s) fail(ErrorCode::kFormat, "trace prompt length exceeds sequence length");
  t.tokens.resize(s);
  for (auto& id : t.tokens) id = static_cast<std::int32_t>(in.u32());
  t.hidden = in.f32(t.layers * s * t.width);
  t.attention = in.f32(t.layers * t.heads * s * s);
  t.logits = in.f32((s - t.prompt_len) * t.vocab);
  return t;
}

}  // namespace uq::lm
