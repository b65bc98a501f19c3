/**
 * Binary frame codec for the gateway wire protocol.
 *
 * Layout: 4-byte magic "EXR1", u8 message type, u32 little-endian payload
 * length, then the payload. Types 0x01-0x7F carry UTF-8 JSON, 0x80-0xFF raw
 * bytes. The WebSocket transport delivers exactly one frame per binary
 * message.
 */

export const MAGIC = new Uint8Array([0x45, 0x58, 0x52, 0x31]); // "EXR1"
export const HEADER_LEN = 9;
export const MAX_PAYLOAD = 64 * 1024 * 1024;

export const MessageType = {
  Hello: 0x01,
  HelloAck: 0x02,
  Rejected: 0x03,
  ListPatients: 0x10,
  PatientList: 0x11,
  FindPatient: 0x12,
  PatientSummary: 0x13,
  GetTimeline: 0x14,
  TimelineLayout: 0x15,
  GetClusterLayout: 0x16,
  ClusterLayout: 0x17,
  GetEventDetail: 0x18,
  EventDetail: 0x19,
  ListPipelines: 0x20,
  PipelineList: 0x21,
  GetImaging: 0x22,
  JobAccepted: 0x23,
  JobStatus: 0x24,
  MeshBegin: 0x25,
  MeshEnd: 0x26,
  Error: 0x7f,
  MeshChunk: 0x80,
} as const;

export type MessageTypeName = keyof typeof MessageType;

export const KNOWN_TYPES: ReadonlySet<number> = new Set(
  Object.values(MessageType),
);

/** Types a viewer is allowed to originate. Everything else is server-sent. */
export const CLIENT_TYPES: ReadonlySet<number> = new Set([
  MessageType.Hello,
  MessageType.ListPatients,
  MessageType.FindPatient,
  MessageType.GetTimeline,
  MessageType.GetClusterLayout,
  MessageType.GetEventDetail,
  MessageType.ListPipelines,
  MessageType.GetImaging,
  MessageType.JobStatus,
]);

const NAME_BY_TYPE: ReadonlyMap<number, MessageTypeName> = new Map(
  (Object.entries(MessageType) as [MessageTypeName, number][]).map(
    ([name, value]) => [value, name],
  ),
);

export function messageName(msgType: number): string {
  return NAME_BY_TYPE.get(msgType) ?? `0x${msgType.toString(16).padStart(2, "0")}`;
}

export type FrameErrorCode =
  | "bad-magic"
  | "truncated"
  | "unknown-type"
  | "oversize"
  | "trailing-bytes";

export class FrameError extends Error {
  readonly code: FrameErrorCode;

  constructor(code: FrameErrorCode, message: string) {
    super(message);
    this.name = "FrameError";
    this.code = code;
  }
}

export interface WireFrame {
  readonly msgType: number;
  readonly payload: Uint8Array;
}

export function isJsonType(msgType: number): boolean {
  return msgType < 0x80;
}

const textEncoder = new TextEncoder();
const textDecoder = new TextDecoder("utf-8", { fatal: true });

export function encodeFrame(msgType: number, payload: Uint8Array): Uint8Array {
  if (!KNOWN_TYPES.has(msgType)) {
    throw new FrameError("unknown-type", `message type 0x${msgType.toString(16)}`);
  }
  if (payload.byteLength > MAX_PAYLOAD) {
    throw new FrameError(
      "oversize",
      `payload of ${payload.byteLength} bytes exceeds ${MAX_PAYLOAD}`,
    );
  }
  const out = new Uint8Array(HEADER_LEN + payload.byteLength);
  out.set(MAGIC, 0);
  const view = new DataView(out.buffer);
  view.setUint8(4, msgType);
  view.setUint32(5, payload.byteLength, true);
  out.set(payload, HEADER_LEN);
  return out;
}

export function encodeJson(msgType: number, doc: unknown): Uint8Array {
  return encodeFrame(msgType, textEncoder.encode(JSON.stringify(doc)));
}

export interface DecodeResult {
  readonly frame: WireFrame;
  readonly bytesRead: number;
}

/**
 * Decode one frame from the front of `buf`, mirroring the gateway's checks
 * in the same order: magic prefix, short header, unknown type, oversize
 * declaration, short payload.
 */
export function decodeFrame(buf: Uint8Array): DecodeResult {
  const head = Math.min(buf.byteLength, MAGIC.byteLength);
  for (let i = 0; i < head; i++) {
    if (buf[i] !== MAGIC[i]) {
      throw new FrameError("bad-magic", 'expected "EXR1"');
    }
  }
  if (buf.byteLength < HEADER_LEN) {
    throw new FrameError(
      "truncated",
      `have ${buf.byteLength} bytes, header needs ${HEADER_LEN}`,
    );
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const msgType = view.getUint8(4);
  const payloadLen = view.getUint32(5, true);
  if (!KNOWN_TYPES.has(msgType)) {
    throw new FrameError("unknown-type", `message type 0x${msgType.toString(16)}`);
  }
  if (payloadLen > MAX_PAYLOAD) {
    throw new FrameError(
      "oversize",
      `declared ${payloadLen} bytes exceeds ${MAX_PAYLOAD}`,
    );
  }
  const end = HEADER_LEN + payloadLen;
  if (buf.byteLength < end) {
    throw new FrameError("truncated", `have ${buf.byteLength} bytes, frame needs ${end}`);
  }
  return {
    frame: { msgType, payload: buf.slice(HEADER_LEN, end) },
    bytesRead: end,
  };
}

/**
 * Decode a whole WebSocket message, which must hold exactly one frame.
 */
export function decodeMessage(data: ArrayBuffer | Uint8Array): WireFrame {
  const buf = data instanceof Uint8Array ? data : new Uint8Array(data);
  const { frame, bytesRead } = decodeFrame(buf);
  if (bytesRead !== buf.byteLength) {
    throw new FrameError(
      "trailing-bytes",
      `${buf.byteLength - bytesRead} bytes after frame end`,
    );
  }
  return frame;
}

export function frameJson(frame: WireFrame): unknown {
  if (!isJsonType(frame.msgType)) {
    throw new FrameError(
      "unknown-type",
      `${messageName(frame.msgType)} carries binary, not JSON`,
    );
  }
  return JSON.parse(textDecoder.decode(frame.payload));
}

// ---------------------------------------------------------------------------
// CRC-32 (IEEE reflected, as produced by zlib). Mesh streams end with a
// MeshEnd frame whose checksum covers the reassembled mesh bytes.
// ---------------------------------------------------------------------------

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(bytes: Uint8Array): number {
  let crc = 0xffffffff;
  for (let i = 0; i < bytes.byteLength; i++) {
    crc = CRC_TABLE[(crc ^ bytes[i]!) & 0xff]! ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

// ---------------------------------------------------------------------------
// Surface mesh container: 26-byte header (magic "EXRM", u16 label, u32
// vertex count, u32 triangle count, 3x f32 centroid in millimetres), then
// vertex count x 3 f32 coordinates and triangle count x 3 u32 indices.
// ---------------------------------------------------------------------------

export const MESH_MAGIC = new Uint8Array([0x45, 0x58, 0x52, 0x4d]); // "EXRM"
export const MESH_HEADER_LEN = 26;

export interface SurfaceMesh {
  readonly label: number;
  /** Flat xyz triples, millimetres. */
  readonly vertices: Float32Array;
  /** Flat index triples, counter-clockwise when viewed from outside. */
  readonly triangles: Uint32Array;
  /** Null for an empty mesh (header-only stream). */
  readonly centroid: readonly [number, number, number] | null;
}

export class MeshFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "MeshFormatError";
  }
}

export function decodeMesh(blob: Uint8Array): SurfaceMesh {
  if (blob.byteLength < MESH_HEADER_LEN) {
    throw new MeshFormatError(
      `have ${blob.byteLength} bytes, header needs ${MESH_HEADER_LEN}`,
    );
  }
  for (let i = 0; i < MESH_MAGIC.byteLength; i++) {
    if (blob[i] !== MESH_MAGIC[i]) {
      throw new MeshFormatError('expected "EXRM" magic');
    }
  }
  const view = new DataView(blob.buffer, blob.byteOffset, blob.byteLength);
  const label = view.getUint16(4, true);
  const vertexCount = view.getUint32(6, true);
  const triangleCount = view.getUint32(10, true);
  const expected = MESH_HEADER_LEN + vertexCount * 12 + triangleCount * 12;
  if (blob.byteLength !== expected) {
    throw new MeshFormatError(
      `${vertexCount} vertices, ${triangleCount} triangles need ${expected} bytes, have ${blob.byteLength}`,
    );
  }
  const centroid: readonly [number, number, number] | null =
    vertexCount === 0
      ? null
      : [view.getFloat32(14, true), view.getFloat32(18, true), view.getFloat32(22, true)];
  // Copy via slice so the typed-array views start at offset 0 of their own
  // buffer; the 26-byte header leaves the data 2-byte aligned at best.
  const vertexBytes = blob.slice(MESH_HEADER_LEN, MESH_HEADER_LEN + vertexCount * 12);
  const triangleBytes = blob.slice(MESH_HEADER_LEN + vertexCount * 12, expected);
  return {
    label,
    vertices: new Float32Array(vertexBytes.buffer),
    triangles: new Uint32Array(triangleBytes.buffer),
    centroid,
  };
}
