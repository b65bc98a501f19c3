import { describe, expect, it } from "vitest";
import {
  FrameError,
  HEADER_LEN,
  KNOWN_TYPES,
  MAX_PAYLOAD,
  MESH_HEADER_LEN,
  MeshFormatError,
  MessageType,
  crc32,
  decodeFrame,
  decodeMesh,
  decodeMessage,
  encodeFrame,
  encodeJson,
  frameJson,
  isJsonType,
  messageName,
} from "../src/protocol.js";
import { hexBytes, loadTrace, receivedFrames } from "./trace.js";

const utf8 = new TextEncoder();

/** Deterministic PRNG so the round-trip corpus is reproducible. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

describe("frame codec", () => {
  it("encodes the documented 11-byte example frame", () => {
    const bytes = encodeJson(MessageType.Hello, {});
    expect(bytes.byteLength).toBe(11);
    expect(bytes).toEqual(hexBytes("4558523101020000007b7d"));
  });

  it("decodes the documented example back to an empty JSON doc", () => {
    const frame = decodeMessage(hexBytes("4558523101020000007b7d"));
    expect(frame.msgType).toBe(MessageType.Hello);
    expect(frameJson(frame)).toEqual({});
  });

  it("writes the payload length as little-endian u32", () => {
    const bytes = encodeFrame(MessageType.MeshChunk, new Uint8Array(258));
    expect(Array.from(bytes.subarray(5, 9))).toEqual([0x02, 0x01, 0x00, 0x00]);
  });

  it("round-trips random frames of every registered type", () => {
    const rand = mulberry32(20240811);
    const types = [...KNOWN_TYPES];
    for (let i = 0; i < 300; i++) {
      const msgType = types[Math.floor(rand() * types.length)]!;
      const payload = new Uint8Array(Math.floor(rand() * 2048));
      for (let j = 0; j < payload.length; j++) {
        payload[j] = Math.floor(rand() * 256);
      }
      const decoded = decodeMessage(encodeFrame(msgType, payload));
      expect(decoded.msgType).toBe(msgType);
      expect(decoded.payload).toEqual(payload);
    }
  });

  it("classifies JSON versus binary types by the high bit", () => {
    expect(isJsonType(MessageType.Hello)).toBe(true);
    expect(isJsonType(MessageType.Error)).toBe(true);
    expect(isJsonType(MessageType.MeshChunk)).toBe(false);
  });

  it("names registry types for diagnostics", () => {
    expect(messageName(MessageType.TimelineLayout)).toBe("TimelineLayout");
    expect(messageName(0x42)).toBe("0x42");
  });
});

describe("frame decode errors", () => {
  function codeOf(buf: Uint8Array): string {
    try {
      decodeFrame(buf);
      return "none";
    } catch (err) {
      if (err instanceof FrameError) {
        return err.code;
      }
      throw err;
    }
  }

  it("rejects a wrong magic before anything else", () => {
    expect(codeOf(utf8.encode("XXXX\x01\x00\x00\x00\x00"))).toBe("bad-magic");
    expect(codeOf(utf8.encode("EY"))).toBe("bad-magic");
  });

  it("treats a correct partial prefix as truncated, not bad magic", () => {
    expect(codeOf(utf8.encode("EX"))).toBe("truncated");
    expect(codeOf(utf8.encode("EXR1\x01"))).toBe("truncated");
  });

  it("rejects unregistered message types", () => {
    const buf = encodeFrame(MessageType.Hello, new Uint8Array(0));
    buf[4] = 0x55;
    expect(codeOf(buf)).toBe("unknown-type");
  });

  it("rejects oversize declarations without waiting for the payload", () => {
    const buf = new Uint8Array(HEADER_LEN);
    buf.set(utf8.encode("EXR1"), 0);
    buf[4] = MessageType.MeshChunk;
    new DataView(buf.buffer).setUint32(5, MAX_PAYLOAD + 1, true);
    expect(codeOf(buf)).toBe("oversize");
  });

  it("reports a short payload as truncated", () => {
    const whole = encodeFrame(MessageType.Hello, utf8.encode('{"a":1}'));
    expect(codeOf(whole.subarray(0, whole.byteLength - 2))).toBe("truncated");
  });

  it("rejects a WebSocket message holding more than one frame", () => {
    const one = encodeJson(MessageType.Hello, {});
    const two = new Uint8Array(one.byteLength * 2);
    two.set(one, 0);
    two.set(one, one.byteLength);
    expect(() => decodeMessage(two)).toThrowError(/after frame end/);
    const { frame, bytesRead } = decodeFrame(two);
    expect(frame.msgType).toBe(MessageType.Hello);
    expect(bytesRead).toBe(one.byteLength);
  });

  it("refuses to encode unregistered types or oversize payloads", () => {
    expect(() => encodeFrame(0x42, new Uint8Array(0))).toThrowError(FrameError);
    const big = { byteLength: MAX_PAYLOAD + 1 } as unknown as Uint8Array;
    expect(() => encodeFrame(MessageType.MeshChunk, big)).toThrowError(
      /exceeds/,
    );
  });
});

describe("crc32", () => {
  it("matches the published check values", () => {
    expect(crc32(new Uint8Array(0))).toBe(0);
    expect(crc32(utf8.encode("123456789"))).toBe(0xcbf43926);
    expect(
      crc32(utf8.encode("The quick brown fox jumps over the lazy dog")),
    ).toBe(0x414fa339);
  });
});

describe("recorded session", () => {
  const trace = loadTrace();

  it("every recorded frame decodes with this codec", () => {
    for (const entry of trace.frames) {
      const frame = decodeMessage(hexBytes(entry.hex));
      expect(frame.msgType).toBe(entry.type);
      expect(messageName(frame.msgType)).toBe(entry.name);
    }
  });

  it("mesh stream checksums match the gateway's (independent CRC route)", () => {
    const frames = receivedFrames(trace);
    let streams = 0;
    for (let i = 0; i < frames.length; i++) {
      if (frames[i]!.msgType !== MessageType.MeshBegin) {
        continue;
      }
      const begin = frameJson(frames[i]!) as {
        label: number;
        total_bytes: number;
        chunk_count: number;
      };
      const chunks: Uint8Array[] = [];
      let j = i + 1;
      for (; frames[j]!.msgType === MessageType.MeshChunk; j++) {
        chunks.push(frames[j]!.payload);
      }
      const end = frameJson(frames[j]!) as { label: number; checksum: number };
      expect(frames[j]!.msgType).toBe(MessageType.MeshEnd);
      expect(end.label).toBe(begin.label);
      expect(chunks.length).toBe(begin.chunk_count);

      const blob = new Uint8Array(chunks.reduce((n, c) => n + c.byteLength, 0));
      let offset = 0;
      for (const chunk of chunks) {
        blob.set(chunk, offset);
        offset += chunk.byteLength;
      }
      expect(blob.byteLength).toBe(begin.total_bytes);
      expect(crc32(blob)).toBe(end.checksum);

      const mesh = decodeMesh(blob);
      expect(mesh.label).toBe(begin.label);
      expect(mesh.vertices.length % 3).toBe(0);
      expect(mesh.triangles.length % 3).toBe(0);
      expect(mesh.vertices.length).toBeGreaterThan(0);
      const vertexCount = mesh.vertices.length / 3;
      for (const index of mesh.triangles) {
        expect(index).toBeLessThan(vertexCount);
      }
      streams += 1;
    }
    expect(streams).toBe(3);
  });
});

describe("mesh container", () => {
  function meshBlob(): Uint8Array {
    const blob = new Uint8Array(MESH_HEADER_LEN + 3 * 12 + 12);
    blob.set(utf8.encode("EXRM"), 0);
    const view = new DataView(blob.buffer);
    view.setUint16(4, 7, true); // label
    view.setUint32(6, 3, true); // vertices
    view.setUint32(10, 1, true); // triangles
    view.setFloat32(14, 1.5, true);
    view.setFloat32(18, -2.0, true);
    view.setFloat32(22, 0.25, true);
    const coords = [0, 0, 0, 10, 0, 0, 0, 10, 0];
    coords.forEach((c, i) => view.setFloat32(MESH_HEADER_LEN + i * 4, c, true));
    [0, 1, 2].forEach((t, i) =>
      view.setUint32(MESH_HEADER_LEN + 36 + i * 4, t, true),
    );
    return blob;
  }

  it("decodes header, vertices, and triangles", () => {
    const mesh = decodeMesh(meshBlob());
    expect(mesh.label).toBe(7);
    expect(mesh.centroid).toEqual([1.5, -2.0, 0.25]);
    expect(Array.from(mesh.vertices)).toEqual([0, 0, 0, 10, 0, 0, 0, 10, 0]);
    expect(Array.from(mesh.triangles)).toEqual([0, 1, 2]);
  });

  it("treats a header-only blob as an empty mesh", () => {
    const blob = meshBlob().slice(0, MESH_HEADER_LEN);
    new DataView(blob.buffer).setUint32(6, 0, true);
    new DataView(blob.buffer).setUint32(10, 0, true);
    const mesh = decodeMesh(blob);
    expect(mesh.centroid).toBeNull();
    expect(mesh.vertices.length).toBe(0);
  });

  it("rejects wrong magic and inconsistent sizes", () => {
    const bad = meshBlob();
    bad[0] = 0x58;
    expect(() => decodeMesh(bad)).toThrowError(MeshFormatError);
    expect(() => decodeMesh(meshBlob().slice(0, 30))).toThrowError(/bytes/);
    const short = meshBlob();
    new DataView(short.buffer).setUint32(6, 4, true);
    expect(() => decodeMesh(short)).toThrowError(MeshFormatError);
  });
});
