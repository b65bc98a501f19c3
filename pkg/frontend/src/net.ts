/**
 * WebSocket client for the gateway.
 *
 * One binary WebSocket message carries exactly one frame. The client never
 * interprets frames beyond connection bookkeeping: every decoded frame is
 * handed to the scene reducer as an action, so all rendering decisions stay
 * in one place. The socket, the clock, and the retry schedule are injectable
 * so the client can be driven deterministically in tests.
 */

import {
  CLIENT_TYPES,
  FrameError,
  MessageType,
  decodeMessage,
  encodeJson,
  messageName,
} from "./protocol.js";
import type { Action } from "./state.js";

export interface SocketLike {
  binaryType: string;
  send(data: Uint8Array): void;
  close(code?: number, reason?: string): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: { code?: number; reason?: string }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export function browserSocketFactory(url: string): SocketLike {
  const ws = new WebSocket(url);
  ws.binaryType = "arraybuffer";
  return ws as unknown as SocketLike;
}

/** Delay before reconnect attempt `attempt` (1-based): doubles each time. */
export function retryDelayMs(attempt: number, baseMs = 500): number {
  return baseMs * 2 ** (attempt - 1);
}

export const MAX_RECONNECT_ATTEMPTS = 5;

export interface GatewayClientOptions {
  url: string;
  deviceId: string;
  clientVersion?: string;
  onAction: (action: Action) => void;
  socketFactory?: SocketFactory;
  maxRetries?: number;
  baseDelayMs?: number;
  schedule?: (fn: () => void, delayMs: number) => void;
}

export class GatewayClient {
  private readonly url: string;
  private readonly deviceId: string;
  private readonly clientVersion: string;
  private readonly onAction: (action: Action) => void;
  private readonly socketFactory: SocketFactory;
  private readonly maxRetries: number;
  private readonly baseDelayMs: number;
  private readonly schedule: (fn: () => void, delayMs: number) => void;

  private socket: SocketLike | null = null;
  private sendable = false;
  private attempts = 0;
  private closedByUser = false;
  private rejected = false;

  constructor(options: GatewayClientOptions) {
    this.url = options.url;
    this.deviceId = options.deviceId;
    this.clientVersion = options.clientVersion ?? "fhirgate-viewer/0.1";
    this.onAction = options.onAction;
    this.socketFactory = options.socketFactory ?? browserSocketFactory;
    this.maxRetries = options.maxRetries ?? MAX_RECONNECT_ATTEMPTS;
    this.baseDelayMs = options.baseDelayMs ?? 500;
    this.schedule =
      options.schedule ?? ((fn, delayMs) => setTimeout(fn, delayMs));
  }

  get isSendable(): boolean {
    return this.sendable;
  }

  connect(): void {
    this.closedByUser = false;
    this.onAction({ kind: "connection", status: "connecting" });
    this.open();
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close(1000, "viewer closed");
    this.socket = null;
    this.sendable = false;
    this.onAction({ kind: "connection", status: "idle" });
  }

  /**
   * Encode and send one request frame. Only registry messages a viewer may
   * originate are accepted; anything else is a programming error.
   */
  send(msgType: number, doc: unknown): void {
    if (!CLIENT_TYPES.has(msgType)) {
      throw new Error(`viewer may not originate ${messageName(msgType)}`);
    }
    if (!this.socket || !this.sendable) {
      throw new Error("not connected");
    }
    this.socket.send(encodeJson(msgType, doc));
  }

  private open(): void {
    const socket = this.socketFactory(this.url);
    socket.binaryType = "arraybuffer";
    this.socket = socket;
    socket.onopen = () => {
      this.sendable = true;
      socket.send(
        encodeJson(MessageType.Hello, {
          device_id: this.deviceId,
          client_version: this.clientVersion,
        }),
      );
    };
    socket.onmessage = (ev) => this.handleMessage(ev.data);
    socket.onclose = () => {
      if (this.socket !== socket) {
        return; // superseded by a newer connection
      }
      this.socket = null;
      this.sendable = false;
      if (this.closedByUser || this.rejected) {
        return;
      }
      this.retry();
    };
    socket.onerror = () => {
      // The close handler owns recovery; errors always precede a close.
    };
  }

  private handleMessage(data: unknown): void {
    if (!(data instanceof ArrayBuffer) && !(data instanceof Uint8Array)) {
      this.onAction({
        kind: "protocol-error",
        message: "non-binary WebSocket message",
      });
      return;
    }
    try {
      const frame = decodeMessage(data);
      if (frame.msgType === MessageType.HelloAck) {
        this.attempts = 0; // a completed handshake re-arms the retry budget
      } else if (frame.msgType === MessageType.Rejected) {
        this.rejected = true;
      }
      this.onAction({ kind: "frame", frame });
    } catch (err) {
      if (err instanceof FrameError) {
        this.onAction({ kind: "protocol-error", message: err.message });
        this.socket?.close(1002, err.code);
      } else {
        throw err;
      }
    }
  }

  private retry(): void {
    this.attempts += 1;
    if (this.attempts > this.maxRetries) {
      this.onAction({ kind: "connection", status: "failed" });
      return;
    }
    this.onAction({ kind: "connection", status: "lost" });
    this.schedule(() => {
      if (this.closedByUser) {
        return;
      }
      this.onAction({ kind: "connection", status: "connecting" });
      this.open();
    }, retryDelayMs(this.attempts, this.baseDelayMs));
  }
}
