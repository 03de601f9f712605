/** WebSocket client: request/response correlation plus event fan-out.
 *
 * At most one mutating request is in flight at a time; panels disable
 * their controls through the `busy` callback until the reply lands.
 * On (re)connect the model is rebuilt entirely from a states +
 * position + backtrace resync.
 */

import {
  Request,
  ServerMessage,
  isEvent,
  validateRequest,
  validateServerMessage,
} from "./protocol.js";

const MUTATING = new Set([
  "start", "step", "next", "over", "run", "rewind", "thread", "choose",
  "trace-load", "name", "break", "delete",
]);

export class SessionConnection {
  private ws: WebSocket | null = null;
  private nextId = 1;
  private inflight = new Map<number, { cmd: string; resolve: (msg: ServerMessage) => void }>();
  private mutationInFlight = false;

  onmessage: (msg: ServerMessage, cmdFor: (id: number | null) => string | undefined) => void =
    () => undefined;
  onstatus: (connected: boolean) => void = () => undefined;
  onbusy: (busy: boolean) => void = () => undefined;

  connect(url: string): void {
    this.ws = new WebSocket(url);
    this.ws.onopen = () => this.onstatus(true);
    this.ws.onclose = () => {
      this.onstatus(false);
      this.inflight.clear();
      this.mutationInFlight = false;
      setTimeout(() => this.connect(url), 1000);
    };
    this.ws.onmessage = (raw) => {
      let parsed: unknown;
      try {
        parsed = JSON.parse(raw.data as string);
      } catch {
        return;
      }
      const msg = validateServerMessage(parsed);
      if (msg === null) return;
      const cmdFor = (id: number | null) =>
        id === null ? undefined : this.inflight.get(id)?.cmd;
      this.onmessage(msg, cmdFor);
      if (!isEvent(msg) && msg.id !== null) {
        const entry = this.inflight.get(msg.id as number);
        if (entry) {
          this.inflight.delete(msg.id as number);
          if (MUTATING.has(entry.cmd)) {
            this.mutationInFlight = false;
            this.onbusy(false);
          }
          entry.resolve(msg);
        }
      }
    };
  }

  get busy(): boolean {
    return this.mutationInFlight;
  }

  request(cmd: string, fields: Record<string, unknown> = {}): Promise<ServerMessage> {
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) {
      return Promise.reject(new Error("not connected"));
    }
    if (MUTATING.has(cmd)) {
      if (this.mutationInFlight) {
        return Promise.reject(new Error("a command is already running"));
      }
      this.mutationInFlight = true;
      this.onbusy(true);
    }
    const req: Request = { cmd, id: this.nextId++, ...fields };
    if (!validateRequest(req)) {
      return Promise.reject(new Error("malformed request"));
    }
    return new Promise((resolve) => {
      this.inflight.set(req.id, { cmd, resolve });
      this.ws!.send(JSON.stringify(req));
    });
  }
}
