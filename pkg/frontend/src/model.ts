/** The client-side session model: a pure reflection of gateway answers.
 *
 * Every mutation comes from a gateway response or broadcast event; the
 * panels render this model and never guess ahead of the core. Messages
 * that carry no model change land in the transcript, so nothing is
 * silently dropped.
 */

import {
  BacktraceResult,
  EventMessage,
  FrameEntry,
  GraphPayload,
  PendingChoice,
  Position,
  Response,
  ServerMessage,
  SourceWindowPayload,
  StateEntry,
  StatesResult,
  isEvent,
} from "./protocol.js";

export interface TranscriptLine {
  kind: "event" | "reply" | "error" | "info";
  text: string;
}

/** Verbs whose ok-responses the model consumes into state (possibly
 * idempotently); anything else lands in the transcript. */
export const HANDLED_COMMANDS = new Set([
  "start", "step", "next", "over", "run", "rewind", "thread", "choose",
  "position", "states", "backtrace", "source", "graph", "trace-load",
  "trace-save", "explore", "break", "delete", "name", "show",
]);

export class SessionModel {
  connected = false;
  position: Position | null = null;
  states: StateEntry[] = [];
  currentState: string | null = null;
  pending: PendingChoice | null = null;
  runnable: number[] | null = null;
  backtrace: FrameEntry[] = [];
  source: SourceWindowPayload | null = null;
  graph: GraphPayload | null = null;
  graphDepth = 3;
  lockActive = false;
  transcript: TranscriptLine[] = [];

  /** State names currently carrying the locked-trace glyph. The server
   * computes the flag, so glyphs vanish from the suffix the moment an
   * override truncates the lock. */
  lockedStates(): Set<string> {
    const out = new Set<string>();
    for (const s of this.states) if (s.locked) out.add(s.names[0]);
    return out;
  }

  log(kind: TranscriptLine["kind"], text: string): void {
    this.transcript.push({ kind, text });
  }

  /** Apply any server message; `cmdFor` resolves a response id to the
   * request verb it answers (the connection layer tracks this). */
  apply(msg: ServerMessage, cmdFor: (id: number | null) => string | undefined): void {
    if (isEvent(msg)) {
      this.applyEvent(msg);
    } else if (msg.ok) {
      this.applyResponse(cmdFor(msg.id) ?? "?", msg.result as Record<string, unknown>);
    } else {
      this.log("error", `error: ${msg.error}`);
    }
  }

  applyEvent(ev: EventMessage): void {
    switch (ev.event) {
      case "state-minted":
        this.log("event", `new state ${ev.name} (${ev.status})`);
        break;
      case "rewound":
        this.log("event", `rewound to ${ev.name} (${ev.status})`);
        break;
      case "choice-pending":
        this.pending = {
          total: ev.total as number,
          kind: ev.kind as PendingChoice["kind"],
        };
        this.log("event", `choice pending (${ev.kind}, total ${ev.total})`);
        break;
      case "position": {
        const fn = ev.function ?? "?";
        const where = ev.file ? ` ${ev.file}:${ev.line}` : "";
        this.log("event", `at @${fn}${where} (thread ${ev.thread})`);
        break;
      }
      case "terminal":
        this.pending = null;
        this.log("event", `program ${ev.status}`);
        break;
      default:
        this.log("info", `unknown event: ${JSON.stringify(ev)}`);
    }
  }

  applyResponse(cmd: string, result: Record<string, unknown>): void {
    switch (cmd) {
      case "states": {
        const r = result as unknown as StatesResult;
        this.states = r.states;
        this.currentState = r.current;
        break;
      }
      case "backtrace": {
        this.backtrace = (result as unknown as BacktraceResult).frames;
        break;
      }
      case "source": {
        this.source = (result as unknown as SourceResultShape).window;
        break;
      }
      case "graph": {
        this.graph = result as unknown as GraphPayload;
        break;
      }
      case "trace-load":
        this.log("reply", `trace loaded: ${result.choices} choices, ${result.states} states`);
        break;
      case "explore":
        if (result.trace === null) {
          this.log("reply", `explore: no fault found (${result.states} states)`);
        } else {
          this.log("reply", `explore: fault trace with ${(result.trace as unknown[]).length} choices`);
        }
        break;
      case "break":
        this.log("reply", `breakpoint ${result.id}: ${result.spec}`);
        break;
      case "show":
        for (const line of (result.lines as string[]) ?? []) this.log("reply", line);
        break;
      default:
        if (looksLikePosition(result)) {
          this.setPosition(result as unknown as Position);
        } else if (Object.keys(result).length) {
          this.log("reply", `${cmd}: ${JSON.stringify(result)}`);
        } else {
          this.log("reply", `${cmd}: ok`);
        }
    }
  }

  private setPosition(pos: Position): void {
    this.position = pos;
    this.pending = pos.pending;
    this.runnable = pos.runnable;
    this.lockActive = pos.lock !== null && pos.lock.pos < pos.lock.length;
  }
}

interface SourceResultShape {
  window: SourceWindowPayload | null;
}

function looksLikePosition(result: Record<string, unknown>): boolean {
  return "status" in result && "pending" in result && "function" in result;
}
