/** Wire types for the gateway protocol (docs/protocol.md, proto 1). */

export const PROTO = 1;

export interface PendingChoice {
  total: number;
  kind: "choose" | "thread";
}

export interface LockInfo {
  length: number;
  pos: number;
  next: [number, number] | null;
}

export interface Position {
  status: string;
  pending: PendingChoice | null;
  runnable: number[] | null;
  lock: LockInfo | null;
  function: string | null;
  file: string | null;
  line: number | null;
  thread: number | null;
}

export interface StateEntry {
  names: string[];
  status: string;
  locked: boolean;
}

export interface StatesResult {
  states: StateEntry[];
  current: string;
}

export interface FrameEntry {
  index: number;
  function: string;
  file: string | null;
  line: number | null;
}

export interface BacktraceResult {
  frames: FrameEntry[];
}

export interface SourceWindowPayload {
  file: string;
  first_line: number;
  lines: string[];
  highlight: number;
}

export interface SourceResult {
  window: SourceWindowPayload | null;
}

export interface GraphNodePayload {
  id: string;
  label: string;
  attributes: [string, string][];
  components: string[];
}

export interface GraphEdgePayload {
  from: string;
  to: string;
  label: string;
}

export interface GraphPayload {
  nodes: GraphNodePayload[];
  edges: GraphEdgePayload[];
}

export interface OkResponse {
  proto: number;
  id: number;
  ok: true;
  result: Record<string, unknown>;
}

export interface ErrorResponse {
  proto: number;
  id: number | null;
  ok: false;
  error: string;
}

export type Response = OkResponse | ErrorResponse;

export interface EventMessage {
  proto: number;
  event:
    | "state-minted"
    | "choice-pending"
    | "position"
    | "terminal"
    | "rewound";
  [key: string]: unknown;
}

export type ServerMessage = Response | EventMessage;

export interface Request {
  cmd: string;
  id: number;
  [key: string]: unknown;
}

export function isEvent(msg: ServerMessage): msg is EventMessage {
  return "event" in msg;
}

/** Runtime shape check: a server message we are willing to process. */
export function validateServerMessage(raw: unknown): ServerMessage | null {
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as Record<string, unknown>;
  if (msg.proto !== PROTO) return null;
  if (typeof msg.event === "string") return msg as unknown as EventMessage;
  if (typeof msg.ok === "boolean" && "id" in msg) {
    if (msg.ok && typeof msg.result !== "object") return null;
    if (!msg.ok && typeof msg.error !== "string") return null;
    return msg as unknown as Response;
  }
  return null;
}

/** Outgoing messages must carry a cmd and a correlation id. */
export function validateRequest(req: Request): boolean {
  return typeof req.cmd === "string" && typeof req.id === "number";
}
