/** Bootstraps the UI: one connection, one model, panels re-rendered
 * after every message. Resyncs (states/position/backtrace/source/graph)
 * run after any mutation and on every (re)connect.
 */

import { SessionConnection } from "./connection.js";
import { SessionModel } from "./model.js";
import {
  Controller,
  GraphView,
  renderBacktrace,
  renderChoice,
  renderSource,
  renderStatus,
  renderTimeline,
  renderTranscript,
} from "./panels.js";
import { isEvent } from "./protocol.js";

const model = new SessionModel();
const conn = new SessionConnection();

const $ = (id: string) => document.getElementById(id) as HTMLElement;

const breakpoints = new Map<string, number>(); // "file:line" -> breakpoint id
let graphPath = "$state";

const controller: Controller = {
  send(cmd, fields = {}) {
    conn.request(cmd, fields).then(resyncAfter(cmd)).catch(reportError);
  },
  toggleLineBreak(file, line) {
    const key = `${file}:${line}`;
    const existing = breakpoints.get(key);
    if (existing !== undefined) {
      conn
        .request("delete", { id: existing })
        .then(() => {
          breakpoints.delete(key);
          render();
        })
        .catch(reportError);
    } else {
      conn
        .request("break", { spec: key })
        .then((msg) => {
          if (!isEvent(msg) && msg.ok) {
            breakpoints.set(key, (msg.result as { id: number }).id);
          }
          render();
        })
        .catch(reportError);
    }
  },
  expandGraph() {
    model.graphDepth += 1;
    conn.request("graph", { path: graphPath, depth: model.graphDepth }).catch(reportError);
  },
  breakpointAt(file, line) {
    return breakpoints.has(`${file}:${line}`);
  },
};

const graphView = () => new GraphView($("graph-svg") as unknown as SVGSVGElement, controller);
let graph: GraphView;

function reportError(err: unknown): void {
  model.log("error", String(err instanceof Error ? err.message : err));
  render();
}

const MUTATING = new Set([
  "start", "step", "next", "over", "run", "rewind", "thread", "choose",
  "trace-load", "name", "break", "delete",
]);

function resyncAfter(cmd: string): () => void {
  return () => {
    if (MUTATING.has(cmd)) resync();
  };
}

function resync(): void {
  conn.request("states").catch(reportError);
  conn.request("position").catch(reportError);
  conn.request("backtrace").catch(reportError);
  conn.request("source", { context: 6 }).catch(reportError);
  conn.request("graph", { path: graphPath, depth: model.graphDepth }).catch(reportError);
}

function render(): void {
  renderStatus($("status"), model);
  renderSource($("source"), model, controller);
  renderTimeline($("timeline"), model, controller);
  renderBacktrace($("backtrace"), model);
  renderChoice($("choice"), model, controller);
  renderTranscript($("transcript"), model);
  graph.update(model.graph);
  for (const b of document.querySelectorAll<HTMLButtonElement>("#controls button")) {
    b.disabled = conn.busy || !model.connected;
  }
}

function wireControls(): void {
  const buttons: [string, string, Record<string, unknown>][] = [
    ["btn-step", "step", { count: 1 }],
    ["btn-next", "next", { count: 1 }],
    ["btn-over", "over", { count: 1 }],
    ["btn-run", "run", {}],
    ["btn-start", "start", {}],
  ];
  for (const [id, cmd, fields] of buttons) {
    $(id).addEventListener("click", () => controller.send(cmd, fields));
  }
  $("btn-explore").addEventListener("click", () => {
    conn
      .request("explore", { max: 10000 })
      .then((msg) => {
        if (!isEvent(msg) && msg.ok && msg.result.trace) {
          return conn.request("trace-load", { trace: msg.result.trace }).then(resync);
        }
        render();
        return undefined;
      })
      .catch(reportError);
  });
  const pathInput = $("graph-path") as HTMLInputElement;
  pathInput.value = graphPath;
  pathInput.addEventListener("change", () => {
    graphPath = pathInput.value || "$state";
    model.graphDepth = 3;
    conn.request("graph", { path: graphPath, depth: model.graphDepth }).catch(reportError);
  });
}

conn.onmessage = (msg, cmdFor) => {
  model.apply(msg, cmdFor);
  if (isEvent(msg) && (msg.event === "state-minted" || msg.event === "rewound")) {
    conn.request("states").catch(reportError);
  }
  if (isEvent(msg) && msg.event === "position") {
    conn.request("backtrace").catch(reportError);
    conn.request("source", { context: 6 }).catch(reportError);
  }
  render();
};

conn.onstatus = (connected) => {
  model.connected = connected;
  model.log("info", connected ? "connected" : "connection lost; retrying");
  if (connected) resync();
  render();
};

conn.onbusy = () => render();

window.addEventListener("DOMContentLoaded", () => {
  graph = graphView();
  wireControls();
  const proto = location.protocol === "https:" ? "wss" : "ws";
  conn.connect(`${proto}://${location.host}/session`);
  render();
});
