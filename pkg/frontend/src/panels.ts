/** DOM panels. Each render function projects the model into its panel;
 * user gestures go through the controller, never straight to the model
 * (the core is the single source of truth).
 */

import { SessionModel } from "./model.js";
import { LayoutNode, seedNodes, stepLayout } from "./layout.js";
import { GraphPayload } from "./protocol.js";

export interface Controller {
  send(cmd: string, fields?: Record<string, unknown>): void;
  toggleLineBreak(file: string, line: number): void;
  expandGraph(): void;
  breakpointAt(file: string, line: number): boolean;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

// -- source ------------------------------------------------------------

export function renderSource(root: HTMLElement, model: SessionModel, ctl: Controller): void {
  root.replaceChildren();
  const w = model.source;
  if (!w) {
    root.append(el("div", "empty", "source unavailable"));
    return;
  }
  root.append(el("div", "panel-title", w.file));
  w.lines.forEach((text, i) => {
    const n = w.first_line + i;
    const row = el("div", n === w.highlight ? "src-line current" : "src-line");
    const gutter = el("span", "gutter", String(n).padStart(4));
    if (ctl.breakpointAt(w.file, n)) gutter.classList.add("bp");
    gutter.title = "toggle breakpoint";
    gutter.onclick = () => ctl.toggleLineBreak(w.file, n);
    row.append(gutter, el("span", "code", text));
    root.append(row);
  });
}

// -- timeline -----------------------------------------------------------

export function renderTimeline(root: HTMLElement, model: SessionModel, ctl: Controller): void {
  root.replaceChildren();
  root.append(el("div", "panel-title", "states"));
  const locked = model.lockedStates();
  for (const entry of model.states) {
    const name = entry.names[0];
    const row = el("div", "state-row");
    if (name === model.currentState) row.classList.add("current");
    const label = entry.names.join(" ");
    row.append(el("span", "state-name", locked.has(name) ? `\u{1F512} ${label}` : label));
    row.append(el("span", "state-status", entry.status));
    row.onclick = () => ctl.send("rewind", { target: name });
    root.append(row);
  }
}

// -- backtrace ------------------------------------------------------------

export function renderBacktrace(root: HTMLElement, model: SessionModel): void {
  root.replaceChildren();
  root.append(el("div", "panel-title", "backtrace"));
  if (!model.backtrace.length) {
    root.append(el("div", "empty", "no frames"));
    return;
  }
  for (const f of model.backtrace) {
    const where = f.file ? ` ${f.file}:${f.line}` : "";
    root.append(el("div", "bt-row", `#${f.index} @${f.function}${where}`));
  }
}

// -- choice --------------------------------------------------------------

export function renderChoice(root: HTMLElement, model: SessionModel, ctl: Controller): void {
  root.replaceChildren();
  const lock = model.position?.lock ?? null;
  const lockUpcoming = lock !== null && lock.next !== null;
  if (!model.pending && !lockUpcoming) {
    root.hidden = true;
    return;
  }
  root.hidden = false;
  if (model.pending) {
    const { total, kind } = model.pending;
    root.append(
      el("div", "panel-title",
         kind === "thread" ? "pick the next thread" : `choose 0..${total - 1}`),
    );
    if (kind === "thread" && model.runnable) {
      for (const t of model.runnable) {
        const b = el("button", "choice", `thread ${t}`);
        b.onclick = () => ctl.send("thread", { index: t });
        root.append(b);
      }
    } else {
      for (let i = 0; i < total; i++) {
        const b = el("button", "choice", String(i));
        b.onclick = () => ctl.send("choose", { taken: i });
        root.append(b);
      }
    }
  } else if (lock) {
    root.append(el("div", "panel-title", "trace lock"));
    root.append(
      el("div", "lock-note",
         `next locked choice: ${lock.next![0]}/${lock.next![1]} (${lock.pos}/${lock.length} used)`),
    );
    const hint = el("div", "lock-note", "override:");
    root.append(hint);
    for (let i = 0; i < lock.next![1]; i++) {
      const b = el("button", "choice override", String(i));
      b.title = "override the locked choice (clears the rest of the lock)";
      b.onclick = () => ctl.send("choose", { taken: i });
      root.append(b);
    }
  }
}

// -- graph ----------------------------------------------------------------

export class GraphView {
  private nodes = new Map<string, LayoutNode>();
  private shown: GraphPayload | null = null;
  private timer: number | null = null;

  constructor(private svg: SVGSVGElement, private ctl: Controller) {}

  update(graph: GraphPayload | null): void {
    if (!graph) return;
    const same =
      this.shown !== null &&
      JSON.stringify(this.shown.nodes.map((n) => n.id)) ===
        JSON.stringify(graph.nodes.map((n) => n.id));
    this.shown = graph;
    if (!same) {
      this.nodes = seedNodes(
        graph.nodes.map((n) => n.id),
        this.width(),
        this.height(),
      );
    }
    if (this.timer === null) {
      let ticks = 0;
      this.timer = window.setInterval(() => {
        ticks += 1;
        if (!this.shown) return;
        stepLayout(
          this.nodes,
          this.shown.edges.map((e) => ({ from: e.from, to: e.to })),
          this.width(),
          this.height(),
          2,
        );
        this.draw();
        if (ticks > 150 && this.timer !== null) {
          window.clearInterval(this.timer);
          this.timer = null;
        }
      }, 30);
    }
    this.draw();
  }

  private width(): number {
    return this.svg.clientWidth || 640;
  }

  private height(): number {
    return this.svg.clientHeight || 420;
  }

  private draw(): void {
    const SVG = "http://www.w3.org/2000/svg";
    const make = (tag: string): SVGElement => document.createElementNS(SVG, tag);
    this.svg.replaceChildren();
    if (!this.shown) return;
    for (const e of this.shown.edges) {
      const a = this.nodes.get(e.from);
      const b = this.nodes.get(e.to);
      if (!a || !b) continue;
      if (a === b) {
        const loop = make("circle");
        loop.setAttribute("cx", String(a.x + 24));
        loop.setAttribute("cy", String(a.y - 18));
        loop.setAttribute("r", "12");
        loop.setAttribute("class", "edge loop");
        this.svg.append(loop);
        continue;
      }
      const line = make("line");
      line.setAttribute("x1", String(a.x));
      line.setAttribute("y1", String(a.y));
      line.setAttribute("x2", String(b.x));
      line.setAttribute("y2", String(b.y));
      line.setAttribute("class", "edge");
      this.svg.append(line);
      const label = make("text");
      label.setAttribute("x", String((a.x + b.x) / 2));
      label.setAttribute("y", String((a.y + b.y) / 2 - 3));
      label.setAttribute("class", "edge-label");
      label.textContent = e.label;
      this.svg.append(label);
    }
    for (const n of this.shown.nodes) {
      const p = this.nodes.get(n.id);
      if (!p) continue;
      const g = make("g");
      g.setAttribute("class", nodeClass(n));
      g.setAttribute("transform", `translate(${p.x},${p.y})`);
      const lines = [n.label, ...n.components.slice(0, 6)];
      const w = Math.max(...lines.map((l) => l.length)) * 6.4 + 14;
      const h = lines.length * 13 + 10;
      const box = make("rect");
      box.setAttribute("x", String(-w / 2));
      box.setAttribute("y", String(-h / 2));
      box.setAttribute("width", String(w));
      box.setAttribute("height", String(h));
      box.setAttribute("rx", "4");
      g.append(box);
      lines.forEach((text, i) => {
        const t = make("text");
        t.setAttribute("x", String(-w / 2 + 6));
        t.setAttribute("y", String(-h / 2 + 14 + 13 * i));
        t.setAttribute("class", i === 0 ? "node-title" : "node-comp");
        t.textContent = text;
        g.append(t);
      });
      // a node without outgoing edges may be collapsed: one click, one request
      g.addEventListener("click", () => this.ctl.expandGraph());
      this.svg.append(g);
    }
  }
}

function nodeClass(n: { attributes: [string, string][]; components: string[] }): string {
  const attrs = new Map(n.attributes);
  if (attrs.get("dangling") === "true") return "gnode dangling";
  if ([...attrs.values()].includes("null") || n.components.some((c) => c.endsWith(": null"))) {
    return "gnode has-null";
  }
  return "gnode";
}

// -- transcript -----------------------------------------------------------

export function renderTranscript(root: HTMLElement, model: SessionModel): void {
  root.replaceChildren();
  const recent = model.transcript.slice(-200);
  for (const line of recent) {
    root.append(el("div", `t-${line.kind}`, line.text));
  }
  root.scrollTop = root.scrollHeight;
}

// -- status bar --------------------------------------------------------------

export function renderStatus(root: HTMLElement, model: SessionModel): void {
  const pos = model.position;
  const conn = model.connected ? "connected" : "disconnected";
  if (!pos) {
    root.textContent = conn;
    return;
  }
  const where = pos.file ? ` ${pos.file}:${pos.line}` : "";
  const fn = pos.function ? ` @${pos.function}${where} (thread ${pos.thread})` : "";
  root.textContent = `${conn} | ${pos.status}${fn}`;
}
