/** Small force-directed layout for the heap graph.
 *
 * Spring forces along edges, pairwise repulsion, mild centering; runs a
 * fixed number of iterations per call so the panel can animate it.
 * Coordinates are presentation only - nothing may assert on them.
 */

export interface LayoutNode {
  id: string;
  x: number;
  y: number;
  vx: number;
  vy: number;
}

export interface LayoutEdge {
  from: string;
  to: string;
}

const SPRING = 0.02;
const SPRING_LENGTH = 140;
const REPULSION = 9000;
const CENTERING = 0.005;
const DAMPING = 0.85;

export function seedNodes(ids: string[], width: number, height: number): Map<string, LayoutNode> {
  const nodes = new Map<string, LayoutNode>();
  ids.forEach((id, i) => {
    // deterministic-ish spiral seeding; the simulation scrambles it anyway
    const angle = i * 2.4;
    const r = 40 + 26 * Math.sqrt(i);
    nodes.set(id, {
      id,
      x: width / 2 + r * Math.cos(angle),
      y: height / 2 + r * Math.sin(angle),
      vx: 0,
      vy: 0,
    });
  });
  return nodes;
}

export function stepLayout(
  nodes: Map<string, LayoutNode>,
  edges: LayoutEdge[],
  width: number,
  height: number,
  iterations = 1,
): void {
  const list = [...nodes.values()];
  for (let it = 0; it < iterations; it++) {
    for (let i = 0; i < list.length; i++) {
      for (let j = i + 1; j < list.length; j++) {
        const a = list[i];
        const b = list[j];
        const dx = a.x - b.x;
        const dy = a.y - b.y;
        const d2 = Math.max(dx * dx + dy * dy, 100);
        const f = REPULSION / d2;
        const d = Math.sqrt(d2);
        a.vx += (dx / d) * f;
        a.vy += (dy / d) * f;
        b.vx -= (dx / d) * f;
        b.vy -= (dy / d) * f;
      }
    }
    for (const e of edges) {
      const a = nodes.get(e.from);
      const b = nodes.get(e.to);
      if (!a || !b || a === b) continue;
      const dx = b.x - a.x;
      const dy = b.y - a.y;
      const d = Math.max(Math.sqrt(dx * dx + dy * dy), 1);
      const f = SPRING * (d - SPRING_LENGTH);
      a.vx += (dx / d) * f;
      a.vy += (dy / d) * f;
      b.vx -= (dx / d) * f;
      b.vy -= (dy / d) * f;
    }
    for (const n of list) {
      n.vx += (width / 2 - n.x) * CENTERING;
      n.vy += (height / 2 - n.y) * CENTERING;
      n.vx *= DAMPING;
      n.vy *= DAMPING;
      n.x += n.vx;
      n.y += n.vy;
      n.x = Math.min(Math.max(n.x, 30), width - 30);
      n.y = Math.min(Math.max(n.y, 24), height - 24);
    }
  }
}
