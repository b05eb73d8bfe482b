import { describe, expect, it } from "vitest";

import type { DetectionDto } from "../src/api.js";
import { DOT_RADIUS, LABEL_COLORS, SELECTED_RADIUS, dotPlan } from "../src/render.js";
import { identity } from "../src/transform.js";

const det = (id: number, x: number, y: number, label: string): DetectionDto => ({
  id,
  x,
  y,
  score: 0.9,
  tm_label: label,
  label,
  probs: null,
  source: "tm",
});

const ALL = { junction: true, terminal: true, false: true };

describe("dotPlan", () => {
  const dets = [
    det(1, 10, 20, "junction"),
    det(2, 30, 40, "terminal"),
    det(3, 50, 60, "false"),
    det(4, 70, 80, "junction"),
  ];

  it("renders one dot per detection passing the filters", () => {
    expect(dotPlan(dets, ALL, null, identity())).toHaveLength(4);
    expect(dotPlan(dets, { ...ALL, junction: false }, null, identity())).toHaveLength(2);
    expect(dotPlan(dets, { junction: false, terminal: false, false: false }, null, identity())).toHaveLength(0);
    expect(dotPlan([], ALL, null, identity())).toHaveLength(0);
  });

  it("colors dots green/cyan/red by label", () => {
    const plan = dotPlan(dets, ALL, null, identity());
    expect(plan[0].color).toBe(LABEL_COLORS.junction);
    expect(plan[1].color).toBe(LABEL_COLORS.terminal);
    expect(plan[2].color).toBe(LABEL_COLORS.false);
  });

  it("marks the selected detection and enlarges its dot", () => {
    const plan = dotPlan(dets, ALL, 2, identity());
    const selected = plan.find((d) => d.id === 2)!;
    expect(selected.selected).toBe(true);
    expect(selected.radius).toBe(SELECTED_RADIUS);
    for (const other of plan.filter((d) => d.id !== 2)) {
      expect(other.selected).toBe(false);
      expect(other.radius).toBe(DOT_RADIUS);
    }
  });

  it("places dots at the zoomed pixel centre", () => {
    const plan = dotPlan([det(1, 10, 20, "junction")], ALL, null, { zoom: 4, panX: 3, panY: -5 });
    expect(plan[0].sx).toBe((10 + 0.5) * 4 + 3);
    expect(plan[0].sy).toBe((20 + 0.5) * 4 - 5);
  });
});
