/** Pure view geometry: which dots go where, in what color.
 *
 * Kept free of canvas/DOM so the overlay contract (one dot per detection
 * passing the label filters, colored by label) is testable headlessly.
 */

import type { DetectionDto, Label } from "./api.js";
import { imageToScreenCenter, type ViewTransform } from "./transform.js";

export const LABEL_COLORS: Record<Label, string> = {
  junction: "#21c45d", // green
  terminal: "#22d3ee", // cyan
  false: "#ef4444", // red
};

export const DOT_RADIUS = 5;
export const SELECTED_RADIUS = 8;

export interface Filters {
  junction: boolean;
  terminal: boolean;
  false: boolean;
}

export interface Dot {
  id: number;
  sx: number;
  sy: number;
  color: string;
  radius: number;
  selected: boolean;
}

export function labelVisible(filters: Filters, label: string): boolean {
  const flag = (filters as unknown as Record<string, boolean>)[label];
  return flag === undefined ? true : flag;
}

/** One dot per detection passing the filters, at its screen-centre position. */
export function dotPlan(
  detections: readonly DetectionDto[],
  filters: Filters,
  selectedId: number | null,
  view: ViewTransform,
): Dot[] {
  const dots: Dot[] = [];
  for (const d of detections) {
    if (!labelVisible(filters, d.label)) continue;
    const c = imageToScreenCenter(view, d.x, d.y);
    const selected = d.id === selectedId;
    dots.push({
      id: d.id,
      sx: c.x,
      sy: c.y,
      color: LABEL_COLORS[d.label as Label] ?? "#ffffff",
      radius: selected ? SELECTED_RADIUS : DOT_RADIUS,
      selected,
    });
  }
  return dots;
}
