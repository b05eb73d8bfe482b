/** UI state machine for the annotation review screen.
 *
 * Every label mutation is optimistic: the local copy changes first, the
 * service call follows, and a failure rolls the local copy back and surfaces
 * a toast (or the unreachable banner). The store never invents state the
 * service has not acknowledged; reconciliation always replaces the optimistic
 * guess with the server's version of the detection.
 */

import {
  ApiError,
  Unreachable,
  type Api,
  type DetectionDto,
  type DetectionSetDto,
  type ImageRecord,
  type Label,
} from "./api.js";
import { labelVisible, type Filters } from "./render.js";
import * as tr from "./transform.js";

/** How close (image pixels) a click must land to a dot to select it. */
export const CLICK_RADIUS = 10;

export interface AppState {
  images: ImageRecord[];
  currentId: string | null;
  set: DetectionSetDto | null;
  selectedId: number | null;
  /** Label applied by clicking empty space; null means clicks only select. */
  armed: Label | null;
  filters: Filters;
  view: tr.ViewTransform;
  /** A workflow request (propose/mine/status/export) is in flight. */
  busy: boolean;
  /** Shown while the service cannot be reached. */
  banner: string | null;
  /** Last mutation error, cleared by the next successful call. */
  toast: string | null;
  /** Local edits exist since the last propose/open. */
  dirty: boolean;
  /** Class counts from the most recent export. */
  exportCounts: Record<string, number> | null;
}

const KEY_LABELS: Record<string, Label> = {
  j: "junction",
  t: "terminal",
  f: "false",
};

export class Store {
  state: AppState;
  private listeners: Array<() => void> = [];
  private nextTempId = -1;

  constructor(private readonly api: Api) {
    this.state = {
      images: [],
      currentId: null,
      set: null,
      selectedId: null,
      armed: null,
      filters: { junction: true, terminal: true, false: true },
      view: tr.identity(),
      busy: false,
      banner: null,
      toast: null,
      dirty: false,
      exportCounts: null,
    };
  }

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  /** Apply a partial update, re-establish invariants, notify listeners. */
  private patch(part: Partial<AppState>): void {
    const s = { ...this.state, ...part };
    // the selected id must refer to a detection in the loaded set
    if (s.selectedId !== null) {
      const present = s.set?.detections.some((d) => d.id === s.selectedId) ?? false;
      if (!present) s.selectedId = null;
    }
    this.state = s;
    for (const fn of this.listeners) fn();
  }

  private fail(err: unknown): void {
    if (err instanceof Unreachable) {
      this.patch({ banner: err.message });
    } else if (err instanceof ApiError) {
      this.patch({ toast: `${err.error}: ${err.detail}` });
    } else {
      this.patch({ toast: String(err) });
    }
  }

  private ok(part: Partial<AppState> = {}): void {
    // any acknowledged call proves the service is reachable again
    this.patch({ ...part, banner: null, toast: null });
  }

  // -- image browser ------------------------------------------------------

  async refreshImages(): Promise<void> {
    try {
      const images = await this.api.listImages();
      this.ok({ images });
    } catch (err) {
      this.fail(err);
    }
  }

  async open(imageId: string): Promise<void> {
    try {
      const set = await this.api.getDetections(imageId);
      this.ok({
        currentId: imageId,
        set,
        selectedId: null,
        armed: null,
        view: tr.identity(),
        dirty: false,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  /** Re-fetch the current image's detections from the service. */
  async reload(): Promise<void> {
    const id = this.state.currentId;
    if (id === null) return;
    try {
      const set = await this.api.getDetections(id);
      this.ok({ set });
    } catch (err) {
      this.fail(err);
    }
  }

  // -- selection ----------------------------------------------------------

  select(detId: number | null): void {
    this.patch({ selectedId: detId });
  }

  private visibleDetections(): DetectionDto[] {
    const s = this.state;
    if (!s.set) return [];
    return s.set.detections.filter((d) => labelVisible(s.filters, d.label));
  }

  /** Step the selection through visible detections; wraps at both ends. */
  step(delta: 1 | -1): void {
    const vis = this.visibleDetections();
    if (vis.length === 0) return;
    const cur = vis.findIndex((d) => d.id === this.state.selectedId);
    const next = cur < 0 ? (delta === 1 ? 0 : vis.length - 1) : (cur + delta + vis.length) % vis.length;
    this.patch({ selectedId: vis[next].id });
  }

  toggleFilter(label: Label): void {
    const filters = { ...this.state.filters, [label]: !this.state.filters[label] };
    this.patch({ filters });
  }

  // -- view ---------------------------------------------------------------

  panBy(dx: number, dy: number): void {
    this.patch({ view: tr.pan(this.state.view, dx, dy) });
  }

  zoomStep(delta: 1 | -1, anchorX: number, anchorY: number): void {
    const view = tr.zoomAt(this.state.view, this.state.view.zoom + delta, anchorX, anchorY);
    this.patch({ view });
  }

  // -- editing ------------------------------------------------------------

  private replaceDet(detId: number, replacement: DetectionDto | null): void {
    const set = this.state.set;
    if (!set) return;
    const detections =
      replacement === null
        ? set.detections.filter((d) => d.id !== detId)
        : set.detections.map((d) => (d.id === detId ? replacement : d));
    this.patch({ set: { ...set, detections } });
  }

  async relabelSelected(label: Label): Promise<void> {
    const s = this.state;
    if (s.currentId === null || !s.set || s.selectedId === null) return;
    const before = s.set.detections.find((d) => d.id === s.selectedId);
    if (!before) return;
    this.replaceDet(before.id, { ...before, label, source: "human" });
    try {
      const confirmed = await this.api.relabel(s.currentId, before.id, label);
      this.replaceDet(before.id, confirmed);
      this.ok({ dirty: true });
    } catch (err) {
      this.replaceDet(before.id, before);
      this.fail(err);
    }
  }

  async addAt(x: number, y: number, label: Label): Promise<void> {
    const s = this.state;
    if (s.currentId === null || !s.set) return;
    if (x < 0 || y < 0 || x >= s.set.width || y >= s.set.height) return;
    const temp: DetectionDto = {
      id: this.nextTempId--,
      x,
      y,
      score: null,
      tm_label: label,
      label,
      probs: null,
      source: "human",
    };
    this.patch({
      set: { ...s.set, detections: [...s.set.detections, temp] },
      selectedId: temp.id,
    });
    try {
      const confirmed = await this.api.addDetection(s.currentId, x, y, label);
      this.replaceDet(temp.id, confirmed);
      this.ok({ selectedId: confirmed.id, dirty: true });
    } catch (err) {
      this.replaceDet(temp.id, null);
      this.fail(err);
    }
  }

  /** Machine detections are removed outright; human ones flip to false. */
  async deleteSelected(): Promise<void> {
    const s = this.state;
    if (s.currentId === null || !s.set || s.selectedId === null) return;
    const before = s.set.detections.find((d) => d.id === s.selectedId);
    if (!before) return;
    const snapshot = s.set;
    if (before.source === "human") {
      this.replaceDet(before.id, { ...before, label: "false" });
    } else {
      this.replaceDet(before.id, null);
    }
    try {
      const result = await this.api.deleteDetection(s.currentId, before.id);
      if (!result.deleted) this.replaceDet(result.detection.id, result.detection);
      this.ok({ dirty: true });
    } catch (err) {
      this.patch({ set: snapshot, selectedId: before.id });
      this.fail(err);
    }
  }

  /** Click at screen coordinates: select a nearby dot, or add when armed. */
  clickAt(sx: number, sy: number): Promise<void> | void {
    const s = this.state;
    if (!s.set) return;
    const p = tr.screenToImage(s.view, sx, sy);
    let best: DetectionDto | null = null;
    let bestD2 = CLICK_RADIUS * CLICK_RADIUS;
    for (const d of this.visibleDetections()) {
      const dx = d.x - p.x;
      const dy = d.y - p.y;
      const d2 = dx * dx + dy * dy;
      if (d2 <= bestD2) {
        best = d;
        bestD2 = d2;
      }
    }
    if (best) {
      this.select(best.id);
      return;
    }
    if (s.armed !== null) return this.addAt(p.x, p.y, s.armed);
    this.select(null);
  }

  /** Keyboard dispatch; returns the mutation promise when one started. */
  keydown(key: string): Promise<void> | void {
    const label = KEY_LABELS[key.toLowerCase()];
    if (label !== undefined) {
      if (this.state.selectedId !== null) return this.relabelSelected(label);
      this.patch({ armed: this.state.armed === label ? null : label });
      return;
    }
    switch (key) {
      case "ArrowRight":
      case "ArrowDown":
        this.step(1);
        return;
      case "ArrowLeft":
      case "ArrowUp":
        this.step(-1);
        return;
      case "Delete":
      case "Backspace":
        return this.deleteSelected();
      case "Escape":
        this.patch({ selectedId: null, armed: null });
        return;
    }
  }

  // -- workflow controls (one request at a time) --------------------------

  private async workflow<T>(call: () => Promise<T>, apply: (result: T) => void): Promise<void> {
    if (this.state.busy) return;
    this.patch({ busy: true });
    try {
      apply(await call());
      this.ok();
    } catch (err) {
      this.fail(err);
    } finally {
      this.patch({ busy: false });
    }
  }

  propose(threshold: number, useModel: boolean): Promise<void> {
    const id = this.state.currentId;
    if (id === null) return Promise.resolve();
    return this.workflow(
      () => this.api.propose(id, threshold, useModel),
      (set) => this.patch({ set, dirty: false }),
    );
  }

  mine(tLow: number, count: number, seed = 0): Promise<void> {
    const id = this.state.currentId;
    if (id === null) return Promise.resolve();
    return this.workflow(
      () => this.api.mine(id, tLow, count, seed),
      (mined) => {
        const set = this.state.set;
        if (set) this.patch({ set: { ...set, detections: [...set.detections, ...mined] } });
      },
    );
  }

  markDone(): Promise<void> {
    const id = this.state.currentId;
    if (id === null) return Promise.resolve();
    return this.workflow(
      () => this.api.setStatus(id, "done"),
      (rec) => {
        const images = this.state.images.map((r) => (r.id === rec.id ? rec : r));
        this.patch({ images });
      },
    );
  }

  exportTrainingSet(outDir: string): Promise<void> {
    return this.workflow(
      () => this.api.exportTrainingSet(outDir),
      (manifest) => this.patch({ exportCounts: manifest.counts }),
    );
  }
}
