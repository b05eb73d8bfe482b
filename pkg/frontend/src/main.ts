/** Browser entry point: wires the store to the DOM and a canvas overlay.
 *
 * All logic lives in state.ts/render.ts/transform.ts; this file only moves
 * pixels and events. It is not exercised by the test suite.
 */

import { Client, type Label, type Status } from "./api.js";
import { dotPlan, LABEL_COLORS } from "./render.js";
import { Store } from "./state.js";

const SERVICE_BASE =
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8000";

const api = new Client(SERVICE_BASE);
const store = new Store(api);

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element: ${id}`);
  return el as T;
};

const imageList = $("image-list");
const banner = $("banner");
const toast = $("toast");
const armedBadge = $("armed");
const exportSummary = $("export-summary");
const canvas = $("canvas") as unknown as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const viewport = $("viewport");

let png: HTMLImageElement | null = null;
let pngFor: string | null = null;

const STATUS_CLASS: Record<Status, string> = {
  unreviewed: "badge-unreviewed",
  in_review: "badge-in-review",
  done: "badge-done",
};

function renderImageList(): void {
  const s = store.state;
  imageList.replaceChildren();
  if (s.images.length === 0) {
    const empty = document.createElement("li");
    empty.className = "empty";
    empty.textContent = "no images in this project";
    imageList.append(empty);
    return;
  }
  for (const rec of s.images) {
    const li = document.createElement("li");
    li.className = rec.id === s.currentId ? "current" : "";
    const name = document.createElement("span");
    name.textContent = rec.id;
    const badge = document.createElement("span");
    badge.className = `badge ${STATUS_CLASS[rec.status]}`;
    badge.textContent = rec.status;
    li.append(name, badge);
    li.addEventListener("click", () => {
      void store.open(rec.id).then(loadPng);
    });
    imageList.append(li);
  }
}

function loadPng(): void {
  const id = store.state.currentId;
  if (id === null || id === pngFor) return;
  const img = new Image();
  img.onload = () => {
    png = img;
    pngFor = id;
    requestDraw();
  };
  img.src = api.imageUrl(id);
}

let drawQueued = false;
function requestDraw(): void {
  if (drawQueued) return;
  drawQueued = true;
  requestAnimationFrame(() => {
    drawQueued = false;
    draw();
  });
}

function draw(): void {
  const s = store.state;
  canvas.width = viewport.clientWidth;
  canvas.height = viewport.clientHeight;
  ctx.fillStyle = "#111418";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (!s.set) return;
  if (png && pngFor === s.currentId) {
    ctx.imageSmoothingEnabled = false;
    const { zoom, panX, panY } = s.view;
    ctx.drawImage(png, panX, panY, png.width * zoom, png.height * zoom);
  }
  for (const dot of dotPlan(s.set.detections, s.filters, s.selectedId, s.view)) {
    ctx.beginPath();
    ctx.arc(dot.sx, dot.sy, dot.radius, 0, Math.PI * 2);
    ctx.strokeStyle = dot.color;
    ctx.lineWidth = dot.selected ? 3 : 2;
    ctx.stroke();
    if (dot.selected) {
      ctx.beginPath();
      ctx.arc(dot.sx, dot.sy, dot.radius + 4, 0, Math.PI * 2);
      ctx.strokeStyle = "#ffffff";
      ctx.lineWidth = 1;
      ctx.stroke();
    }
  }
}

function renderChrome(): void {
  const s = store.state;
  banner.hidden = s.banner === null;
  banner.textContent = s.banner ?? "";
  toast.hidden = s.toast === null;
  toast.textContent = s.toast ?? "";
  if (s.armed) {
    armedBadge.hidden = false;
    armedBadge.textContent = `adding: ${s.armed}`;
    armedBadge.style.color = LABEL_COLORS[s.armed];
  } else {
    armedBadge.hidden = true;
  }
  for (const id of ["propose", "mine", "mark-done", "export"]) {
    ($(id) as HTMLButtonElement).disabled = s.busy || s.currentId === null;
  }
  if (s.exportCounts) {
    const parts = Object.entries(s.exportCounts).map(([k, v]) => `${k}: ${v}`);
    exportSummary.textContent = `exported ${parts.join(", ")}`;
  }
  ($("zoom-level") as HTMLElement).textContent = `${s.view.zoom}x`;
}

store.onChange(() => {
  renderImageList();
  renderChrome();
  requestDraw();
});

// -- canvas events --------------------------------------------------------

let dragging = false;
let dragMoved = false;
let lastX = 0;
let lastY = 0;

canvas.addEventListener("mousedown", (ev) => {
  dragging = true;
  dragMoved = false;
  lastX = ev.offsetX;
  lastY = ev.offsetY;
});

canvas.addEventListener("mousemove", (ev) => {
  if (!dragging) return;
  const dx = ev.offsetX - lastX;
  const dy = ev.offsetY - lastY;
  if (Math.abs(dx) + Math.abs(dy) > 0) {
    dragMoved = true;
    store.panBy(dx, dy);
    lastX = ev.offsetX;
    lastY = ev.offsetY;
  }
});

window.addEventListener("mouseup", (ev) => {
  if (!dragging) return;
  dragging = false;
  if (!dragMoved && ev.target === canvas) {
    void store.clickAt(lastX, lastY);
  }
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  store.zoomStep(ev.deltaY < 0 ? 1 : -1, ev.offsetX, ev.offsetY);
});

window.addEventListener("keydown", (ev) => {
  if (ev.target instanceof HTMLInputElement) return;
  const handled = store.keydown(ev.key);
  if (handled !== undefined || ev.key.startsWith("Arrow")) ev.preventDefault();
});

// -- workflow buttons -----------------------------------------------------

$("propose").addEventListener("click", () => {
  const threshold = Number(($("threshold") as HTMLInputElement).value);
  const useModel = ($("use-model") as HTMLInputElement).checked;
  void store.propose(threshold, useModel);
});

$("mine").addEventListener("click", () => {
  const tLow = Number(($("t-low") as HTMLInputElement).value);
  const count = Number(($("mine-count") as HTMLInputElement).value);
  void store.mine(tLow, count);
});

$("mark-done").addEventListener("click", () => {
  void store.markDone();
});

$("export").addEventListener("click", () => {
  const outDir = ($("export-dir") as HTMLInputElement).value;
  void store.exportTrainingSet(outDir);
});

for (const label of ["junction", "terminal", "false"] as Label[]) {
  $(`filter-${label}`).addEventListener("change", () => store.toggleFilter(label));
}

window.addEventListener("resize", requestDraw);

void store.refreshImages();
