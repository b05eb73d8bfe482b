/** Integer-zoom view transform between image and screen coordinates.
 *
 * Image column ix covers screen span [ix * zoom + panX, (ix + 1) * zoom + panX),
 * same for rows. Zoom is a positive integer and pan is integral, so mapping a
 * pixel to its screen cell and back recovers the pixel exactly at every zoom
 * level. Fractional zooms are deliberately unsupported.
 */

export interface ViewTransform {
  readonly zoom: number; // integer >= 1
  readonly panX: number; // integer screen offset of image origin
  readonly panY: number;
}

export const MIN_ZOOM = 1;
export const MAX_ZOOM = 16;

export function identity(): ViewTransform {
  return { zoom: 1, panX: 0, panY: 0 };
}

function clampZoom(zoom: number): number {
  return Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, Math.round(zoom)));
}

function normalized(zoom: number, panX: number, panY: number): ViewTransform {
  return { zoom: clampZoom(zoom), panX: Math.round(panX), panY: Math.round(panY) };
}

/** Top-left screen corner of an image pixel's cell. */
export function imageToScreen(t: ViewTransform, ix: number, iy: number): { x: number; y: number } {
  return { x: ix * t.zoom + t.panX, y: iy * t.zoom + t.panY };
}

/** Screen position of an image pixel's centre; dots are drawn here. */
export function imageToScreenCenter(
  t: ViewTransform,
  ix: number,
  iy: number,
): { x: number; y: number } {
  return { x: (ix + 0.5) * t.zoom + t.panX, y: (iy + 0.5) * t.zoom + t.panY };
}

/** Image pixel whose cell contains a screen point. May lie outside the image. */
export function screenToImage(t: ViewTransform, sx: number, sy: number): { x: number; y: number } {
  return {
    x: Math.floor((sx - t.panX) / t.zoom),
    y: Math.floor((sy - t.panY) / t.zoom),
  };
}

export function pan(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return normalized(t.zoom, t.panX + dx, t.panY + dy);
}

/** Change zoom while keeping the image point under (anchorX, anchorY) put.
 *
 * Pan is re-rounded to stay integral, so the anchor may drift by at most half
 * a screen pixel; the round-trip guarantee above is preserved.
 */
export function zoomAt(
  t: ViewTransform,
  newZoom: number,
  anchorX: number,
  anchorY: number,
): ViewTransform {
  const z = clampZoom(newZoom);
  const ix = (anchorX - t.panX) / t.zoom;
  const iy = (anchorY - t.panY) / t.zoom;
  return normalized(z, anchorX - ix * z, anchorY - iy * z);
}
