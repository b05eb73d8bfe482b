/** Typed HTTP client for the stripe-defect annotation service. */

export type Label = "junction" | "terminal" | "false";
export type Status = "unreviewed" | "in_review" | "done";

export interface ImageRecord {
  id: string;
  file: string;
  status: Status;
}

export interface DetectionDto {
  id: number;
  x: number;
  y: number;
  score: number | null;
  tm_label: string;
  label: string;
  probs: number[] | null;
  source: string;
}

export interface DetectionSetDto {
  image: string;
  width: number;
  height: number;
  threshold: number;
  detections: DetectionDto[];
}

export interface DeleteResult {
  deleted: boolean;
  detection: DetectionDto;
}

export interface PatchEntry {
  file: string;
  label: string;
  image: string;
  x: number;
  y: number;
}

export interface ExportManifest {
  patches: PatchEntry[];
  counts: Record<string, number>;
}

/** Server answered with an error payload ({error, detail}). */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly error: string,
    readonly detail: string,
  ) {
    super(`${error}: ${detail}`);
    this.name = "ApiError";
  }
}

/** The service could not be reached at all (refused, DNS, timeout). */
export class Unreachable extends Error {
  constructor(cause: string) {
    super(`annotation service unreachable: ${cause}`);
    this.name = "Unreachable";
  }
}

/** What the UI state layer needs from a client; lets tests substitute a fake. */
export interface Api {
  listImages(): Promise<ImageRecord[]>;
  imageUrl(imageId: string): string;
  getDetections(imageId: string): Promise<DetectionSetDto>;
  propose(imageId: string, threshold: number, useModel: boolean): Promise<DetectionSetDto>;
  relabel(imageId: string, detId: number, label: Label): Promise<DetectionDto>;
  addDetection(imageId: string, x: number, y: number, label: Label): Promise<DetectionDto>;
  deleteDetection(imageId: string, detId: number): Promise<DeleteResult>;
  setStatus(imageId: string, status: Status): Promise<ImageRecord>;
  mine(imageId: string, tLow: number, count: number, seed?: number): Promise<DetectionDto[]>;
  exportTrainingSet(outDir: string): Promise<ExportManifest>;
}

type FetchLike = typeof fetch;

export class Client implements Api {
  constructor(
    readonly base: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(this.base + path, {
        method,
        headers: body === undefined ? undefined : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new Unreachable(String(err));
    }
    if (!resp.ok) {
      let error = `http_${resp.status}`;
      let detail = resp.statusText;
      try {
        const data: unknown = await resp.json();
        if (data && typeof data === "object" && "error" in data) {
          const e = data as { error: unknown; detail?: unknown };
          error = String(e.error);
          detail = String(e.detail ?? "");
        }
      } catch {
        // non-JSON error body, keep the status text
      }
      throw new ApiError(resp.status, error, detail);
    }
    return resp.json() as Promise<T>;
  }

  listImages(): Promise<ImageRecord[]> {
    return this.request<{ images: ImageRecord[] }>("GET", "/images").then((r) => r.images);
  }

  /** URL of the grayscale PNG; handed straight to an <img> element. */
  imageUrl(imageId: string): string {
    return `${this.base}/images/${encodeURIComponent(imageId)}`;
  }

  getDetections(imageId: string): Promise<DetectionSetDto> {
    return this.request("GET", `/images/${encodeURIComponent(imageId)}/detections`);
  }

  propose(imageId: string, threshold: number, useModel: boolean): Promise<DetectionSetDto> {
    return this.request("POST", `/images/${encodeURIComponent(imageId)}/propose`, {
      threshold,
      use_model: useModel,
    });
  }

  relabel(imageId: string, detId: number, label: Label): Promise<DetectionDto> {
    return this.request("PATCH", `/images/${encodeURIComponent(imageId)}/detections/${detId}`, {
      label,
    });
  }

  addDetection(imageId: string, x: number, y: number, label: Label): Promise<DetectionDto> {
    return this.request("POST", `/images/${encodeURIComponent(imageId)}/detections`, {
      x,
      y,
      label,
    });
  }

  deleteDetection(imageId: string, detId: number): Promise<DeleteResult> {
    return this.request("DELETE", `/images/${encodeURIComponent(imageId)}/detections/${detId}`);
  }

  setStatus(imageId: string, status: Status): Promise<ImageRecord> {
    return this.request("POST", `/images/${encodeURIComponent(imageId)}/status`, { status });
  }

  mine(imageId: string, tLow: number, count: number, seed = 0): Promise<DetectionDto[]> {
    return this.request<{ mined: DetectionDto[] }>(
      "POST",
      `/images/${encodeURIComponent(imageId)}/mine`,
      { t_low: tLow, count, seed },
    ).then((r) => r.mined);
  }

  exportTrainingSet(outDir: string): Promise<ExportManifest> {
    return this.request("POST", "/export", { out_dir: outDir });
  }
}
