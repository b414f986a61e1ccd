/** Typed client for the motionedit job service.
 *
 * The fetch function is injected so tests can mock the whole API without a
 * browser or a server.
 */

import type { SkeletonDef } from "./fk.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface MotionDoc {
  skeleton: SkeletonDef;
  frame_rate: number;
  frames: number[][][]; // radians
}

export type JobStatus = "queued" | "running" | "done" | "failed";

export interface JobDoc {
  id: string;
  kind: string;
  status: JobStatus;
  result: Record<string, unknown> | null;
  error: string | null;
}

export interface TraceRecord {
  step: number;
  loss: number;
  relative_loss: number;
  grad_inf_norm: number | null;
  wall_time: number;
  retained_steps: number;
  arm_divergence: number;
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async check(resp: Response): Promise<Response> {
    if (!resp.ok) {
      const body = await resp.text();
      throw new Error(`HTTP ${resp.status}: ${body}`);
    }
    return resp;
  }

  async skeleton(): Promise<SkeletonDef> {
    const resp = await this.check(await this.fetchFn(`${this.baseUrl}/api/skeleton`));
    return (await resp.json()) as SkeletonDef;
  }

  async motion(motionId: string): Promise<MotionDoc> {
    const resp = await this.check(
      await this.fetchFn(`${this.baseUrl}/api/motions/${motionId}`),
    );
    return (await resp.json()) as MotionDoc;
  }

  async uploadMotion(frames: number[][][], frameRate = 30.0): Promise<string> {
    const resp = await this.check(
      await this.fetchFn(`${this.baseUrl}/api/motions`, {
        method: "PUT",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ frames, frame_rate: frameRate }),
      }),
    );
    return ((await resp.json()) as { motion_id: string }).motion_id;
  }

  async submitJob(kind: string, payload: Record<string, unknown>): Promise<string> {
    const resp = await this.check(
      await this.fetchFn(`${this.baseUrl}/api/jobs`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ kind, payload }),
      }),
    );
    return ((await resp.json()) as { job_id: string }).job_id;
  }

  async jobStatus(jobId: string): Promise<JobDoc> {
    const resp = await this.check(
      await this.fetchFn(`${this.baseUrl}/api/jobs/${jobId}`),
    );
    return (await resp.json()) as JobDoc;
  }

  async jobTrace(jobId: string): Promise<TraceRecord[]> {
    const resp = await this.check(
      await this.fetchFn(`${this.baseUrl}/api/jobs/${jobId}/trace`),
    );
    const text = await resp.text();
    return text
      .split("\n")
      .filter((line) => line.trim().length > 0)
      .map((line) => JSON.parse(line) as TraceRecord);
  }
}
