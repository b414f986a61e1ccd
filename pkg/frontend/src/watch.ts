/** Job watcher: polls status and trace, feeds the live loss curve.
 *
 * One in-flight poll per watched job; polling stops on a terminal status.
 * The clock and interval scheduling are injected for testability.
 */

import type { ApiClient, JobDoc, JobStatus, TraceRecord } from "./api.js";

export interface WatchEvents {
  onTrace?: (records: TraceRecord[]) => void;
  onStatus?: (status: JobStatus, job: JobDoc) => void;
  onDone?: (job: JobDoc) => void;
  onFailed?: (job: JobDoc) => void;
}

export const POLL_INTERVAL_MS = 250;

export class JobWatcher {
  private records: TraceRecord[] = [];
  private lastStatus: JobStatus | null = null;
  private polling = false;
  private stopped = false;

  constructor(
    private api: ApiClient,
    private jobId: string,
    private events: WatchEvents = {},
  ) {}

  get trace(): TraceRecord[] {
    return this.records;
  }

  get status(): JobStatus | null {
    return this.lastStatus;
  }

  /** Chart points as [step, relative loss]; s=0 is always at 1.0. */
  get curve(): Array<[number, number]> {
    return this.records.map((r) => [r.step, r.relative_loss]);
  }

  stop(): void {
    this.stopped = true;
  }

  /** One poll cycle; returns true while the job is still live. */
  async poll(): Promise<boolean> {
    if (this.polling || this.stopped) return !this.stopped;
    this.polling = true;
    try {
      const job = await this.api.jobStatus(this.jobId);
      const trace = await this.api.jobTrace(this.jobId);
      if (trace.length !== this.records.length) {
        this.records = trace;
        this.events.onTrace?.(this.records);
      }
      if (job.status !== this.lastStatus) {
        this.lastStatus = job.status;
        this.events.onStatus?.(job.status, job);
        if (job.status === "done") this.events.onDone?.(job);
        if (job.status === "failed") this.events.onFailed?.(job);
      }
      if (job.status === "done" || job.status === "failed") {
        this.stopped = true;
      }
    } finally {
      this.polling = false;
    }
    return !this.stopped;
  }

  /** Poll on an interval until terminal; resolves with the final job doc. */
  async run(intervalMs: number = POLL_INTERVAL_MS): Promise<JobDoc> {
    for (;;) {
      await this.poll();
      if (this.stopped) return this.api.jobStatus(this.jobId);
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }
}
