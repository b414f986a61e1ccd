/** Session state: what the editor shows and what the user has selected.
 *
 * The UI never mutates motion data locally; every edit round-trips through
 * the service, and this state only tracks ids, cursors, and the draft spec.
 */

import type { MotionDoc } from "./api.js";
import { SpecFormState, emptyForm } from "./editspec.js";

export interface PlaybackState {
  cursor: number;
  playing: boolean;
  speed: number;
}

export interface ComparisonSlots {
  original: string | null; // motion ids
  edited: string | null;
}

export class SessionState {
  activeMotionId: string | null = null;
  motionCache = new Map<string, MotionDoc>();
  playback: PlaybackState = { cursor: 0, playing: false, speed: 1.0 };
  selectedFrames = new Set<number>();
  selectedJoints = new Set<number>();
  draftSpec: SpecFormState = emptyForm();
  watchedJobs: string[] = [];
  slots: ComparisonSlots = { original: null, edited: null };

  frameCount(): number {
    const doc = this.activeMotionId
      ? this.motionCache.get(this.activeMotionId)
      : undefined;
    return doc ? doc.frames.length : 0;
  }

  setActiveMotion(motionId: string, doc: MotionDoc): void {
    this.activeMotionId = motionId;
    this.motionCache.set(motionId, doc);
    this.playback.cursor = 0;
    this.selectedFrames.clear();
    this.selectedJoints.clear();
    this.slots.original = motionId;
    this.slots.edited = null;
  }

  /** Clamp-setting the cursor keeps both comparison players frame-locked. */
  setCursor(frame: number): void {
    const count = this.frameCount();
    if (count === 0) {
      this.playback.cursor = 0;
      return;
    }
    this.playback.cursor = Math.min(Math.max(0, Math.round(frame)), count - 1);
  }

  advance(frames: number): void {
    this.setCursor(this.playback.cursor + frames * this.playback.speed);
  }

  toggleFrame(frame: number): void {
    if (frame < 0 || frame >= this.frameCount()) return;
    if (this.selectedFrames.has(frame)) this.selectedFrames.delete(frame);
    else this.selectedFrames.add(frame);
  }

  toggleJoint(joint: number): void {
    if (this.selectedJoints.has(joint)) this.selectedJoints.delete(joint);
    else this.selectedJoints.add(joint);
  }
}
