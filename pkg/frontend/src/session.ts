import { TrackSample, VALUE_MAX, VALUE_MIN, Dimension } from './types';

/**
 * One continuous annotation pass over a video: the annotator watches playback
 * and steers a control; every animation tick while playing appends a
 * (playback time, value) sample.
 *
 * Timestamps stay strictly monotone: seeking backwards discards samples past
 * the seek point, pausing emits nothing, and values are clamped to the raw
 * annotation range.
 */
export class AnnotationSession {
  readonly samples: TrackSample[] = [];
  private value = 0;

  constructor(readonly video: string, readonly dimension: Dimension) {}

  get controlValue(): number {
    return this.value;
  }

  setControl(value: number): void {
    this.value = Math.max(VALUE_MIN, Math.min(VALUE_MAX, value));
  }

  moveControl(delta: number): void {
    this.setControl(this.value + delta);
  }

  /** Record the control at a playback timestamp; ticks while paused or not
   * strictly after the last sample are ignored. */
  tick(playbackTime: number, playing: boolean): void {
    if (!playing) return;
    const last = this.samples[this.samples.length - 1];
    if (last && playbackTime <= last.t) return;
    this.samples.push({ t: playbackTime, v: this.value });
  }

  /** Seeking backwards invalidates everything annotated past the target. */
  seek(playbackTime: number): void {
    while (this.samples.length &&
           this.samples[this.samples.length - 1].t > playbackTime) {
      this.samples.pop();
    }
  }

  isMonotone(): boolean {
    for (let i = 1; i < this.samples.length; i++) {
      if (this.samples[i].t <= this.samples[i - 1].t) return false;
    }
    return true;
  }

  exportSamples(): TrackSample[] {
    return this.samples.map((s) => ({ t: s.t, v: Math.round(s.v) }));
  }
}
