import { ApiClient } from './api';

/**
 * Frame-sequence player: paints PNG frames onto a canvas at the video's
 * frame rate, preloading a window ahead. Playback time is derived from
 * performance.now() so annotation samples line up with what is on screen.
 */
export class FramePlayer {
  playing = false;
  private timeSec = 0;
  private lastTick: number | null = null;
  private cache = new Map<number, HTMLImageElement>();
  onTick: ((t: number, playing: boolean) => void) | null = null;

  constructor(
    private api: ApiClient,
    private canvas: HTMLCanvasElement,
    readonly video: string,
    readonly frames: number,
    readonly fps: number,
  ) {}

  get time(): number {
    return this.timeSec;
  }

  get duration(): number {
    return this.frames / this.fps;
  }

  get currentFrame(): number {
    const k = Math.floor(this.timeSec * this.fps) + 1;
    return Math.min(this.frames, Math.max(1, k));
  }

  play(): void {
    this.playing = true;
    this.lastTick = null;
  }

  pause(): void {
    this.playing = false;
    this.lastTick = null;
  }

  seek(t: number): void {
    this.timeSec = Math.max(0, Math.min(this.duration, t));
    this.draw();
  }

  /** Advance playback from a requestAnimationFrame timestamp (ms). */
  tick(nowMs: number): void {
    if (this.playing) {
      if (this.lastTick !== null) {
        this.timeSec += (nowMs - this.lastTick) / 1000;
        if (this.timeSec >= this.duration) {
          this.timeSec = this.duration;
          this.playing = false;
        }
      }
      this.lastTick = nowMs;
      this.draw();
    }
    if (this.onTick) this.onTick(this.timeSec, this.playing);
  }

  private image(k: number): HTMLImageElement {
    let img = this.cache.get(k);
    if (!img) {
      img = new Image();
      img.src = this.api.frameUrl(this.video, k);
      this.cache.set(k, img);
      if (this.cache.size > 120) {
        const oldest = this.cache.keys().next().value;
        if (oldest !== undefined) this.cache.delete(oldest);
      }
    }
    return img;
  }

  draw(): void {
    const ctx = this.canvas.getContext('2d');
    if (!ctx) return;
    const k = this.currentFrame;
    const img = this.image(k);
    // warm the next second of frames
    for (let ahead = 1; ahead <= this.fps && k + ahead <= this.frames; ahead++) {
      this.image(k + ahead);
    }
    if (img.complete) {
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(img, 0, 0, this.canvas.width, this.canvas.height);
    } else {
      img.onload = () => {
        if (this.currentFrame === k) this.draw();
      };
    }
  }
}
