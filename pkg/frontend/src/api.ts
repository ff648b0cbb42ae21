import type { Dimension, FrameValues, TrackSample, VideoInfo } from './types';

/** Thin client for the toolkit's serve endpoints. */
export class ApiClient {
  constructor(private base: string = '') {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(`${this.base}${path}`);
    if (!resp.ok) throw new Error(`GET ${path}: ${resp.status}`);
    return resp.json() as Promise<T>;
  }

  listVideos(): Promise<VideoInfo[]> {
    return this.getJson('/videos');
  }

  frameUrl(video: string, k: number): string {
    return `${this.base}/videos/${video}/frames/${k}`;
  }

  groundtruth(video: string): Promise<FrameValues[]> {
    return this.getJson(`/videos/${video}/groundtruth`);
  }

  predictions(video: string): Promise<FrameValues[]> {
    return this.getJson(`/videos/${video}/predictions`);
  }

  async postAnnotations(video: string, dim: Dimension, samples: TrackSample[]):
      Promise<void> {
    const resp = await fetch(`${this.base}/videos/${video}/annotations/${dim}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(samples),
    });
    if (resp.status !== 204) throw new Error(`POST annotations: ${resp.status}`);
  }
}

/** Render a sample log in the annotator track text format: "t value" lines. */
export function formatTrack(samples: TrackSample[]): string {
  return samples.map((s) => `${s.t.toFixed(4)} ${Math.round(s.v)}`).join('\n') + '\n';
}
