export type Dimension = 'valence' | 'arousal';

export interface VideoInfo {
  id: string;
  frames: number;
  fps: number;
  annotated_dims: Dimension[];
}

export interface TrackSample {
  t: number; // playback seconds
  v: number; // raw value in [-1000, 1000]
}

export interface FrameValues {
  k: number;
  valence: number;
  arousal: number;
}

export const VALUE_MIN = -1000;
export const VALUE_MAX = 1000;
