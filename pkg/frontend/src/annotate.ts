import { ApiClient } from './api';
import { ControlInput } from './input';
import { FramePlayer } from './player';
import { AnnotationSession } from './session';
import type { Dimension, VideoInfo } from './types';

/**
 * Annotation screen: the video plays while the annotator holds one dimension
 * on the vertical control; every animation tick logs a sample. Saving posts
 * the track; failures keep the buffer and retry on the next save click.
 */
export function mountAnnotateView(root: HTMLElement, api: ApiClient,
                                  video: VideoInfo, dimension: Dimension,
                                  onDone: () => void): () => void {
  root.innerHTML = `
    <div class="annotate">
      <h2>${video.id} — ${dimension}</h2>
      <div class="stage">
        <canvas class="frame" width="384" height="384"></canvas>
        <div class="control">
          <input class="slider" type="range" min="-1000" max="1000" value="0"
                 orient="vertical">
          <div class="value">0</div>
        </div>
      </div>
      <div class="transport">
        <button class="play">play</button>
        <button class="pause" disabled>pause</button>
        <input class="scrub" type="range" min="0" max="1000" value="0">
        <span class="clock">0.00s</span>
        <button class="save">save annotation</button>
        <button class="back">back</button>
        <span class="status"></span>
      </div>
      <p class="hint">drive with the slider, arrow keys, or a gamepad's
      vertical stick; samples are recorded only while playing</p>
    </div>`;

  const canvas = root.querySelector<HTMLCanvasElement>('.frame')!;
  const slider = root.querySelector<HTMLInputElement>('.slider')!;
  const valueLabel = root.querySelector<HTMLElement>('.value')!;
  const playBtn = root.querySelector<HTMLButtonElement>('.play')!;
  const pauseBtn = root.querySelector<HTMLButtonElement>('.pause')!;
  const scrub = root.querySelector<HTMLInputElement>('.scrub')!;
  const clock = root.querySelector<HTMLElement>('.clock')!;
  const status = root.querySelector<HTMLElement>('.status')!;

  const session = new AnnotationSession(video.id, dimension);
  const player = new FramePlayer(api, canvas, video.id, video.frames, video.fps);
  const input = new ControlInput(session);
  input.attach(window);

  slider.addEventListener('input', () => session.setControl(Number(slider.value)));
  playBtn.addEventListener('click', () => {
    player.play();
    playBtn.disabled = true;
    pauseBtn.disabled = false;
  });
  pauseBtn.addEventListener('click', () => {
    player.pause();
    playBtn.disabled = false;
    pauseBtn.disabled = true;
  });
  scrub.addEventListener('input', () => {
    const t = (Number(scrub.value) / 1000) * player.duration;
    player.seek(t);
    session.seek(t);
  });

  let raf = 0;
  const loop = (now: number) => {
    input.poll();
    player.tick(now);
    slider.value = String(session.controlValue);
    valueLabel.textContent = String(Math.round(session.controlValue));
    clock.textContent = `${player.time.toFixed(2)}s / ${player.duration.toFixed(2)}s`;
    if (!scrub.matches(':active')) {
      scrub.value = String((player.time / player.duration) * 1000);
    }
    raf = requestAnimationFrame(loop);
  };
  player.onTick = (t, playing) => session.tick(t, playing);
  player.draw();
  raf = requestAnimationFrame(loop);

  root.querySelector<HTMLButtonElement>('.save')!.addEventListener('click', async () => {
    try {
      status.textContent = 'saving…';
      await api.postAnnotations(video.id, dimension, session.exportSamples());
      status.textContent = `saved ${session.samples.length} samples`;
    } catch (err) {
      // keep the local buffer; the next save retries the full track
      status.textContent = `save failed (${err}); samples kept, try again`;
    }
  });
  root.querySelector<HTMLButtonElement>('.back')!.addEventListener('click', onDone);

  return () => {
    cancelAnimationFrame(raf);
    input.detach(window);
  };
}
