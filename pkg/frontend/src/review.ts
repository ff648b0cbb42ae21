import { ApiClient } from './api';
import { drawChart } from './chart';
import { ccc } from './metrics';
import type { Dimension, FrameValues, VideoInfo } from './types';

/**
 * Review screen: ground truth and prediction traces overlaid per dimension
 * over a selectable frame window, with the window's CCC shown as a badge.
 */
export function mountReviewView(root: HTMLElement, api: ApiClient,
                                video: VideoInfo, onDone: () => void): void {
  root.innerHTML = `
    <div class="review">
      <h2>${video.id} — prediction review</h2>
      <div class="window-pick">
        frames <input class="lo" type="number" value="1" min="1">
        to <input class="hi" type="number" value="${video.frames}"
                  max="${video.frames}">
        <button class="back">back</button>
      </div>
      <div class="panes"></div>
    </div>`;
  const panes = root.querySelector<HTMLElement>('.panes')!;
  const lo = root.querySelector<HTMLInputElement>('.lo')!;
  const hi = root.querySelector<HTMLInputElement>('.hi')!;
  root.querySelector<HTMLButtonElement>('.back')!.addEventListener('click', onDone);

  let truth: FrameValues[] = [];
  let preds: FrameValues[] = [];

  function render(): void {
    panes.innerHTML = '';
    const a = Math.max(1, Number(lo.value) || 1);
    const b = Math.min(video.frames, Number(hi.value) || video.frames);
    for (const dim of ['valence', 'arousal'] as Dimension[]) {
      const pane = document.createElement('div');
      pane.className = 'pane';
      const truthWin = truth.filter((r) => r.k >= a && r.k <= b);
      const predWin = preds.filter((r) => r.k >= a && r.k <= b);
      const byK = new Map(predWin.map((r) => [r.k, r]));
      const paired = truthWin.filter((r) => byK.has(r.k));
      let badge = 'n/a';
      if (paired.length >= 2) {
        const value = ccc(
          paired.map((r) => Number(byK.get(r.k)![dim])),
          paired.map((r) => Number(r[dim])),
        );
        badge = value.toFixed(3);
      }
      pane.innerHTML = `
        <h3>${dim} <span class="badge">CCC ${badge}</span></h3>
        <canvas width="760" height="180"></canvas>`;
      panes.appendChild(pane);
      const scale = dim === 'valence' ? 1 : 1;
      drawChart(pane.querySelector('canvas')!, [
        {
          label: 'ground truth', color: '#58a6ff',
          points: truthWin.map((r) => ({ x: r.k, y: Number(r[dim]) * scale })),
        },
        {
          label: 'prediction', color: '#f78166',
          points: predWin.map((r) => ({ x: r.k, y: Number(r[dim]) * scale })),
        },
      ], a, b);
    }
  }

  lo.addEventListener('change', render);
  hi.addEventListener('change', render);

  Promise.all([api.groundtruth(video.id), api.predictions(video.id).catch(() => [])])
    .then(([gt, pr]) => {
      truth = gt;
      // predictions arrive scaled [-1, 1]; plot in raw units like the truth
      preds = pr.map((r) => ({ k: r.k, valence: r.valence * 1000,
                               arousal: r.arousal * 1000 }));
      render();
    })
    .catch((err) => {
      panes.textContent = `failed to load traces: ${err}`;
    });
}
