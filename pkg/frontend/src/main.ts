import { ApiClient } from './api';
import { mountAnnotateView } from './annotate';
import { mountReviewView } from './review';
import type { Dimension, VideoInfo } from './types';

const api = new ApiClient('');
const app = document.getElementById('app')!;
let teardown: (() => void) | null = null;

function swap(mount: (root: HTMLElement) => (() => void) | void): void {
  if (teardown) teardown();
  teardown = mount(app) || null;
}

function showList(): void {
  swap((root) => {
    root.innerHTML = '<h1>valence/arousal annotator</h1><p class="status">loading…</p>';
    api.listVideos().then((videos) => {
      root.innerHTML = '<h1>valence/arousal annotator</h1>';
      const pending = videos.filter((v) => v.annotated_dims.length < 2);
      const done = videos.filter((v) => v.annotated_dims.length === 2);
      root.appendChild(sectionFor('to annotate', pending));
      root.appendChild(sectionFor('annotated', done));
    }).catch((err) => {
      root.innerHTML = `<h1>valence/arousal annotator</h1>
        <p class="status">cannot reach the corpus server: ${err}</p>`;
    });
  });
}

function sectionFor(title: string, rows: VideoInfo[]): HTMLElement {
  const section = document.createElement('section');
  section.innerHTML = `<h2>${title} (${rows.length})</h2>`;
  const list = document.createElement('ul');
  list.className = 'videos';
  for (const video of rows) {
    const item = document.createElement('li');
    const dims = video.annotated_dims.join(', ') || 'none';
    item.innerHTML = `<span class="vid">${video.id}</span>
      <span class="meta">${video.frames} frames @ ${video.fps} fps —
      annotated: ${dims}</span>`;
    for (const dim of ['valence', 'arousal'] as Dimension[]) {
      const btn = document.createElement('button');
      btn.textContent = `annotate ${dim}`;
      btn.addEventListener('click', () =>
        swap((root) => mountAnnotateView(root, api, video, dim, showList)));
      item.appendChild(btn);
    }
    const review = document.createElement('button');
    review.textContent = 'review';
    review.addEventListener('click', () =>
      swap((root) => mountReviewView(root, api, video, showList)));
    item.appendChild(review);
    list.appendChild(item);
  }
  section.appendChild(list);
  return section;
}

showList();
