export interface Series {
  label: string;
  color: string;
  points: { x: number; y: number }[];
}

/** Minimal canvas line chart for overlaying annotation traces. */
export function drawChart(canvas: HTMLCanvasElement, series: Series[],
                          xMin: number, xMax: number,
                          yMin = -1000, yMax = 1000): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = '#181c22';
  ctx.fillRect(0, 0, width, height);

  const sx = (x: number) => ((x - xMin) / Math.max(1e-9, xMax - xMin)) * width;
  const sy = (y: number) => height - ((y - yMin) / (yMax - yMin)) * height;

  ctx.strokeStyle = '#3a4150';
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(0, sy(0));
  ctx.lineTo(width, sy(0));
  ctx.stroke();

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    let started = false;
    for (const p of s.points) {
      if (p.x < xMin || p.x > xMax) continue;
      if (!started) {
        ctx.moveTo(sx(p.x), sy(p.y));
        started = true;
      } else {
        ctx.lineTo(sx(p.x), sy(p.y));
      }
    }
    ctx.stroke();
  }

  let lx = 8;
  for (const s of series) {
    ctx.fillStyle = s.color;
    ctx.fillRect(lx, 8, 10, 10);
    ctx.fillStyle = '#cfd6e4';
    ctx.font = '12px sans-serif';
    ctx.fillText(s.label, lx + 14, 17);
    lx += 14 + ctx.measureText(s.label).width + 18;
  }
}
