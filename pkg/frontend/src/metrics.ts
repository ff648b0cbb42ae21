/** Concordance correlation coefficient with population moments, matching the
 * toolkit's reporting metric so the review badge agrees with exported
 * numbers. Returns 0 when the denominator degenerates. */
export function ccc(pred: number[], truth: number[]): number {
  if (pred.length !== truth.length || pred.length < 2) {
    throw new Error(`ccc: need two equal-length series, got ${pred.length}/${truth.length}`);
  }
  const n = pred.length;
  let mp = 0;
  let mt = 0;
  for (let i = 0; i < n; i++) {
    mp += pred[i];
    mt += truth[i];
  }
  mp /= n;
  mt /= n;
  let vp = 0;
  let vt = 0;
  let cov = 0;
  for (let i = 0; i < n; i++) {
    const dp = pred[i] - mp;
    const dt = truth[i] - mt;
    vp += dp * dp;
    vt += dt * dt;
    cov += dp * dt;
  }
  vp /= n;
  vt /= n;
  cov /= n;
  const denom = vp + vt + (mp - mt) * (mp - mt);
  return denom === 0 ? 0 : (2 * cov) / denom;
}

export function mse(pred: number[], truth: number[]): number {
  if (pred.length !== truth.length || pred.length === 0) {
    throw new Error('mse: need two equal-length series');
  }
  let acc = 0;
  for (let i = 0; i < pred.length; i++) {
    const d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc / pred.length;
}
