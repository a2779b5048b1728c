/**
 * Zero-shot confusion over stored features: nearest-anchor predictions
 * counted per true class, ties toward the lowest class index. The most
 * frequently confused class becomes each class's differential target;
 * never-confused classes fall back to the nearest anchor.
 */

function dot(a: Float32Array, b: Float32Array): number {
  let s = 0;
  for (let i = 0; i < a.length; i++) s += a[i] * b[i];
  return s;
}

export function zeroShotConfusion(
  images: Float32Array[],
  labels: number[],
  anchors: Float32Array[],
): number[][] {
  const C = anchors.length;
  if (images.length === 0) throw new Error("cannot build a confusion matrix from zero images");
  if (images.length !== labels.length) throw new Error("images and labels differ in length");
  const K: number[][] = Array.from({ length: C }, () => Array(C).fill(0));
  for (let i = 0; i < images.length; i++) {
    let best = 0;
    let bestScore = -Infinity;
    for (let c = 0; c < C; c++) {
      const score = dot(images[i], anchors[c]);
      if (score > bestScore) {
        bestScore = score;
        best = c;
      }
    }
    const y = labels[i];
    if (y < 0 || y >= C) throw new Error(`label ${y} outside [0, ${C})`);
    K[y][best] += 1;
  }
  return K;
}

export function confusableMap(K: number[][], anchors: Float32Array[]): number[] {
  const C = K.length;
  const out: number[] = [];
  for (let c = 0; c < C; c++) {
    let best = -1;
    let bestCount = 0;
    for (let j = 0; j < C; j++) {
      if (j === c) continue;
      if (K[c][j] > bestCount) {
        bestCount = K[c][j];
        best = j;
      }
    }
    if (best < 0) {
      // never confused: take the nearest anchor instead
      let bestSim = -Infinity;
      for (let j = 0; j < C; j++) {
        if (j === c) continue;
        const sim = dot(anchors[c], anchors[j]);
        if (sim > bestSim) {
          bestSim = sim;
          best = j;
        }
      }
    }
    out.push(best);
  }
  return out;
}
