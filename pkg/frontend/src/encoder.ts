/** Dense patch-feature extraction.
 *
 * The PatchEncoder interface is where a pretrained vision backbone plugs
 * in; the bundled StandInEncoder is a deterministic offline substitute
 * that projects each patch onto a fixed cosine basis (lowest spatial
 * frequencies first), which preserves the locality structure retrieval
 * relies on. Images are center-cropped to a multiple of the patch size
 * so the grid shape law H_p = H_crop / P holds exactly.
 */

import { GrayImage } from "./pgm";

export interface PatchEncoder {
  readonly patchSize: number;
  readonly channels: number;
  /** patch pixels, row-major patchSize * patchSize -> feature vector */
  encodePatch(patch: Float64Array): Float32Array;
}

/** Zigzag traversal of an n x n frequency grid, lowest frequencies first. */
export function zigzag(n: number): Array<[number, number]> {
  const out: Array<[number, number]> = [];
  for (let s = 0; s < 2 * n - 1; s++) {
    const cells: Array<[number, number]> = [];
    for (let i = Math.max(0, s - n + 1); i <= Math.min(s, n - 1); i++) {
      cells.push([i, s - i]);
    }
    if (s % 2 === 0) cells.reverse();
    out.push(...cells);
  }
  return out;
}

export class StandInEncoder implements PatchEncoder {
  readonly patchSize: number;
  readonly channels: number;
  private basis: Float64Array[];

  constructor(patchSize = 14, channels = 16) {
    if (channels < 1 || channels > patchSize * patchSize) {
      throw new Error(`channels must lie in [1, ${patchSize * patchSize}]`);
    }
    this.patchSize = patchSize;
    this.channels = channels;
    this.basis = [];
    const p = patchSize;
    const scale = (k: number) => (k === 0 ? Math.sqrt(1 / p) : Math.sqrt(2 / p));
    for (const [r, c] of zigzag(p).slice(0, channels)) {
      const b = new Float64Array(p * p);
      for (let y = 0; y < p; y++) {
        for (let x = 0; x < p; x++) {
          b[y * p + x] =
            scale(r) * Math.cos((Math.PI * (2 * y + 1) * r) / (2 * p)) *
            scale(c) * Math.cos((Math.PI * (2 * x + 1) * c) / (2 * p));
        }
      }
      this.basis.push(b);
    }
  }

  encodePatch(patch: Float64Array): Float32Array {
    const out = new Float32Array(this.channels);
    for (let ch = 0; ch < this.channels; ch++) {
      const b = this.basis[ch];
      let acc = 0;
      for (let i = 0; i < patch.length; i++) acc += patch[i] * b[i];
      out[ch] = acc;
    }
    return out;
  }
}

export interface EncodedGrid {
  cropHeight: number;
  cropWidth: number;
  /** row-major (patch row, patch column, channel) */
  grid: Float32Array;
}

/** Center-crop to a multiple of the patch size, then encode every patch. */
export function encodeImage(image: GrayImage, encoder: PatchEncoder): EncodedGrid {
  const p = encoder.patchSize;
  const cropHeight = Math.floor(image.height / p) * p;
  const cropWidth = Math.floor(image.width / p) * p;
  if (cropHeight < p || cropWidth < p) {
    throw new Error(`image ${image.width}x${image.height} smaller than one ${p}px patch`);
  }
  const top = Math.floor((image.height - cropHeight) / 2);
  const left = Math.floor((image.width - cropWidth) / 2);
  const rows = cropHeight / p;
  const cols = cropWidth / p;
  const grid = new Float32Array(rows * cols * encoder.channels);
  const patch = new Float64Array(p * p);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      for (let y = 0; y < p; y++) {
        for (let x = 0; x < p; x++) {
          patch[y * p + x] =
            image.pixels[(top + r * p + y) * image.width + (left + c * p + x)];
        }
      }
      grid.set(encoder.encodePatch(patch), (r * cols + c) * encoder.channels);
    }
  }
  return { cropHeight, cropWidth, grid };
}
