/** Binary portable graymap (P5, 8-bit) decoding. Pixels map to [0, 1]. */

export interface GrayImage {
  height: number;
  width: number;
  /** row-major, length height * width */
  pixels: Float64Array;
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d || byte === 0x0c;
}

/** Reads the next whitespace-separated token, skipping '#' comment lines. */
function nextToken(data: Buffer, pos: number): { token: string; end: number } {
  let i = pos;
  for (;;) {
    while (i < data.length && isSpace(data[i])) i++;
    if (i < data.length && data[i] === 0x23) {
      while (i < data.length && data[i] !== 0x0a) i++;
      continue;
    }
    break;
  }
  const start = i;
  while (i < data.length && !isSpace(data[i])) i++;
  if (start === i) throw new Error("truncated graymap header");
  return { token: data.subarray(start, i).toString("ascii"), end: i };
}

export function decodePgm(data: Buffer, name = "image"): GrayImage {
  let { token, end } = nextToken(data, 0);
  if (token !== "P5") throw new Error(`${name}: not a binary graymap (magic ${token})`);
  const w = nextToken(data, end);
  const h = nextToken(data, w.end);
  const maxval = nextToken(data, h.end);
  const width = parseInt(w.token, 10);
  const height = parseInt(h.token, 10);
  if (!Number.isFinite(width) || !Number.isFinite(height)) {
    throw new Error(`${name}: bad graymap dimensions`);
  }
  if (maxval.token !== "255") throw new Error(`${name}: unsupported maxval ${maxval.token}`);
  const start = maxval.end + 1;
  if (data.length < start + width * height) {
    throw new Error(`${name}: expected ${width * height} pixel bytes`);
  }
  const pixels = new Float64Array(width * height);
  for (let i = 0; i < pixels.length; i++) pixels[i] = data[start + i] / 255.0;
  return { height, width, pixels };
}

export function encodePgm(image: GrayImage): Buffer {
  const header = Buffer.from(`P5\n${image.width} ${image.height}\n255\n`, "ascii");
  const body = Buffer.alloc(image.width * image.height);
  for (let i = 0; i < body.length; i++) body[i] = Math.round(image.pixels[i] * 255);
  return Buffer.concat([header, body]);
}
