/** PGFS feature-store serialization.
 *
 * Layout (little-endian): magic "PGFS", u32 version=1, u32 entry count,
 * u32 channels, u32 patch size; per entry: u32 id length + utf-8 id,
 * u32 H, u32 W, f32 grid row-major in (patch row, patch column, channel)
 * order, then the pixel mask packed row-major MSB-first and padded to a
 * byte boundary at the end of the raster.
 */

const MAGIC = "PGFS";
const VERSION = 1;

export interface StoreEntry {
  entryId: string;
  /** image dims in pixels; both divisible by the store's patch size */
  height: number;
  width: number;
  /** (H/P) * (W/P) * channels values, row-major (y, x, c) */
  grid: Float32Array;
  /** row-major pixel mask, length height * width */
  mask: Uint8Array;
}

export interface Store {
  channels: number;
  patchSize: number;
  entries: StoreEntry[];
}

function packBits(mask: Uint8Array): Buffer {
  const out = Buffer.alloc(Math.ceil(mask.length / 8));
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) out[i >> 3] |= 0x80 >> (i & 7);
  }
  return out;
}

function unpackBits(data: Buffer, count: number): Uint8Array {
  const out = new Uint8Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = (data[i >> 3] >> (7 - (i & 7))) & 1;
  }
  return out;
}

export function encodeStore(store: Store): Buffer {
  const parts: Buffer[] = [];
  const header = Buffer.alloc(20);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(store.entries.length, 8);
  header.writeUInt32LE(store.channels, 12);
  header.writeUInt32LE(store.patchSize, 16);
  parts.push(header);
  for (const e of store.entries) {
    const p = store.patchSize;
    if (e.height % p || e.width % p) {
      throw new Error(`${e.entryId}: dims ${e.height}x${e.width} not divisible by ${p}`);
    }
    const expected = (e.height / p) * (e.width / p) * store.channels;
    if (e.grid.length !== expected) {
      throw new Error(`${e.entryId}: grid has ${e.grid.length} values, expected ${expected}`);
    }
    const id = Buffer.from(e.entryId, "utf-8");
    const head = Buffer.alloc(12);
    head.writeUInt32LE(id.length, 0);
    head.writeUInt32LE(e.height, 4);
    head.writeUInt32LE(e.width, 8);
    const grid = Buffer.alloc(4 * e.grid.length);
    for (let i = 0; i < e.grid.length; i++) grid.writeFloatLE(e.grid[i], 4 * i);
    parts.push(head.subarray(0, 4), id, head.subarray(4), grid, packBits(e.mask));
  }
  return Buffer.concat(parts);
}

export function decodeStore(data: Buffer, name = "store"): Store {
  let off = 0;
  const take = (size: number, what: string): number => {
    if (off + size > data.length) {
      throw new Error(`${name}: truncated ${what} at byte ${off}`);
    }
    const at = off;
    off += size;
    return at;
  };
  const magicAt = take(4, "magic");
  const magic = data.subarray(magicAt, magicAt + 4).toString("ascii");
  if (magic !== MAGIC) throw new Error(`${name}: bad magic ${magic}`);
  const version = data.readUInt32LE(take(4, "version"));
  if (version !== VERSION) throw new Error(`${name}: unsupported version ${version}`);
  const count = data.readUInt32LE(take(4, "entry count"));
  const channels = data.readUInt32LE(take(4, "channels"));
  const patchSize = data.readUInt32LE(take(4, "patch size"));
  const entries: StoreEntry[] = [];
  for (let i = 0; i < count; i++) {
    const idLen = data.readUInt32LE(take(4, `entry ${i} id length`));
    const idAt = take(idLen, `entry ${i} id`);
    const entryId = data.subarray(idAt, idAt + idLen).toString("utf-8");
    const height = data.readUInt32LE(take(4, `entry ${i} height`));
    const width = data.readUInt32LE(take(4, `entry ${i} width`));
    const n = (height / patchSize) * (width / patchSize) * channels;
    const gridAt = take(4 * n, `entry ${i} grid`);
    const grid = new Float32Array(n);
    for (let j = 0; j < n; j++) grid[j] = data.readFloatLE(gridAt + 4 * j);
    const maskAt = take(Math.ceil((height * width) / 8), `entry ${i} mask`);
    const mask = unpackBits(data.subarray(maskAt), height * width);
    entries.push({ entryId, height, width, grid, mask });
  }
  if (off !== data.length) {
    throw new Error(`${name}: ${data.length - off} trailing bytes at offset ${off}`);
  }
  return { channels, patchSize, entries };
}
