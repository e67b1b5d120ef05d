/** Batch export: manifest in, PGFS store out.
 *
 * Every image becomes one store entry whose id is suffixed with the crop
 * dims (e.g. "s00@crop56x56") so consumers can recover the crop rule.
 * Masks are written all-ones: the adapter exports features, not lesion
 * annotations, and the store format carries a mask per entry.
 */

import * as fs from "fs";

import { encodeImage, PatchEncoder, StandInEncoder } from "./encoder";
import { parseManifest } from "./manifest";
import { decodePgm } from "./pgm";
import { encodeStore, Store, StoreEntry } from "./pgfs";

export interface ExportJob {
  manifestPath: string;
  outPath: string;
  patchSize: number;
  channels: number;
}

export interface ExportResult {
  written: number;
  failures: Array<{ imageId: string; error: string }>;
}

export function exportFeatures(job: ExportJob, encoder?: PatchEncoder): ExportResult {
  const enc = encoder ?? new StandInEncoder(job.patchSize, job.channels);
  if (enc.patchSize !== job.patchSize || enc.channels !== job.channels) {
    throw new Error("encoder disagrees with the job's patch size or channel count");
  }
  const records = parseManifest(fs.readFileSync(job.manifestPath, "utf-8"), job.manifestPath);
  const entries: StoreEntry[] = [];
  const failures: ExportResult["failures"] = [];
  for (const rec of records) {
    try {
      const image = decodePgm(fs.readFileSync(rec.imagePath), rec.imageId);
      const { cropHeight, cropWidth, grid } = encodeImage(image, enc);
      entries.push({
        entryId: `${rec.imageId}@crop${cropHeight}x${cropWidth}`,
        height: cropHeight,
        width: cropWidth,
        grid,
        mask: new Uint8Array(cropHeight * cropWidth).fill(1),
      });
    } catch (err) {
      failures.push({ imageId: rec.imageId, error: String(err) });
    }
  }
  const store: Store = { channels: job.channels, patchSize: job.patchSize, entries };
  const tmp = `${job.outPath}.tmp${process.pid}`;
  fs.writeFileSync(tmp, encodeStore(store));
  fs.renameSync(tmp, job.outPath);
  return { written: entries.length, failures };
}
