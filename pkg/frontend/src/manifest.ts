/** Dataset manifest parsing: one tab-separated record per line
 * (id, relative image path, label, optional bbox "x0,y0,x1,y1"). */

import * as path from "path";

export interface ManifestRecord {
  imageId: string;
  /** absolute path, resolved against the manifest's directory */
  imagePath: string;
  label: string;
}

export function parseManifest(text: string, manifestPath: string): ManifestRecord[] {
  const base = path.dirname(path.resolve(manifestPath));
  const records: ManifestRecord[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i];
    if (!line) continue;
    const fields = line.split("\t");
    if (fields.length !== 3 && fields.length !== 4) {
      throw new Error(`${manifestPath}:${i + 1}: expected 3 or 4 fields, got ${fields.length}`);
    }
    records.push({
      imageId: fields[0],
      imagePath: path.join(base, fields[1]),
      label: fields[2],
    });
  }
  return records;
}
