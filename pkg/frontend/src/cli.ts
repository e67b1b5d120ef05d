#!/usr/bin/env node
/** Usage: node dist/cli.js export --manifest PATH --out PATH
 *           [--patch-size 14] [--channels 16]
 * Exits 0 when every image exported, 1 on usage errors, 2 when any
 * image failed (the remaining images are still written). */

import { exportFeatures } from "./export";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`bad argument ${key}`);
    }
    out.set(key.slice(2), argv[i + 1]);
  }
  return out;
}

function main(): number {
  const [command, ...rest] = process.argv.slice(2);
  if (command !== "export") {
    console.error("usage: cli.js export --manifest PATH --out PATH [--patch-size N] [--channels C]");
    return 1;
  }
  let args: Map<string, string>;
  try {
    args = parseArgs(rest);
  } catch (err) {
    console.error(String(err));
    return 1;
  }
  const manifestPath = args.get("manifest");
  const outPath = args.get("out");
  if (!manifestPath || !outPath) {
    console.error("export needs --manifest and --out");
    return 1;
  }
  const result = exportFeatures({
    manifestPath,
    outPath,
    patchSize: parseInt(args.get("patch-size") ?? "14", 10),
    channels: parseInt(args.get("channels") ?? "16", 10),
  });
  for (const f of result.failures) {
    console.error(`failed: ${f.imageId}: ${f.error}`);
  }
  console.log(`${outPath}: ${result.written} entries`);
  return result.failures.length ? 2 : 0;
}

process.exit(main());
