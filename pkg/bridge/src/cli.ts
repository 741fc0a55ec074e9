#!/usr/bin/env node
/** Command-line front end.
 *
 *   export       walk a rendering tree and write one .padf feature file
 *                per view, mirroring the <cloud>/viewNN layout
 *   export-text  write a normal/anomalous pair of prompt vector files
 *
 * Exit codes: 0 success, 2 invalid arguments, 3 unreadable or malformed
 * data. Everything is deterministic: the same inputs, seed, and options
 * reproduce every output byte.
 */

import { join } from "node:path";

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { createBackbone } from "./backbone.js";
import { writePadf } from "./padf.js";
import { DataError, readPgm } from "./pgm.js";
import { scanViews } from "./scan.js";
import { anchorFile } from "./text.js";

class UsageError extends Error {}

function parseGrid(spec: string): [number, number] {
  const match = /^(\d+)x(\d+)$/.exec(spec);
  if (!match) throw new UsageError(`--grid must look like 24x24, got ${JSON.stringify(spec)}`);
  const h = Number(match[1]);
  const w = Number(match[2]);
  if (h < 1 || w < 1) throw new UsageError(`--grid dimensions must be positive, got ${spec}`);
  return [h, w];
}

function checkPositiveInt(name: string, value: number): number {
  if (!Number.isInteger(value) || value < 1) {
    throw new UsageError(`--${name} must be a positive integer, got ${value}`);
  }
  return value;
}

interface ExportArgs {
  images: string;
  out: string;
  grid: string;
  dim: number;
  seed: number;
  backbone: string;
}

function runExport(argv: ExportArgs): void {
  const [h, w] = parseGrid(argv.grid);
  const dim = checkPositiveInt("dim", argv.dim);
  const backbone = createBackbone(argv.backbone, dim, argv.seed >>> 0);
  const entries = scanViews(argv.images);
  const clouds = new Set<string>();
  for (const entry of entries) {
    const image = readPgm(entry.imagePath);
    const { grid, global } = backbone.encode(image, h, w);
    writePadf(join(argv.out, entry.cloud, `${entry.view}.padf`), {
      h,
      w,
      d: backbone.dim,
      grid,
      global,
    });
    clouds.add(entry.cloud);
  }
  console.log(
    `exported ${entries.length} feature files for ${clouds.size} clouds -> ${argv.out}`,
  );
}

interface ExportTextArgs {
  phrases: string[];
  out: string;
  dim: number;
  seed: number;
}

function runExportText(argv: ExportTextArgs): void {
  if (argv.phrases.length !== 2) {
    throw new UsageError("--phrases needs exactly two strings: normal then anomalous");
  }
  const dim = checkPositiveInt("dim", argv.dim);
  const [normal, anomalous] = argv.phrases;
  const pathN = `${argv.out}_n.padf`;
  const pathA = `${argv.out}_a.padf`;
  writePadf(pathN, anchorFile(normal, dim, argv.seed >>> 0));
  writePadf(pathA, anchorFile(anomalous, dim, argv.seed >>> 0));
  console.log(`wrote ${pathN} and ${pathA}`);
}

export function main(args: string[]): number {
  try {
    yargs(args)
      .scriptName("cloudmark-bridge")
      .command<ExportArgs>(
        "export",
        "write per-view feature files from rendered images",
        (cmd) =>
          cmd
            .option("images", { type: "string", demandOption: true, describe: "rendering tree root" })
            .option("out", { type: "string", demandOption: true, describe: "feature output root" })
            .option("grid", { type: "string", demandOption: true, describe: "feature grid, e.g. 24x24" })
            .option("dim", { type: "number", default: 64, describe: "feature dimension d" })
            .option("seed", { type: "number", default: 0, describe: "backbone seed" })
            .option("backbone", { type: "string", default: "patch-stats", describe: "feature backbone" }),
        runExport,
      )
      .command<ExportTextArgs>(
        "export-text",
        "write a normal/anomalous prompt vector pair",
        (cmd) =>
          cmd
            .option("phrases", { type: "string", array: true, nargs: 2, demandOption: true, describe: "normal phrase, anomalous phrase" })
            .option("out", { type: "string", demandOption: true, describe: "checkpoint base path" })
            .option("dim", { type: "number", default: 64, describe: "vector dimension d" })
            .option("seed", { type: "number", default: 0, describe: "anchor seed" }),
        runExportText,
      )
      .demandCommand(1, "pick a command: export or export-text")
      .strict()
      .fail((msg, err) => {
        if (err) throw err;
        throw new UsageError(msg);
      })
      .exitProcess(false)
      .parseSync();
    return 0;
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    if (err instanceof DataError) {
      console.error(`error: ${err.message}`);
      return 3;
    }
    throw err;
  }
}

process.exit(main(hideBin(process.argv)));
