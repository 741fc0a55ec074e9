/** Discovery of rendered views.
 *
 * The rendering pipeline lays views out as
 *   <root>/<cloud>/view00/image.pgm
 *   <root>/<cloud>/view01/image.pgm
 *   ...
 * with per-run files (config echoes, reports) alongside the cloud
 * directories. The scanner keeps only directories that contain at least
 * one viewNN/image.pgm and returns entries in sorted order so processing
 * is stable across filesystems.
 */

import { readdirSync, statSync } from "node:fs";
import { join } from "node:path";

import { DataError } from "./pgm.js";

export interface ViewEntry {
  cloud: string;
  /** directory name, e.g. "view00"; the output file is `${view}.padf` */
  view: string;
  imagePath: string;
}

const VIEW_DIR = /^view\d+$/;

function isDir(path: string): boolean {
  try {
    return statSync(path).isDirectory();
  } catch {
    return false;
  }
}

function isFile(path: string): boolean {
  try {
    return statSync(path).isFile();
  } catch {
    return false;
  }
}

export function scanViews(root: string): ViewEntry[] {
  if (!isDir(root)) throw new DataError(`no rendering directory at ${root}`);
  const entries: ViewEntry[] = [];
  for (const cloud of readdirSync(root).sort()) {
    const cloudDir = join(root, cloud);
    if (!isDir(cloudDir)) continue;
    for (const view of readdirSync(cloudDir).sort()) {
      if (!VIEW_DIR.test(view)) continue;
      const imagePath = join(cloudDir, view, "image.pgm");
      if (!isFile(imagePath)) {
        throw new DataError(`view directory ${join(cloudDir, view)} has no image.pgm`);
      }
      entries.push({ cloud, view, imagePath });
    }
  }
  if (entries.length === 0) {
    throw new DataError(`no viewNN/image.pgm renderings under ${root}`);
  }
  return entries;
}
