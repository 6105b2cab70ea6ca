/** Export annotated supports to the dataset annotation schema.
 *
 * The output reloads through the Python toolkit's annotation loader, so a
 * browser session can seed a real dataset. bboxes are the keypoint extent
 * padded by two pixels and clipped to the image.
 */

import type { SupportImage } from "./types.js";

export interface AnnotationFile {
  categories: {
    id: number;
    name: string;
    keypoint_names: string[];
  }[];
  images: { id: number; file: string; width: number; height: number }[];
  annotations: {
    id: number;
    image_id: number;
    category_id: number;
    bbox: [number, number, number, number];
    keypoints: number[];
  }[];
}

const BBOX_PAD = 2;

function round2(v: number): number {
  return Math.round(v * 100) / 100;
}

export function toAnnotationFile(
  categoryName: string,
  keypointNames: string[],
  supports: SupportImage[],
  imageFiles: string[],
): AnnotationFile {
  if (supports.length === 0) throw new Error("nothing to export");
  if (imageFiles.length !== supports.length) {
    throw new Error("need one file name per support image");
  }
  const categoryId = 1;
  const images: AnnotationFile["images"] = [];
  const annotations: AnnotationFile["annotations"] = [];

  supports.forEach((support, index) => {
    const points = support.keypoints.map((p, i) => {
      if (p === null) {
        throw new Error(`keypoint ${keypointNames[i]} not placed on support ${index}`);
      }
      return p;
    });
    const xs = points.map((p) => p.x);
    const ys = points.map((p) => p.y);
    const x0 = Math.max(0, Math.min(...xs) - BBOX_PAD);
    const y0 = Math.max(0, Math.min(...ys) - BBOX_PAD);
    const x1 = Math.min(support.width, Math.max(...xs) + BBOX_PAD);
    const y1 = Math.min(support.height, Math.max(...ys) + BBOX_PAD);
    if (x1 <= x0 || y1 <= y0) {
      throw new Error(`support ${index}: keypoints have no spatial extent`);
    }
    images.push({
      id: index + 1,
      file: imageFiles[index]!,
      width: support.width,
      height: support.height,
    });
    annotations.push({
      id: index + 1,
      image_id: index + 1,
      category_id: categoryId,
      bbox: [round2(x0), round2(y0), round2(x1 - x0), round2(y1 - y0)],
      keypoints: points.flatMap((p) => [round2(p.x), round2(p.y), 2]),
    });
  });

  return {
    categories: [
      { id: categoryId, name: categoryName, keypoint_names: [...keypointNames] },
    ],
    images,
    annotations,
  };
}
