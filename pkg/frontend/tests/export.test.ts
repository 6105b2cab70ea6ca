import { mkdirSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { toAnnotationFile } from "../src/export.js";
import type { SupportImage } from "../src/types.js";

const HERE = dirname(fileURLToPath(import.meta.url));

function support(points: [number, number][]): SupportImage {
  return {
    image: "aGVsbG8=",
    width: 96,
    height: 96,
    keypoints: points.map(([x, y]) => ({ x, y })),
  };
}

describe("toAnnotationFile", () => {
  it("produces the dataset annotation schema", () => {
    const file = toAnnotationFile(
      "fish",
      ["head", "tail", "fin"],
      [support([[10, 20], [60, 30], [35, 70]])],
      ["support_0.png"],
    );
    expect(file.categories).toEqual([
      { id: 1, name: "fish", keypoint_names: ["head", "tail", "fin"] },
    ]);
    expect(file.images[0]).toMatchObject({ id: 1, file: "support_0.png" });
    const ann = file.annotations[0]!;
    expect(ann.keypoints).toEqual([10, 20, 2, 60, 30, 2, 35, 70, 2]);
    // bbox = keypoint extent padded by 2 px
    expect(ann.bbox).toEqual([8, 18, 54, 54]);
  });

  it("clips the bbox to the image", () => {
    const file = toAnnotationFile(
      "fish",
      ["a", "b"],
      [support([[1, 1], [95, 95]])],
      ["s.png"],
    );
    expect(file.annotations[0]!.bbox).toEqual([0, 0, 96, 96]);
  });

  it("rejects incomplete annotations", () => {
    const incomplete = support([[1, 1]]);
    incomplete.keypoints.push(null);
    expect(() =>
      toAnnotationFile("fish", ["a", "b"], [incomplete], ["s.png"]),
    ).toThrow(/not placed/);
  });

  it("rejects degenerate keypoint extents", () => {
    // a point past the image edge clips to an empty box
    expect(() =>
      toAnnotationFile("fish", ["a"], [support([[99, 99]])], ["s.png"]),
    ).toThrow(/extent/);
  });

  it("writes the fixture consumed by the Python loader test", () => {
    const file = toAnnotationFile(
      "browser_fish",
      ["head", "tail", "fin"],
      [
        support([[10.25, 20.5], [60, 30], [35, 70.75]]),
        support([[12, 22], [58, 33], [38, 68]]),
      ],
      ["support_0.png", "support_1.png"],
    );
    const out = join(HERE, "fixtures", "exported_annotations.json");
    mkdirSync(dirname(out), { recursive: true });
    writeFileSync(out, JSON.stringify(file, null, 1) + "\n");
    expect(file.annotations).toHaveLength(2);
  });
});
