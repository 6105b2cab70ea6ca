/** Annotation session state.
 *
 * The server gives out a session id per registered support set; any edit to
 * the supports invalidates the current session so the next prediction
 * re-registers. Subscribers are notified on every mutation.
 */

import type { Point, SupportImage, SupportRegistration } from "./types.js";

export type Listener = () => void;

export class AnnotatorStore {
  categoryName = "custom";
  keypointNames: string[] = [];
  supports: SupportImage[] = [];
  sessionId: string | null = null;

  private listeners: Listener[] = [];

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  /** Any support edit makes the registered session stale. */
  private invalidateSession(): void {
    this.sessionId = null;
  }

  setCategoryName(name: string): void {
    this.categoryName = name;
    this.invalidateSession();
    this.notify();
  }

  setKeypointNames(names: string[]): void {
    if (names.length === 0) throw new Error("need at least one keypoint name");
    this.keypointNames = [...names];
    for (const support of this.supports) {
      support.keypoints = names.map((_, i) => support.keypoints[i] ?? null);
    }
    this.invalidateSession();
    this.notify();
  }

  addSupport(image: string, width: number, height: number): number {
    if (width <= 0 || height <= 0) throw new Error("image has no pixels");
    this.supports.push({
      image,
      width,
      height,
      keypoints: this.keypointNames.map(() => null),
    });
    this.invalidateSession();
    this.notify();
    return this.supports.length - 1;
  }

  removeSupport(index: number): void {
    this.checkSupport(index);
    this.supports.splice(index, 1);
    this.invalidateSession();
    this.notify();
  }

  /** Place or move one keypoint on one support image. */
  setKeypoint(supportIndex: number, keypointIndex: number, point: Point): void {
    const support = this.checkSupport(supportIndex);
    if (keypointIndex < 0 || keypointIndex >= this.keypointNames.length) {
      throw new Error(`no keypoint ${keypointIndex}`);
    }
    if (
      point.x < 0 ||
      point.x > support.width ||
      point.y < 0 ||
      point.y > support.height
    ) {
      throw new Error(
        `keypoint (${point.x}, ${point.y}) outside ` +
          `${support.width}x${support.height} image`,
      );
    }
    support.keypoints[keypointIndex] = { ...point };
    this.invalidateSession();
    this.notify();
  }

  clearKeypoint(supportIndex: number, keypointIndex: number): void {
    const support = this.checkSupport(supportIndex);
    support.keypoints[keypointIndex] = null;
    this.invalidateSession();
    this.notify();
  }

  /** index of the first keypoint not yet placed, or -1 when complete */
  nextUnplaced(supportIndex: number): number {
    const support = this.checkSupport(supportIndex);
    return support.keypoints.findIndex((p) => p === null);
  }

  isComplete(): boolean {
    return (
      this.supports.length > 0 &&
      this.keypointNames.length > 0 &&
      this.supports.every((s) => s.keypoints.every((p) => p !== null))
    );
  }

  /** Payload for POST /api/support; requires every keypoint placed. */
  toRegistration(): SupportRegistration {
    if (!this.isComplete()) {
      throw new Error("every keypoint must be placed on every support");
    }
    return {
      category_name: this.categoryName,
      keypoint_names: [...this.keypointNames],
      supports: this.supports.map((s) => ({
        image: s.image,
        keypoints: s.keypoints.map((p) => [p!.x, p!.y] as [number, number]),
      })),
    };
  }

  private checkSupport(index: number): SupportImage {
    const support = this.supports[index];
    if (!support) throw new Error(`no support image ${index}`);
    return support;
  }
}
