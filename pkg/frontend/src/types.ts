/** Shared payload shapes for the posematch HTTP API and annotator state. */

export interface Point {
  x: number;
  y: number;
}

export interface SupportImage {
  /** base64-encoded image (optionally a data URL) */
  image: string;
  width: number;
  height: number;
  /** one entry per keypoint name, in order; null until placed */
  keypoints: (Point | null)[];
}

export interface SupportRegistration {
  category_name: string;
  keypoint_names: string[];
  supports: { image: string; keypoints: [number, number][] }[];
}

export interface SessionInfo {
  session_id: string;
  num_keypoints: number;
}

export interface PredictedKeypoint {
  x: number;
  y: number;
  confidence: number;
}

export interface Prediction {
  keypoints: PredictedKeypoint[];
  model_id: string;
  timing_ms: number;
}

export interface ApiError {
  error: string;
  detail: string;
}
