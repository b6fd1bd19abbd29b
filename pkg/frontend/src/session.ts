/** Annotation session state: the working pose being placed on a reference. */

import { AnnotationApi, ApiError } from "./api.js";
import {
  IDENTITY,
  Mat3,
  Pose9D,
  Vec3,
  matMul,
  orthonormalize,
  rotationAboutAxis,
} from "./rotation.js";

export type ViewMode = "Orbit" | "Front" | "Top" | "Right";
export type Axis = "x" | "y" | "z";

export class AnnotationSession {
  dirty = false;
  viewMode: ViewMode = "Orbit";
  private rotation: Mat3 = IDENTITY;

  constructor(
    readonly objectId: string,
    /** Machine-fitted box; extents are read-only in the UI. */
    private translation: Vec3,
    private extents: Vec3,
  ) {}

  get workingPose(): Pose9D {
    return {
      rotation: this.rotation,
      translation: this.translation,
      extents: this.extents,
    };
  }

  /**
   * Fine placement: pre-multiply a step-degree rotation about a canonical
   * axis, then re-orthonormalize so drift never accumulates across edits.
   */
  rotateIncrement(axis: Axis, direction: 1 | -1, stepDegrees = 1): void {
    const step = rotationAboutAxis(
      axis,
      (direction * stepDegrees * Math.PI) / 180,
    );
    this.rotation = orthonormalize(matMul(step, this.rotation));
    this.dirty = true;
  }

  /** Coarse placement from a drag gizmo: replace the rotation outright. */
  setRotation(rotation: Mat3): void {
    this.rotation = orthonormalize(rotation);
    this.dirty = true;
  }

  /**
   * POST the working pose.  On success the session is clean; on a server
   * rejection (400/409) or network failure the session is retained so the
   * annotator can adjust and retry.
   */
  async submit(
    api: AnnotationApi,
    annotatorId: string,
    crossVerified = false,
  ): Promise<{ ok: boolean; error?: string }> {
    try {
      await api.postPose(
        this.objectId,
        this.workingPose,
        annotatorId,
        crossVerified,
      );
    } catch (err) {
      if (err instanceof ApiError) return { ok: false, error: err.message };
      return { ok: false, error: "server unreachable; pose retained" };
    }
    this.dirty = false;
    return { ok: true };
  }
}
