/** Typed client for the annotation/verification HTTP API. */

import { z } from "zod";
import type { Mat3, Pose9D, Vec3 } from "./rotation.js";

const vec3 = z.tuple([z.number(), z.number(), z.number()]);
const mat3 = z.tuple([vec3, vec3, vec3]);

const poseSchema = z.object({
  rotation: mat3,
  translation: vec3,
  extents: vec3,
});

const similaritySchema = z.object({
  rotation: mat3,
  translation: vec3,
  scale: z.number(),
});

export const canonicalSchema = z.object({
  world_to_canonical: similaritySchema,
  box: poseSchema,
});

export const clusterSchema = z.object({
  index: z.number(),
  medoid: z.string(),
  aligned: z.boolean(),
  members: z.array(z.object({ object_id: z.string(), status: z.string() })),
});

export const surfaceSchema = z.object({
  object_id: z.string(),
  status: z.string(),
  vertices: z.array(vec3),
  pose: canonicalSchema.nullable(),
});

const viewSchema = z.object({
  points: z.array(z.tuple([z.number(), z.number()])),
  box_outline: z.array(z.tuple([z.number(), z.number()])).length(4),
});

export const viewsSchema = z.object({
  front: viewSchema,
  top: viewSchema,
  right: viewSchema,
});

export const statsSchema = z.object({
  status_counts: z.record(z.number()),
  total_objects: z.number(),
});

export type Cluster = z.infer<typeof clusterSchema>;
export type SurfacePayload = z.infer<typeof surfaceSchema>;
export type ViewsPayload = z.infer<typeof viewsSchema>;
export type StatsPayload = z.infer<typeof statsSchema>;
export type Verdict = "Accept" | "Skip" | "Filter";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class AnnotationApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request(path: string, init?: Parameters<FetchLike>[1]) {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const body = await res.json();
    if (res.status >= 400) {
      const detail =
        typeof body === "object" && body !== null && "detail" in body
          ? String((body as { detail: unknown }).detail)
          : `HTTP ${res.status}`;
      throw new ApiError(res.status, detail);
    }
    return body;
  }

  async getClusters(): Promise<Cluster[]> {
    return z.array(clusterSchema).parse(await this.request("/clusters"));
  }

  async getSurface(objectId: string): Promise<SurfacePayload> {
    return surfaceSchema.parse(
      await this.request(`/objects/${objectId}/surface`),
    );
  }

  async getViews(objectId: string): Promise<ViewsPayload> {
    return viewsSchema.parse(await this.request(`/objects/${objectId}/views`));
  }

  async postPose(
    objectId: string,
    pose: Pose9D,
    annotatorId: string,
    crossVerified: boolean,
  ): Promise<void> {
    await this.request(`/objects/${objectId}/pose`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        rotation: (pose.rotation as Mat3).flat(),
        translation: pose.translation as Vec3,
        extents: pose.extents as Vec3,
        annotator_id: annotatorId,
        cross_verified: crossVerified,
      }),
    });
  }

  async postVerdict(
    objectId: string,
    verdict: Verdict,
    reviewerId: string,
  ): Promise<void> {
    await this.request(`/objects/${objectId}/verdict`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ verdict, reviewer_id: reviewerId }),
    });
  }

  async getStats(): Promise<StatsPayload> {
    return statsSchema.parse(await this.request("/stats"));
  }
}
