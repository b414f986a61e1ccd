/** Edit-spec authoring model: the same JSON schema the service enforces.
 *
 * The form works in degrees and joint names; the wire format keeps degrees
 * only inside `targets_deg` (the service converts to radians internally).
 */

import { z } from "zod";

export const LOSS_KINDS = [
  "frame_joint",
  "motion_range",
  "velocity",
  "symmetry",
] as const;

export type LossKind = (typeof LOSS_KINDS)[number];

export const editSpecSchema = z
  .object({
    kind: z.enum(LOSS_KINDS),
    direction: z.enum(["minimize", "maximize"]).default("minimize"),
    weight: z.number().positive().default(1.0),
    frames: z.array(z.number().int().nonnegative()).optional(),
    joints: z.array(z.string()).optional(),
    targets_deg: z.array(z.array(z.number())).optional(),
  })
  .superRefine((spec, ctx) => {
    if (spec.kind === "frame_joint") {
      if (!spec.frames?.length) {
        ctx.addIssue({ code: "custom", path: ["frames"],
                       message: "select at least one frame" });
      }
      if (!spec.joints?.length) {
        ctx.addIssue({ code: "custom", path: ["joints"],
                       message: "select at least one joint" });
      }
      if (spec.joints?.length &&
          spec.targets_deg?.length !== spec.joints.length) {
        ctx.addIssue({ code: "custom", path: ["targets_deg"],
                       message: "one target row per selected joint" });
      }
    }
    if (spec.direction === "maximize" &&
        spec.kind !== "motion_range" && spec.kind !== "velocity") {
      ctx.addIssue({ code: "custom", path: ["direction"],
                     message: "maximize applies to motion_range and velocity only" });
    }
  });

export type EditSpecDoc = z.infer<typeof editSpecSchema>;

/** What the form binds to; degrees per channel for each selected joint. */
export interface SpecFormState {
  kind: LossKind;
  direction: "minimize" | "maximize";
  weight: number;
  frames: number[];
  joints: string[];
  targetsDeg: number[][];
}

export function emptyForm(): SpecFormState {
  return { kind: "motion_range", direction: "minimize", weight: 1.0,
           frames: [], joints: [], targetsDeg: [] };
}

/** Which selection controls a kind needs; symmetry and range need none. */
export function usesSelection(kind: LossKind): boolean {
  return kind === "frame_joint";
}

export function formToDoc(form: SpecFormState): EditSpecDoc {
  const doc: Record<string, unknown> = {
    kind: form.kind,
    direction: form.direction,
    weight: form.weight,
  };
  if (form.kind === "frame_joint") {
    doc.frames = [...form.frames].sort((a, b) => a - b);
    doc.joints = [...form.joints];
    doc.targets_deg = form.targetsDeg.map((row) => [...row]);
  }
  return editSpecSchema.parse(doc);
}

export function docToForm(doc: unknown): SpecFormState {
  const spec = editSpecSchema.parse(doc);
  return {
    kind: spec.kind,
    direction: spec.direction,
    weight: spec.weight,
    frames: spec.frames ? [...spec.frames] : [],
    joints: spec.joints ? [...spec.joints] : [],
    targetsDeg: spec.targets_deg ? spec.targets_deg.map((r) => [...r]) : [],
  };
}

/** Validation messages keyed by field path, empty when submittable. */
export function validateForm(form: SpecFormState): Record<string, string> {
  const result = editSpecSchema.safeParse({
    kind: form.kind,
    direction: form.direction,
    weight: form.weight,
    frames: form.frames,
    joints: form.joints,
    targets_deg: form.targetsDeg,
  });
  if (result.success) return {};
  const messages: Record<string, string> = {};
  for (const issue of result.error.issues) {
    messages[issue.path.join(".") || "spec"] = issue.message;
  }
  return messages;
}
