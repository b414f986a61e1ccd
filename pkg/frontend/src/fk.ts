/** Forward kinematics over Euler-angle skeletons, plus 2D projections.
 *
 * Pure math, no DOM: the renderer and the tests share these functions.
 * Rotation matrices compose in the skeleton's declared channel order, e.g.
 * order "XYZ" means v' = Rx(Ry(Rz(v))).
 */

export interface JointDef {
  name: string;
  parent: number; // -1 for the root
  offset: [number, number, number];
}

export interface SkeletonDef {
  rotation_order: string;
  joints: JointDef[];
  mirror?: { pairs: number[][]; sign_flip: number[] };
}

export type Vec3 = [number, number, number];
export type Mat3 = number[]; // row-major, length 9

export const IDENTITY: Mat3 = [1, 0, 0, 0, 1, 0, 0, 0, 1];

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array(9).fill(0);
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[3 * i + j] =
        a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
    }
  }
  return out;
}

export function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

export function axisRotation(axis: string, angle: number): Mat3 {
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  switch (axis) {
    case "X":
      return [1, 0, 0, 0, c, -s, 0, s, c];
    case "Y":
      return [c, 0, s, 0, 1, 0, -s, 0, c];
    case "Z":
      return [c, -s, 0, s, c, 0, 0, 0, 1];
    default:
      throw new Error(`unknown rotation axis ${axis}`);
  }
}

export function eulerMatrix(order: string, angles: number[]): Mat3 {
  let m = IDENTITY;
  for (let i = 0; i < order.length; i++) {
    m = matMul(m, axisRotation(order[i], angles[i]));
  }
  return m;
}

/** Global joint positions for one frame of Euler angles (radians). */
export function forwardKinematics(
  skeleton: SkeletonDef,
  frame: number[][],
): Vec3[] {
  const n = skeleton.joints.length;
  const positions: Vec3[] = new Array(n);
  const rotations: Mat3[] = new Array(n);
  for (let i = 0; i < n; i++) {
    const joint = skeleton.joints[i];
    const local = eulerMatrix(skeleton.rotation_order, frame[i]);
    if (joint.parent < 0) {
      positions[i] = [...joint.offset] as Vec3;
      rotations[i] = local;
    } else {
      const parentRot = rotations[joint.parent];
      const offsetWorld = matVec(parentRot, joint.offset as Vec3);
      const parentPos = positions[joint.parent];
      positions[i] = [
        parentPos[0] + offsetWorld[0],
        parentPos[1] + offsetWorld[1],
        parentPos[2] + offsetWorld[2],
      ];
      rotations[i] = matMul(parentRot, local);
    }
  }
  return positions;
}

export type ViewPlane = "front" | "side";

/** Orthographic projection to 2D screen coordinates (y grows downward). */
export function project(
  positions: Vec3[],
  view: ViewPlane,
): Array<[number, number]> {
  return positions.map((p) =>
    view === "front" ? [p[0], -p[1]] : [p[2], -p[1]],
  );
}

/** Bone list as index pairs, derived from the parent relation. */
export function bones(skeleton: SkeletonDef): Array<[number, number]> {
  const out: Array<[number, number]> = [];
  skeleton.joints.forEach((joint, i) => {
    if (joint.parent >= 0) out.push([joint.parent, i]);
  });
  return out;
}
