"""Cross-shot actor association, occlusion gap filling, boundary
extrapolation, and the MTED/MPED boundary-consistency metrics.

Association is the greedy nearest-center procedure: iterate the previous
shot's actors in index order, each taking its nearest unmatched successor
if that distance clears the threshold.  No global optimality is attempted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .body import PoseParams, StagePlacement
from .core import quat_slerp

PROVENANCE_VISIBLE = "visible"
PROVENANCE_INTERPOLATED = "interpolated"
PROVENANCE_EXTRAPOLATED = "extrapolated"

DEFAULT_EXTRAPOLATION_HORIZON = 30  # frames of constant hold past a boundary
DEFAULT_MATCH_FACTOR = 0.15  # lambda_match = factor * r_stage unless overridden


@dataclass(frozen=True)
class ShotBoundary:
    last_frame_prev: int
    first_frame_next: int
    lambda_match: float

    def __post_init__(self):
        if self.first_frame_next != self.last_frame_prev + 1:
            raise ValueError("shot boundary frames must be consecutive in scene time")
        if not (self.lambda_match > 0):
            raise ValueError("matching threshold must be positive")


@dataclass
class FrameState:
    placement: StagePlacement
    pose: PoseParams
    provenance: str = PROVENANCE_VISIBLE


@dataclass
class ActorTrack:
    actor_id: int
    states: dict = field(default_factory=dict)  # frame index -> FrameState
    shots: list = field(default_factory=list)  # shot indices this track appears in

    def frames(self):
        return sorted(self.states)

    def last_frame_at_or_before(self, frame: int):
        candidates = [f for f in self.states if f <= frame]
        return max(candidates) if candidates else None


def match_actors(a_centers, b_centers, lambda_match: float):
    """Greedy nearest-center association across a shot boundary.

    a_centers (N,3) are actor centers in the last frame of the previous
    shot, b_centers (M,3) in the first frame of the next; returns matched
    (i, j) index pairs.  Deterministic: A is walked in index order and each
    A_i takes the closest still-unmatched B_j, accepted only when the
    distance is strictly below the threshold.
    """
    a = np.atleast_2d(np.asarray(a_centers, dtype=np.float64)) if len(a_centers) else \
        np.zeros((0, 3))
    b = np.atleast_2d(np.asarray(b_centers, dtype=np.float64)) if len(b_centers) else \
        np.zeros((0, 3))
    pairs = []
    unmatched = list(range(b.shape[0]))
    for i in range(a.shape[0]):
        if not unmatched:
            break
        d = np.linalg.norm(b[unmatched] - a[i], axis=1)
        best = int(np.argmin(d))
        if d[best] < lambda_match:
            pairs.append((i, unmatched[best]))
            unmatched.pop(best)
    return pairs


def interpolate_pose(track: ActorTrack, gap_frames, anchor_before: int,
                     anchor_after: int) -> None:
    """Fill an occlusion gap between two stable anchor frames.

    Translation and scale interpolate linearly in frame time; per-joint
    rotations interpolate by shortest-arc slerp.  Filled frames are tagged
    interpolated.  Raises KeyError when an anchor state is missing (callers
    fall back to extrapolation).
    """
    sa = track.states[anchor_before]
    sb = track.states[anchor_after]
    if anchor_after <= anchor_before:
        raise ValueError("anchors must straddle the gap in increasing frame order")
    span = anchor_after - anchor_before
    for f in gap_frames:
        if not (anchor_before < f < anchor_after):
            raise ValueError(f"gap frame {f} not strictly between anchors")
        alpha = (f - anchor_before) / span
        t = (1 - alpha) * sa.placement.t + alpha * sb.placement.t
        s = (1 - alpha) * sa.placement.s + alpha * sb.placement.s
        quats = np.stack([quat_slerp(qa, qb, alpha)
                          for qa, qb in zip(sa.pose.quats, sb.pose.quats)])
        track.states[f] = FrameState(placement=StagePlacement(s=s, t=t),
                                     pose=PoseParams(quats=quats),
                                     provenance=PROVENANCE_INTERPOLATED)


def extrapolate_track(track: ActorTrack, boundary: ShotBoundary,
                      n_frames_next_shot: int,
                      horizon: int = DEFAULT_EXTRAPOLATION_HORIZON) -> list:
    """Constant-hold an unmatched actor into the next shot.

    The last observed state at or before the boundary is frozen for up to
    `horizon` frames of the next shot; beyond that the actor is absent.
    Returns the list of frames filled.
    """
    src_frame = track.last_frame_at_or_before(boundary.last_frame_prev)
    if src_frame is None:
        return []
    src = track.states[src_frame]
    filled = []
    stop = min(n_frames_next_shot, horizon)
    for k in range(stop):
        f = boundary.first_frame_next + k
        track.states[f] = FrameState(placement=src.placement, pose=src.pose,
                                     provenance=PROVENANCE_EXTRAPOLATED)
        filled.append(f)
    return filled


def compute_mted_mped(trans_a, trans_b, joints_a, joints_b):
    """Boundary-consistency metrics over matched actors.

    trans_* are (A,3) actor translations on each side of a boundary and
    joints_* the (A,J,3) stage-frame joint positions.  MTED is the mean
    translation distance, MPED the mean per-joint distance.
    """
    trans_a = np.atleast_2d(np.asarray(trans_a, dtype=np.float64))
    trans_b = np.atleast_2d(np.asarray(trans_b, dtype=np.float64))
    if trans_a.shape[0] == 0:
        raise ValueError("compute_mted_mped: no matched actors")
    joints_a = np.asarray(joints_a, dtype=np.float64)
    joints_b = np.asarray(joints_b, dtype=np.float64)
    if joints_a.ndim == 2:
        joints_a = joints_a[None]
        joints_b = joints_b[None]
    mted = float(np.linalg.norm(trans_a - trans_b, axis=1).mean())
    mped = float(np.linalg.norm(joints_a - joints_b, axis=2).mean())
    return mted, mped


# ---------------------------------------------------------------------------
# track table CSV
# ---------------------------------------------------------------------------

def track_table_header(n_joints: int):
    cols = ["actor_id", "frame", "provenance", "s", "tx", "ty", "tz"]
    for j in range(n_joints):
        cols += [f"q{j}_{c}" for c in "wxyz"]
    return cols


def write_track_csv(path, tracks) -> None:
    n_joints = None
    for track in tracks:
        for state in track.states.values():
            n_joints = state.pose.quats.shape[0]
            break
        if n_joints is not None:
            break
    if n_joints is None:
        raise ValueError("no states to export")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(track_table_header(n_joints))
        for track in sorted(tracks, key=lambda t: t.actor_id):
            for frame in track.frames():
                st = track.states[frame]
                row = [track.actor_id, frame, st.provenance,
                       repr(float(st.placement.s))]
                row += [repr(float(v)) for v in st.placement.t]
                row += [repr(float(v)) for v in st.pose.quats.ravel()]
                writer.writerow(row)


def read_track_csv(path):
    tracks = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        n_joints = (len(header) - 7) // 4
        for row in reader:
            actor_id, frame = int(row[0]), int(row[1])
            provenance = row[2]
            s = float(row[3])
            t = np.array([float(v) for v in row[4:7]])
            quats = np.array([float(v) for v in row[7:7 + 4 * n_joints]])
            state = FrameState(placement=StagePlacement(s=s, t=t),
                               pose=PoseParams(quats=quats.reshape(n_joints, 4)),
                               provenance=provenance)
            tracks.setdefault(actor_id, ActorTrack(actor_id=actor_id)) \
                .states[frame] = state
    return [tracks[k] for k in sorted(tracks)]
