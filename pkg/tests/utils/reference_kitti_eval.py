#!/usr/bin/env python3
"""
Reference KITTI odometry evaluation.

An independent port of the conventions of the KITTI odometry development kit
(dict-of-poses loops, ``np.linalg.inv`` everywhere, strict ``>`` segment end
search, step size 10, lengths 100..800) plus Horn/Umeyama alignment for ATE.
It shares no code with ``voclip.kitti_eval`` and serves as its oracle.
"""

from typing import Dict, List, Sequence, Tuple

import numpy as np

LENGTHS = [100, 200, 300, 400, 500, 600, 700, 800]
STEP_SIZE = 10


def poses_from_matrices(matrices: np.ndarray) -> Dict[int, np.ndarray]:
    """{idx: 4x4 array}"""
    return {i: np.array(m, dtype=np.float64) for i, m in enumerate(matrices)}


def trajectory_distances(poses: Dict[int, np.ndarray]) -> List[float]:
    dist = [0.0]
    keys = sorted(poses.keys())
    for i in range(len(keys) - 1):
        p1 = poses[keys[i]]
        p2 = poses[keys[i + 1]]
        dx = p1[0, 3] - p2[0, 3]
        dy = p1[1, 3] - p2[1, 3]
        dz = p1[2, 3] - p2[2, 3]
        dist.append(dist[i] + np.sqrt(dx**2 + dy**2 + dz**2))
    return dist


def rotation_error(pose_error: np.ndarray) -> float:
    a = pose_error[0, 0]
    b = pose_error[1, 1]
    c = pose_error[2, 2]
    d = 0.5 * (a + b + c - 1.0)
    return float(np.arccos(max(min(d, 1.0), -1.0)))


def translation_error(pose_error: np.ndarray) -> float:
    dx = pose_error[0, 3]
    dy = pose_error[1, 3]
    dz = pose_error[2, 3]
    return float(np.sqrt(dx**2 + dy**2 + dz**2))


def last_frame_from_segment_length(dist: List[float], first_frame: int, length: float) -> int:
    for i in range(first_frame, len(dist), 1):
        if dist[i] > (dist[first_frame] + length):
            return i
    return -1


def calc_sequence_errors(
    poses_gt: Dict[int, np.ndarray],
    poses_result: Dict[int, np.ndarray],
    lengths: Sequence[float] = LENGTHS,
    step_size: int = STEP_SIZE,
) -> List[List[float]]:
    """[first_frame, r_err / len, t_err / len, len] per segment."""
    err = []
    dist = trajectory_distances(poses_gt)
    for first_frame in range(0, len(poses_gt), step_size):
        for len_ in lengths:
            last_frame = last_frame_from_segment_length(dist, first_frame, len_)
            if last_frame == -1:
                continue
            pose_delta_gt = np.dot(np.linalg.inv(poses_gt[first_frame]), poses_gt[last_frame])
            pose_delta_result = np.dot(np.linalg.inv(poses_result[first_frame]), poses_result[last_frame])
            pose_error = np.dot(np.linalg.inv(pose_delta_result), pose_delta_gt)
            r_err = rotation_error(pose_error)
            t_err = translation_error(pose_error)
            err.append([first_frame, r_err / len_, t_err / len_, len_])
    return err


def compute_overall_err(seq_err: List[List[float]]) -> Tuple[float, float]:
    """(t_err %, r_err deg/100m)"""
    if not seq_err:
        return 0.0, 0.0
    t_err = 0.0
    r_err = 0.0
    for item in seq_err:
        r_err += item[1]
        t_err += item[2]
    ave_t_err = t_err / len(seq_err)
    ave_r_err = r_err / len(seq_err)
    return ave_t_err * 100, ave_r_err / np.pi * 180 * 100


def compute_rpe(poses_gt: Dict[int, np.ndarray], poses_result: Dict[int, np.ndarray]) -> Tuple[float, float]:
    """(m, deg) averaged over consecutive frame pairs."""
    trans_errors = []
    rot_errors = []
    for i in list(poses_result.keys())[:-1]:
        gt1 = poses_gt[i]
        gt2 = poses_gt[i + 1]
        gt_rel = np.linalg.inv(gt1) @ gt2
        pred1 = poses_result[i]
        pred2 = poses_result[i + 1]
        pred_rel = np.linalg.inv(pred1) @ pred2
        rel_err = np.linalg.inv(gt_rel) @ pred_rel
        trans_errors.append(translation_error(rel_err))
        rot_errors.append(rotation_error(rel_err))
    return float(np.mean(np.asarray(trans_errors))), float(np.mean(np.asarray(rot_errors)) / np.pi * 180)


def align(model: np.ndarray, data: np.ndarray, with_scale: bool = True) -> Tuple[float, np.ndarray, np.ndarray]:
    """Horn closed form on 3xn point sets: ``data ~ s * rot @ model + trans``."""
    model_zerocentered = model - model.mean(1, keepdims=True)
    data_zerocentered = data - data.mean(1, keepdims=True)
    w = np.zeros((3, 3))
    for column in range(model.shape[1]):
        w += np.outer(model_zerocentered[:, column], data_zerocentered[:, column])
    u, _, vh = np.linalg.svd(w.transpose())
    s_fix = np.identity(3)
    if np.linalg.det(u) * np.linalg.det(vh) < 0:
        s_fix[2, 2] = -1
    rot = u @ s_fix @ vh
    scale = 1.0
    if with_scale:
        rotmodel = rot @ model_zerocentered
        dots = 0.0
        norms = 0.0
        for column in range(data_zerocentered.shape[1]):
            dots += float(np.dot(data_zerocentered[:, column], rotmodel[:, column]))
            normi = np.linalg.norm(model_zerocentered[:, column])
            norms += normi * normi
        scale = dots / norms
    trans = data.mean(1) - scale * rot @ model.mean(1)
    return scale, rot, trans


def apply(poses: Dict[int, np.ndarray], scale: float, rot: np.ndarray, trans: np.ndarray) -> Dict[int, np.ndarray]:
    out = {}
    for i, pose in poses.items():
        p = np.eye(4)
        p[:3, :3] = rot @ pose[:3, :3]
        p[:3, 3] = scale * rot @ pose[:3, 3] + trans
        out[i] = p
    return out


def compute_ate(poses_gt: Dict[int, np.ndarray], poses_result: Dict[int, np.ndarray]) -> float:
    errors = []
    for i in poses_result:
        d = poses_result[i][:3, 3] - poses_gt[i][:3, 3]
        errors.append(np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2))
    return float(np.sqrt(np.mean(np.asarray(errors) ** 2)))


def evaluate(gt: np.ndarray, pred: np.ndarray, mode: str = "7dof") -> Dict[str, float]:
    """All five metrics for ``(n, 4, 4)`` stacks."""
    poses_gt = poses_from_matrices(gt)
    poses_result = poses_from_matrices(pred)
    if mode != "none":
        model = np.stack([poses_result[i][:3, 3] for i in sorted(poses_result)], axis=1)
        data = np.stack([poses_gt[i][:3, 3] for i in sorted(poses_gt)], axis=1)
        scale, rot, trans = align(model, data, with_scale=mode == "7dof")
        poses_result = apply(poses_result, scale, rot, trans)
    t_err, r_err = compute_overall_err(calc_sequence_errors(poses_gt, poses_result))
    rpe_t, rpe_r = compute_rpe(poses_gt, poses_result)
    return {
        "t_err": t_err,
        "r_err": r_err,
        "ate": compute_ate(poses_gt, poses_result),
        "rpe_t": rpe_t,
        "rpe_r": rpe_r,
    }
