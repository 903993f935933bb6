"""Temporal body fitting: estimate shape, per-frame pose, and translation
from a 2D keypoint track by minimizing

    L = sum_t ( L_data(t) + alpha1 * L_prior(t) ) + alpha2 * sum_t L_temporal(t)

with a confidence-weighted Geman-McClure reprojection data term, pose /
bend / shape priors, and a temporal term on translations and skinned
vertex positions. Optimization is staged: (A) per-frame translation and
root orientation against torso joints, (B) per-frame full pose, (C) one
joint refinement over all frames with the temporal term and the shared
shape vector. Every stage runs damped Gauss-Newton with backtracking, so
accepted steps never increase the stage objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bodymodel import HINGES, BodyModel, BodyParams, pose_frame
from .geometry import Camera
from .keypoints import KeypointTrack

TORSO_STAGE_JOINTS = (
    "pelvis", "spine", "neck", "l_shoulder", "r_shoulder", "l_hip", "r_hip",
)

# depth below which a keypoint counts as behind the camera; the data term
# switches to a linear push-forward barrier there
_Z_MIN = 0.05


@dataclass(frozen=True)
class FitConfig:
    alpha1: float = 1.0
    alpha2: float = 5.0
    rho: float = 10.0  # robust loss scale, pixels
    w_pose: float = 0.5
    w_bend: float = 2.0
    w_shape: float = 0.1
    max_iterations: int = 40
    max_iterations_root: int = 30
    max_iterations_joint: int = 30
    tol: float = 1e-8  # relative objective decrease per accepted step
    stages: tuple[str, ...] = ("root", "pose", "joint")
    # prior annealing: per-frame stages run with alpha1 scaled up so poses
    # stay sane before the temporal term is available to regularize
    stage_prior_scale: dict = field(
        default_factory=lambda: {"root": 10.0, "pose": 10.0, "joint": 1.0})
    fd_gradient: bool = False  # debugging fallback for gradient()
    # pose-prior center; None selects the model's natural stance (arms down)
    theta_rest: np.ndarray | None = None

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha weights must be non-negative")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    def rest_pose(self, model: "BodyModel") -> np.ndarray:
        if self.theta_rest is not None:
            arr = np.asarray(self.theta_rest, dtype=np.float64)
            if arr.shape != (model.num_joints, 3):
                raise ValueError("theta_rest must be (K, 3)")
            return arr
        return natural_rest_pose(model)


def natural_rest_pose(model: BodyModel) -> np.ndarray:
    """Relaxed standing stance: arms lowered from the T-pose, elbows eased.

    Centering the pose prior here, rather than on the skinning rest pose,
    keeps the prior from dragging everyday motion toward a T-pose.
    """
    theta = np.zeros((model.num_joints, 3))
    names = {n: i for i, n in enumerate(model.joint_names)}
    for name, comp, val in (
        ("l_shoulder", 2, -1.15), ("r_shoulder", 2, 1.15),
        ("l_elbow", 1, -0.25), ("r_elbow", 1, 0.25),
    ):
        if name in names:
            theta[names[name], comp] = val
    return theta


@dataclass
class FitReport:
    stage_traces: dict = field(default_factory=dict)  # stage -> objective trace
    final_terms: dict = field(default_factory=dict)
    per_frame_reproj: list = field(default_factory=list)  # mean px per frame
    converged: bool = True
    warnings: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "stage_traces": self.stage_traces,
            "final_terms": self.final_terms,
            "per_frame_reproj": self.per_frame_reproj,
            "converged": self.converged,
            "warnings": self.warnings,
            "notes": self.notes,
        }


class FitError(RuntimeError):
    pass


def _cameras_per_frame(cameras, n):
    if isinstance(cameras, Camera):
        return [cameras] * n
    cams = list(cameras)
    if len(cams) != n:
        raise ValueError(f"need a camera for each of {n} frames, got {len(cams)}")
    return cams


def _gm(e2, rho):
    """Geman-McClure on squared residual norm; saturates at rho^2."""
    r2 = rho * rho
    return r2 * e2 / (e2 + r2)


def _project_with_jac(cam: Camera, x, dx=None):
    """Project one 3D point; optionally chain through dx (P, 3)."""
    q = cam.rotation @ x + cam.translation
    z = q[2]
    if z < _Z_MIN:
        return None, z, (cam.rotation[2] @ dx.T if dx is not None else None)
    u = np.array([cam.fx * q[0] / z + cam.cx, cam.fy * q[1] / z + cam.cy])
    if dx is None:
        return u, z, None
    dpi = np.array([
        [cam.fx / z, 0.0, -cam.fx * q[0] / (z * z)],
        [0.0, cam.fy / z, -cam.fy * q[1] / (z * z)],
    ]) @ cam.rotation
    return u, z, dx @ dpi.T  # (P, 2)


def _frame_terms(model, cfg, pf, cam, obs_pos, obs_conf, kp_subset, with_jac):
    """Data + prior residuals for one frame.

    Returns (residuals, jacobian over the frame layout [theta, T, beta],
    data_term_value, prior_term_value, reproj_errors).
    """
    kp = pf.keypoints(model)
    dkp = pf.dkeypoints(model) if with_jac else None
    rows = []
    jrows = []
    l_data = 0.0
    reproj = []
    rho = cfg.rho
    for j in kp_subset:
        c = obs_conf[j]
        if c <= 0.0:
            continue
        u, z, du = _project_with_jac(cam, kp[j], dkp[:, j, :] if with_jac else None)
        if u is None:
            # behind the camera: linear barrier pulling the joint forward
            pen = 1.0 + (_Z_MIN - z)
            l_data += c * rho * rho * pen
            rows.append(np.array([np.sqrt(c) * rho * np.sqrt(pen)]))
            if with_jac:
                dz = du  # (P,) depth derivative
                jrows.append(
                    (-np.sqrt(c) * rho * 0.5 / np.sqrt(pen) * dz)[:, None].T
                )
            reproj.append(np.inf)
            continue
        e = u - obs_pos[j]
        e2 = float(e @ e)
        l_data += c * _gm(e2, rho)
        reproj.append(np.sqrt(e2))
        w = rho / np.sqrt(e2 + rho * rho)
        rows.append(np.sqrt(c) * w * e)
        if with_jac:
            # d(w e)/de = w (I - e e^T / (e2 + rho^2))
            M = w * (np.eye(2) - np.outer(e, e) / (e2 + rho * rho))
            jrows.append(np.sqrt(c) * (M @ du.T))

    return rows, jrows, l_data, reproj


def _prior_terms(model, cfg, beta, theta_t, with_jac, theta_rest):
    """Prior residuals over the frame layout [theta (3K), T (3), beta (S)]."""
    K = model.num_joints
    S = model.num_shape_dirs
    F = 3 * K + 3
    a1 = cfg.alpha1
    rows = []
    jrows = []
    l_prior = 0.0

    # global (root) orientation carries no prior: only body pose is penalized
    th = (theta_t - theta_rest).reshape(-1)[3:]
    l_prior += cfg.w_pose * float(th @ th)
    sp = np.sqrt(a1 * cfg.w_pose)
    rows.append(sp * th)
    if with_jac:
        J = np.zeros((3 * (K - 1), F + S))
        J[:, 3: 3 * K] = np.eye(3 * (K - 1)) * sp
        jrows.append(J)

    for joint, comp, sign in HINGES:
        ang = sign * theta_t[joint, comp]
        l_prior += cfg.w_bend * float(np.exp(ang))
        sb = np.sqrt(a1 * cfg.w_bend)
        rows.append(np.array([sb * np.exp(ang / 2.0)]))
        if with_jac:
            J = np.zeros((1, F + S))
            J[0, 3 * joint + comp] = sb * np.exp(ang / 2.0) * sign / 2.0
            jrows.append(J)

    l_prior += cfg.w_shape * float(beta @ beta)
    ss = np.sqrt(a1 * cfg.w_shape)
    rows.append(ss * beta)
    if with_jac:
        J = np.zeros((S, F + S))
        J[:, F:] = np.eye(S) * ss
        jrows.append(J)

    return rows, jrows, l_prior


def objective(model: BodyModel, params: BodyParams, track: KeypointTrack,
              cameras, config: FitConfig):
    """Evaluate the full objective; returns (total, per-term breakdown).

    Breakdown keys: data, prior, temporal, total, per_frame_data.
    """
    n = params.num_frames
    if track.num_frames != n:
        raise ValueError("track length must match params frame count")
    cams = _cameras_per_frame(cameras, n)
    need_verts = config.alpha2 > 0
    pos = track.positions_array()
    conf = track.confidence_array()
    kp_all = range(len(model.keypoint_map))

    l_data = 0.0
    l_prior = 0.0
    l_temporal = 0.0
    per_frame_data = []
    verts_prev = None
    rest = config.rest_pose(model)
    for t in range(n):
        pf = pose_frame(model, params.beta, params.theta[t], params.translation[t],
                        with_vertices=need_verts)
        rows, _, ld, _ = _frame_terms(model, config, pf, cams[t], pos[t], conf[t],
                                      kp_all, with_jac=False)
        _, _, lp = _prior_terms(model, config, params.beta, params.theta[t],
                                False, rest)
        if not np.isfinite(ld):
            raise FitError(f"non-finite data term at frame {t}")
        if not np.isfinite(lp):
            raise FitError(f"non-finite prior term at frame {t}")
        l_data += ld
        l_prior += lp
        per_frame_data.append(ld)
        if need_verts and verts_prev is not None:
            dT = params.translation[t] - params.translation[t - 1]
            dv = pf.vertices - verts_prev
            lt = float(dT @ dT) + float((dv * dv).sum()) / model.num_vertices
            if not np.isfinite(lt):
                raise FitError(f"non-finite temporal term at frames {t-1},{t}")
            l_temporal += lt
        if need_verts:
            verts_prev = pf.vertices

    total = l_data + config.alpha1 * l_prior + config.alpha2 * l_temporal
    return total, {
        "data": l_data,
        "prior": l_prior,
        "temporal": l_temporal,
        "total": total,
        "per_frame_data": per_frame_data,
    }


def _flatten(params: BodyParams) -> np.ndarray:
    n = params.num_frames
    per = np.concatenate(
        [np.concatenate([params.theta[t].reshape(-1), params.translation[t]])
         for t in range(n)]
    )
    return np.concatenate([per, params.beta])


def _unflatten(x: np.ndarray, model: BodyModel, n: int) -> BodyParams:
    K = model.num_joints
    S = model.num_shape_dirs
    F = 3 * K + 3
    theta = np.empty((n, K, 3))
    trans = np.empty((n, 3))
    for t in range(n):
        seg = x[t * F:(t + 1) * F]
        theta[t] = seg[: 3 * K].reshape(K, 3)
        trans[t] = seg[3 * K:]
    return BodyParams(x[n * F:].copy(), theta, trans)


def gradient(model: BodyModel, params: BodyParams, track: KeypointTrack,
             cameras, config: FitConfig) -> np.ndarray:
    """Analytic gradient of the objective over the flattened layout
    [frame0 (theta, T), frame1, ..., beta]. Matches central differences.
    """
    if config.fd_gradient:
        return _fd_gradient(model, params, track, cameras, config)
    n = params.num_frames
    cams = _cameras_per_frame(cameras, n)
    K = model.num_joints
    S = model.num_shape_dirs
    F = 3 * K + 3
    P = n * F + S
    g = np.zeros(P)
    pos = track.positions_array()
    conf = track.confidence_array()
    kp_all = range(len(model.keypoint_map))
    need_verts = config.alpha2 > 0
    rest = config.rest_pose(model)

    frames = []
    for t in range(n):
        pf = pose_frame(model, params.beta, params.theta[t], params.translation[t],
                        with_vertices=need_verts, with_jacobians=True)
        rows, jrows, _, _ = _frame_terms(model, config, pf, cams[t], pos[t],
                                         conf[t], kp_all, with_jac=True)
        prows, pjrows, _ = _prior_terms(model, config, params.beta,
                                        params.theta[t], True, rest)
        rows += prows
        jrows += pjrows
        gf = np.zeros(F + S)
        for r, J in zip(rows, jrows):
            gf += 2.0 * (J.T @ r)
        g[t * F:(t + 1) * F] += gf[:F]
        g[n * F:] += gf[F:]
        frames.append(pf)

    if need_verts:
        c = config.alpha2
        V = model.num_vertices
        for t in range(n - 1):
            dT = params.translation[t + 1] - params.translation[t]
            g[t * F + 3 * K: t * F + 3 * K + 3] += -2.0 * c * dT
            g[(t + 1) * F + 3 * K: (t + 1) * F + 3 * K + 3] += 2.0 * c * dT
            dv = (frames[t + 1].vertices - frames[t].vertices).reshape(-1)
            At = frames[t].dvertices.reshape(F + S, -1)
            At1 = frames[t + 1].dvertices.reshape(F + S, -1)
            gt = -2.0 * (c / V) * (At @ dv)
            gt1 = 2.0 * (c / V) * (At1 @ dv)
            g[t * F:(t + 1) * F] += gt[:F]
            g[(t + 1) * F:(t + 2) * F] += gt1[:F]
            g[n * F:] += gt1[F:] + gt[F:]
    return g


def _fd_gradient(model, params, track, cameras, config, h=1e-6):
    x0 = _flatten(params)
    n = params.num_frames
    g = np.zeros(len(x0))
    for i in range(len(x0)):
        xp = x0.copy(); xp[i] += h
        xm = x0.copy(); xm[i] -= h
        fp, _ = objective(model, _unflatten(xp, model, n), track, cameras, config)
        fm, _ = objective(model, _unflatten(xm, model, n), track, cameras, config)
        g[i] = (fp - fm) / (2 * h)
    return g


# --- Frame-wise residual assembly for the solvers ------------------------

def _frame_block(model, cfg, beta, theta_t, trans_t, cam, pos_t, conf_t,
                 kp_subset, need_verts, theta_rest):
    """Residual vector and Jacobian for one frame over [theta, T, beta]."""
    pf = pose_frame(model, beta, theta_t, trans_t,
                    with_vertices=need_verts, with_jacobians=True)
    rows, jrows, _, _ = _frame_terms(model, cfg, pf, cam, pos_t, conf_t,
                                     kp_subset, with_jac=True)
    prows, pjrows, _ = _prior_terms(model, cfg, beta, theta_t, True, theta_rest)
    rows += prows
    jrows += pjrows
    r = np.concatenate(rows) if rows else np.zeros(0)
    J = np.vstack(jrows) if jrows else np.zeros((0, model.num_frame_params
                                                 + model.num_shape_dirs))
    return r, J, pf


def _solve_damped(H, g, lam):
    d = np.diag(H)
    # diagonal scaling with an absolute floor so near-flat directions
    # cannot produce arbitrarily long steps
    D = np.maximum(d, 1e-3 * max(d.max(), 1e-12))
    try:
        return np.linalg.solve(H + lam * np.diag(D), -g)
    except np.linalg.LinAlgError:
        return np.linalg.solve(H + (lam * D.max() + 1e-6) * np.eye(len(g)), -g)


class _LMState:
    """Gain-ratio Levenberg-Marquardt damping (Nielsen's update)."""

    def __init__(self, lam=1e-2):
        self.lam = lam
        self.nu = 2.0

    def step(self, H, g, f, try_f):
        """Run one accept/reject loop; try_f(delta) -> objective or inf.

        Returns (delta, f_new, accepted).
        """
        for _ in range(16):
            delta = _solve_damped(H, g, self.lam)
            pred = -(2.0 * g @ delta + delta @ (H @ delta))
            fn = try_f(delta)
            if np.isfinite(fn) and fn < f and pred > 0:
                rho = (f - fn) / pred
                self.lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                self.lam = max(self.lam, 1e-10)
                self.nu = 2.0
                return delta, fn, True
            self.lam *= self.nu
            self.nu = min(self.nu * 2.0, 64.0)
            if self.lam > 1e12:
                break
        return None, f, False


def _per_frame_stage(model, cfg, params, track, cams, kp_subset, active,
                     max_iter, tol):
    """Optimize each frame independently over the active per-frame coords."""
    n = params.num_frames
    pos = track.positions_array()
    conf = track.confidence_array()
    beta = params.beta
    theta = params.theta.copy()
    trans = params.translation.copy()
    traces = []
    rest = cfg.rest_pose(model)
    F = model.num_frame_params

    for t in range(n):
        x = np.concatenate([theta[t].reshape(-1), trans[t]])

        def unpack(xv):
            return xv[: 3 * model.num_joints].reshape(-1, 3), xv[3 * model.num_joints:]

        def fval(xv):
            th, tr = unpack(xv)
            pf = pose_frame(model, beta, th, tr)
            rw, _, ld, _ = _frame_terms(model, cfg, pf, cams[t], pos[t], conf[t],
                                        kp_subset, with_jac=False)
            _, _, lp = _prior_terms(model, cfg, beta, th, False, rest)
            return ld + cfg.alpha1 * lp

        f = fval(x)
        trace = [f]
        lm = _LMState()
        for _ in range(max_iter):
            th, tr = unpack(x)
            r, J, _ = _frame_block(model, cfg, beta, th, tr, cams[t],
                                   pos[t], conf[t], kp_subset, False, rest)
            Ja = J[:, active]
            H = Ja.T @ Ja
            gvec = Ja.T @ r

            def try_f(delta):
                xn = x.copy()
                xn[active] += delta
                return fval(xn)

            delta, fn, accepted = lm.step(H, gvec, f, try_f)
            if not accepted:
                break
            x = x.copy()
            x[active] += delta
            rel = (f - fn) / max(f, 1e-12)
            f = fn
            trace.append(f)
            if rel < tol:
                break
        theta[t], trans[t] = unpack(x)
        traces.append(trace)
    return BodyParams(beta, theta, trans), traces


def _joint_stage(model, cfg, params, track, cams, max_iter, tol):
    """One Gauss-Newton solve over all frames plus the shared shape."""
    n = params.num_frames
    K = model.num_joints
    S = model.num_shape_dirs
    F = 3 * K + 3
    P = n * F + S
    V = model.num_vertices
    pos = track.positions_array()
    conf = track.confidence_array()
    kp_all = range(len(model.keypoint_map))
    bslice = np.arange(n * F, P)

    rest = cfg.rest_pose(model)
    cur = params
    f, _ = objective(model, cur, track, cams, cfg)
    trace = [f]
    lm = _LMState()
    for _it in range(max_iter):
        H = np.zeros((P, P))
        g = np.zeros(P)
        frames = []
        for t in range(n):
            r, J, pf = _frame_block(model, cfg, cur.beta, cur.theta[t],
                                    cur.translation[t], cams[t], pos[t],
                                    conf[t], kp_all, cfg.alpha2 > 0, rest)
            idx = np.concatenate([np.arange(t * F, (t + 1) * F), bslice])
            Ht = J.T @ J
            H[np.ix_(idx, idx)] += Ht
            g[idx] += J.T @ r
            frames.append(pf)
        if cfg.alpha2 > 0:
            c = cfg.alpha2
            for t in range(n - 1):
                # translation smoothness
                dT = cur.translation[t + 1] - cur.translation[t]
                ia = np.arange(t * F + 3 * K, t * F + 3 * K + 3)
                ib = ia + F
                H[np.ix_(ia, ia)] += c * np.eye(3)
                H[np.ix_(ib, ib)] += c * np.eye(3)
                H[np.ix_(ia, ib)] -= c * np.eye(3)
                H[np.ix_(ib, ia)] -= c * np.eye(3)
                g[ia] += -c * dT
                g[ib] += c * dT
                # vertex smoothness: rows sqrt(c/V) (v_{t+1} - v_t)
                dv = (frames[t + 1].vertices - frames[t].vertices).reshape(-1)
                At = frames[t].dvertices.reshape(F + S, -1)
                At1 = frames[t + 1].dvertices.reshape(F + S, -1)
                s = c / V
                ja = np.concatenate([np.arange(t * F, (t + 1) * F), bslice])
                jb = np.concatenate([np.arange((t + 1) * F, (t + 2) * F), bslice])
                Maa = s * (At @ At.T)
                Mbb = s * (At1 @ At1.T)
                Mab = -s * (At @ At1.T)
                H[np.ix_(ja, ja)] += Maa
                H[np.ix_(jb, jb)] += Mbb
                H[np.ix_(ja, jb)] += Mab
                H[np.ix_(jb, ja)] += Mab.T
                g[ja] += -s * (At @ dv)
                g[jb] += s * (At1 @ dv)

        x = _flatten(cur)

        def try_f(delta):
            cand = _unflatten(x + delta, model, n)
            try:
                fn, _ = objective(model, cand, track, cams, cfg)
            except FitError:
                return np.inf
            return fn

        delta, fn, accepted = lm.step(H, g, f, try_f)
        if not accepted:
            return cur, trace, True  # converged: no further progress possible
        cur = _unflatten(x + delta, model, n)
        rel = (f - fn) / max(f, 1e-12)
        f = fn
        trace.append(f)
        if rel < tol:
            return cur, trace, True
    return cur, trace, False  # stopped on the iteration cap


def initial_params(model: BodyModel, track: KeypointTrack, cameras) -> BodyParams:
    """Rest pose with per-frame translation from a torso-size depth heuristic."""
    n = track.num_frames
    cams = _cameras_per_frame(cameras, n)
    rest = model.rest_joints(np.zeros(model.num_shape_dirs))
    name_to_model = {model.joint_names[m]: d
                     for d, m in enumerate(model.keypoint_map)}

    def det_idx(names):
        return [name_to_model[nm] for nm in names if nm in name_to_model]

    sh = det_idx(["l_shoulder", "r_shoulder"])
    hp = det_idx(["l_hip", "r_hip"])
    if not sh or not hp:
        raise FitError("keypoint map must cover shoulders and hips for init")
    sh_m = [model.keypoint_map[d] for d in sh]
    hp_m = [model.keypoint_map[d] for d in hp]
    torso_3d = float(np.linalg.norm(rest[sh_m].mean(0) - rest[hp_m].mean(0)))
    mid_rest = 0.5 * (rest[sh_m].mean(0) + rest[hp_m].mean(0))

    trans = np.zeros((n, 3))
    filled = np.zeros(n, dtype=bool)
    prev = None
    for t in range(n):
        p = track.frames[t].positions
        c = track.frames[t].confidence
        ok = all(c[i] > 0 for i in sh + hp)
        if not ok:
            if prev is not None:
                trans[t] = prev
                filled[t] = True
            continue
        sh_px = p[sh].mean(0)
        hp_px = p[hp].mean(0)
        l2d = float(np.linalg.norm(sh_px - hp_px))
        cam = cams[t]
        z = cam.fy * torso_3d / max(l2d, 1e-6)
        mid_px = 0.5 * (sh_px + hp_px)
        target_cam = np.array([
            (mid_px[0] - cam.cx) * z / cam.fx,
            (mid_px[1] - cam.cy) * z / cam.fy,
            z,
        ])
        target_world = cam.cam_to_world(target_cam[None, :])[0]
        trans[t] = target_world - mid_rest
        filled[t] = True
        prev = trans[t]
    if prev is None:
        raise FitError("no frame has confident torso keypoints for init")
    # backfill leading frames that had no torso detections
    for t in range(n - 2, -1, -1):
        if not filled[t]:
            trans[t] = trans[t + 1]
    return BodyParams(np.zeros(model.num_shape_dirs),
                      np.zeros((n, model.num_joints, 3)), trans)


def fit(model: BodyModel, track: KeypointTrack, cameras, config: FitConfig,
        init: BodyParams | None = None):
    """Run the staged optimization; returns (BodyParams, FitReport)."""
    n = track.num_frames
    cams = _cameras_per_frame(cameras, n)
    params = init if init is not None else initial_params(model, track, cams)
    if params.num_frames != n:
        raise ValueError("init frame count does not match track")
    report = FitReport()
    report.notes["divergences"] = [
        "interpenetration prior omitted",
        "pose-dependent blend shapes omitted",
    ]
    K = model.num_joints

    name_to_det = {model.joint_names[m]: d
                   for d, m in enumerate(model.keypoint_map)}
    torso = [name_to_det[nm] for nm in TORSO_STAGE_JOINTS if nm in name_to_det]

    for stage in config.stages:
        scale = config.stage_prior_scale.get(stage, 1.0)
        cfg_s = replace(config, alpha1=config.alpha1 * scale) \
            if scale != 1.0 else config
        if stage == "root":
            active = np.concatenate([np.arange(3), 3 * K + np.arange(3)])
            params, traces = _per_frame_stage(
                model, cfg_s, params, track, cams, torso, active,
                config.max_iterations_root, config.tol)
            report.stage_traces["root"] = traces
        elif stage == "pose":
            active = np.arange(3 * K + 3)
            kp_all = list(range(len(model.keypoint_map)))
            params, traces = _per_frame_stage(
                model, cfg_s, params, track, cams, kp_all, active,
                config.max_iterations, config.tol)
            report.stage_traces["pose"] = traces
        elif stage == "joint":
            params, trace, ok = _joint_stage(
                model, cfg_s, params, track, cams,
                config.max_iterations_joint, config.tol)
            report.stage_traces["joint"] = trace
            if not ok:
                report.converged = False
                report.warnings.append("joint stage hit iteration limit")
        else:
            raise ValueError(f"unknown stage {stage!r}")

    total, terms = objective(model, params, track, cams, config)
    report.final_terms = {k: v for k, v in terms.items() if k != "per_frame_data"}

    pos = track.positions_array()
    conf = track.confidence_array()
    for t in range(n):
        pf = pose_frame(model, params.beta, params.theta[t], params.translation[t])
        kp = pf.keypoints(model)
        errs = []
        for j in range(len(kp)):
            if conf[t, j] <= 0:
                continue
            u, z, _ = _project_with_jac(cams[t], kp[j])
            errs.append(np.inf if u is None else float(np.linalg.norm(u - pos[t, j])))
        report.per_frame_reproj.append(float(np.mean(errs)) if errs else 0.0)
    return params, report
