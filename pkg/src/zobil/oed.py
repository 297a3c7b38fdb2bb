"""Optimal experimental design on a small parallel-beam tomography model.

A pool of projection angles theta_i = (i-1) pi / n is available; each
evaluation draws k of them without replacement from a softmax policy,
measures d = K_J x + Z, and reconstructs x through the nonnegativity-
constrained inner problem with identity Tikhonov matrix and smoothed 2-D
total variation.  The upper-level parameter stacks the three(log10)
regularization weights, box-constrained to [-7, 7]^3, with the n
unconstrained policy logits.
"""

import numpy as np

from . import lower_level
from .denoise import BOX_HI, BOX_LO, ZeroTruthNorm
from .lower_level import LowerProblem
from .rng import NoiseSample, substream

NOISE_STD = 0.01
N_REG = 3  # leading coordinates carrying (log10 lam, log10 tau, log10 nu)
REG_EVAL_BOUND = 2.5  # |log10| clamp applied to evaluated regularization weights


def angle_pool(n_angles: int) -> np.ndarray:
    return (np.arange(n_angles) * np.pi) / n_angles


def radon_block(img_side: int, angle: float) -> np.ndarray:
    """Line-integral rows for one angle: (n_det, img_side^2), n_det = img_side.

    Rotate-and-sum discretization: every pixel center is projected onto
    the detector axis at the given angle and its value is split linearly
    between the two nearest of img_side bins spanning [-1/2, 1/2].  At
    angle 0 each detector bin is exactly one image column sum.  Mass
    falling outside the detector span (corner pixels under rotation) is
    truncated, so totals are preserved for images supported in the
    inscribed disk.
    """
    if not (0 <= angle < np.pi + 1e-12):
        raise ValueError("angle must lie in [0, pi)")
    n = img_side
    centers = (np.arange(n) + 0.5) / n - 0.5
    cx = np.tile(centers, n)            # column coordinate, fast index
    cy = np.repeat(centers, n)          # row coordinate, slow index
    t = cx * np.cos(angle) + cy * np.sin(angle)
    u = (t + 0.5) * n - 0.5
    i0 = np.floor(u).astype(int)
    w = u - i0
    block = np.zeros((n, n * n))
    cols = np.arange(n * n)
    ok0 = (i0 >= 0) & (i0 <= n - 1)
    ok1 = (i0 + 1 >= 0) & (i0 + 1 <= n - 1)
    block[i0[ok0], cols[ok0]] += 1.0 - w[ok0]
    block[i0[ok1] + 1, cols[ok1]] += w[ok1]
    return block


def _triangle_from(rng: np.random.Generator, img_side: int) -> np.ndarray:
    """Triangle raster drawn from an existing generator (CRN-friendly)."""
    s_min = max(0.15, 2.0 / img_side)
    s = rng.uniform(s_min, 0.33)
    reach = 0.45 - s
    rad = reach * np.sqrt(rng.uniform())
    phi = rng.uniform(0.0, 2.0 * np.pi)
    c = np.array([rad * np.cos(phi), rad * np.sin(phi)])
    gray = rng.uniform(0.5, 1.0)

    angles = np.array([np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3])
    verts = c + s * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    centers = (np.arange(img_side) + 0.5) / img_side - 0.5
    px, py = np.meshgrid(centers, centers)  # py varies along rows
    inside = np.ones((img_side, img_side), dtype=bool)
    for i in range(3):
        a, b = verts[i], verts[(i + 1) % 3]
        cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
        inside &= cross >= 0
    return gray * inside.astype(float)


def generate_triangle(img_side: int, seed: int, sub: tuple = ()) -> np.ndarray:
    """Random filled triangle image with values in {0} u [0.5, 1].

    Fixed (equilateral, upright) orientation; uniformly random scale and
    position keeping the triangle inside the inscribed disk, and a gray
    level uniform on [0.5, 1].
    """
    if img_side < 8:
        raise ValueError("img_side must be >= 8")
    return _triangle_from(substream(seed, *sub), img_side)


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax."""
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def gumbel_top_k(p, k: int, gumbel: np.ndarray) -> np.ndarray:
    """Top-k of log p + gumbel; the keys carry the common random numbers."""
    p = np.asarray(p, dtype=float)
    if k > p.size:
        raise ValueError("k exceeds the number of candidates")
    if np.count_nonzero(p > 0) < k:
        raise ValueError("fewer than k candidates have positive probability")
    with np.errstate(divide="ignore"):
        scores = np.where(p > 0, np.log(p), -np.inf) + gumbel
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def sample_without_replacement(p, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct indices drawn without replacement from the law p.

    Perturbed-key (Gumbel top-k) scheme: add i.i.d. Gumbel noise to log p
    and keep the k largest scores.  Sharing ``rng`` state across paired
    calls gives common random numbers: equal probabilities then select
    equal index sets.
    """
    p = np.asarray(p, dtype=float)
    return gumbel_top_k(p, k, rng.gumbel(size=p.size))


def tv2_value(img, nu: float) -> float:
    """Isotropic smoothed TV of a 2-D image (forward differences)."""
    e_r = np.diff(img, axis=0)
    e_c = np.diff(img, axis=1)
    sq = np.full(img.shape, nu * nu)
    sq[:-1, :] += e_r * e_r
    sq[:, :-1] += e_c * e_c
    return float(np.sum(np.sqrt(sq)))


def tv2_grad(img, nu) -> np.ndarray:
    """Exact gradient of tv2_value.

    Accepts one image (s, s) or a stack (..., s, s); ``nu`` may then be an
    array broadcasting against the leading axes.
    """
    img = np.asarray(img, dtype=float)
    nu_sq = np.asarray(nu, dtype=float) ** 2
    if nu_sq.ndim:
        nu_sq = nu_sq.reshape(nu_sq.shape + (1, 1))
    e_r = np.diff(img, axis=-2)
    e_c = np.diff(img, axis=-1)
    sq = np.broadcast_to(nu_sq, img.shape).copy()
    sq[..., :-1, :] += e_r * e_r
    sq[..., :, :-1] += e_c * e_c
    root = np.sqrt(sq)
    w_r = e_r / root[..., :-1, :]
    w_c = e_c / root[..., :, :-1]
    g = np.zeros_like(img)
    g[..., :-1, :] -= w_r
    g[..., 1:, :] += w_r
    g[..., :, :-1] -= w_c
    g[..., :, 1:] += w_c
    return g


def _tv2_operator_norm(img_side: int, iters: int = 200) -> float:
    """||D^T D|| of the 2-D difference operator, by power iteration."""
    w = np.ones((img_side, img_side))
    w[::2, 1::2] = -1.0
    w[1::2, ::2] = -1.0
    lam = 0.0
    for _ in range(iters):
        e_r = np.diff(w, axis=0)
        e_c = np.diff(w, axis=1)
        out = np.zeros_like(w)
        out[:-1, :] -= e_r
        out[1:, :] += e_r
        out[:, :-1] -= e_c
        out[:, 1:] += e_c
        lam = float(np.sqrt(np.sum(out * out)))
        w = out / lam
    return lam


class OEDInstance:
    """Precomputed forward blocks and constants for one configuration."""

    def __init__(self, img_side: int = 16, n_angles: int = 16, k_pick: int = 3,
                 reg_eval_bound: float = REG_EVAL_BOUND):
        if not (1 <= k_pick <= n_angles):
            raise ValueError("need 1 <= k_pick <= n_angles")
        if img_side < 8:
            raise ValueError("img_side must be >= 8")
        self.img_side = img_side
        self.n_angles = n_angles
        self.k_pick = k_pick
        self.n_pix = img_side * img_side
        self.n_det = img_side
        self.reg_eval_bound = reg_eval_bound
        self.angles = angle_pool(n_angles)
        self.blocks = [radon_block(img_side, a) for a in self.angles]
        self.block_norm_sq = [float(np.linalg.norm(b, 2) ** 2) for b in self.blocks]
        self.dtd2_norm = _tv2_operator_norm(img_side)

    @property
    def dim(self) -> int:
        """Upper-level dimension: 3 regularization weights + n logits."""
        return N_REG + self.n_angles

    def split_params(self, y) -> tuple:
        """((lam, tau, nu), logits) with the regularization part clamped.

        Evaluated log-weights are clamped to +-reg_eval_bound: smoothing
        probes wander far outside the iterate box, and inner solves below
        lam ~ 1e-3 cost millions of certified iterations.  The loss is
        simply constant in the clamped coordinates beyond the bound.
        """
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dim,):
            raise ValueError(f"y must have length {self.dim}")
        reg = np.clip(y[:N_REG], -self.reg_eval_bound, self.reg_eval_bound)
        lam, tau, nu = 10.0 ** reg
        return (float(lam), float(tau), float(nu)), y[N_REG:]

    def assemble_forward(self, J) -> np.ndarray:
        """Stack the selected angle blocks in J order: (k * n_det, n_pix)."""
        return np.concatenate([self.blocks[j] for j in J], axis=0)

    def lower_problem(self, y, J) -> LowerProblem:
        (lam, tau, nu), _ = self.split_params(y)
        mu = lam  # L = Id, K_J rank deficient: no extra certified curvature
        L = sum(self.block_norm_sq[j] for j in J) + tau * self.dtd2_norm / nu + lam
        side = self.img_side

        def grad(x, yy, data):
            tv = tv2_grad(x.reshape(side, side), nu).ravel()
            return data["Kt"] @ (data["K"] @ x) - data["Ktd"] + lam * x + tau * tv

        def value(x, yy, data):
            r = data["K"] @ x - data["d"]
            return (0.5 * float(np.dot(r, r)) + 0.5 * lam * float(np.dot(x, x))
                    + tau * tv2_value(x.reshape(side, side), nu))

        return LowerProblem(grad=grad, value=value, mu=mu, L_smooth=L,
                            constraint="nonnegative", dim=self.n_pix)

    def solve_lower(self, y, J, d, beta: float, x0=None):
        K = self.assemble_forward(J)
        data = {"K": K, "Kt": np.ascontiguousarray(K.T), "d": d, "Ktd": K.T @ d}
        problem = self.lower_problem(y, J)
        return lower_level.solve(problem, y, data, max(beta, 1e-12), x0=x0)

    def _token_draw(self, sample: NoiseSample):
        """CRN material of one token: truth image, Gumbel keys, noise vector."""
        rng = sample.rng()
        tri_rng, gumbel_rng, noise_rng = rng.spawn(3)
        x_true = _triangle_from(tri_rng, self.img_side).ravel()
        gumbel = gumbel_rng.gumbel(size=self.n_angles)
        z = NOISE_STD * noise_rng.standard_normal(self.k_pick * self.n_det)
        return x_true, gumbel, z

    def draw_measurement(self, y, sample: NoiseSample):
        """(x_true, J, d) for one noise realization under the policy of y.

        All randomness comes from the token: triangle, Gumbel keys and
        measurement noise each use their own child stream, so paired
        evaluations at y and a perturbed y share them (common random
        numbers); J changes only if the perturbed logits flip the
        Gumbel-perturbed ranking.
        """
        _, logits = self.split_params(y)
        x_true, gumbel, z = self._token_draw(sample)
        J = gumbel_top_k(softmax(logits), self.k_pick, gumbel)
        d = self.assemble_forward(J) @ x_true + z
        return x_true, J, d

    def sample_loss(self, y, sample: NoiseSample, beta: float):
        """Squared reconstruction error for one draw of (triangle, J, noise)."""
        if beta < 0:
            raise ValueError("beta must be >= 0")
        x_true, J, d = self.draw_measurement(y, sample)
        sol = self.solve_lower(y, J, d, beta)
        err = sol.x - x_true
        return float(np.dot(err, err)), sol.iters

    def _stack_systems(self, ys, Js, x_trues, zs):
        """Per-sample forward stacks and moduli for a batch of solves."""
        b = len(Js)
        rows = self.k_pick * self.n_det
        K = np.empty((b, rows, self.n_pix))
        Ktd = np.empty((b, self.n_pix))
        lam = np.empty(b)
        tau = np.empty(b)
        nu = np.empty(b)
        L = np.empty(b)
        for i in range(b):
            (lam_i, tau_i, nu_i), _ = self.split_params(ys[i])
            K[i] = self.assemble_forward(Js[i])
            d = K[i] @ x_trues[i] + zs[i]
            Ktd[i] = K[i].T @ d
            lam[i], tau[i], nu[i] = lam_i, tau_i, nu_i
            L[i] = (sum(self.block_norm_sq[j] for j in Js[i])
                    + tau_i * self.dtd2_norm / nu_i + lam_i)
        Kt = np.ascontiguousarray(K.transpose(0, 2, 1))
        return (K, Kt), Ktd, lam, tau, nu, L

    def _solve_batch(self, K_pair, Ktd, lam, tau, nu, L, beta, x0):
        """Projected gradient on a stack of inner problems, frozen per sample
        at the first iterate whose accuracy certificate holds.

        The stopping test is the residual form of the certificate: with
        r = ||x - proj(x - g/L)||, the bound L r (1/L + 2/mu) <= beta is
        checked as r <= beta / (1 + 2 L / lam).
        """
        K, Kt = K_pair
        b, n = Ktd.shape
        s = self.img_side
        x = np.maximum(np.asarray(x0, dtype=float), 0.0)
        out = np.empty_like(x)
        iters = np.zeros(b, dtype=int)
        frozen = np.zeros(b, dtype=bool)
        lam_col = lam[:, None]
        tau_col = tau[:, None]
        inv_L = (1.0 / L)[:, None]
        nu_sq = (nu * nu)[:, None, None]
        r_thresh = beta / (1.0 + 2.0 * L / lam)
        kx = np.empty((b, K.shape[1], 1))
        g3 = np.empty((b, n, 1))
        for it in range(lower_level.ITERATION_CAP + 1):
            np.matmul(K, x[:, :, None], out=kx)
            np.matmul(Kt, kx, out=g3)
            g = g3[:, :, 0]
            g += lam_col * x
            g -= Ktd
            img = x.reshape(b, s, s)
            er = img[:, 1:, :] - img[:, :-1, :]
            ec = img[:, :, 1:] - img[:, :, :-1]
            sq = np.empty((b, s, s))
            sq[...] = nu_sq
            sq[:, :-1, :] += er * er
            sq[:, :, :-1] += ec * ec
            np.sqrt(sq, out=sq)
            er /= sq[:, :-1, :]
            ec /= sq[:, :, :-1]
            tvg = np.zeros((b, s, s))
            tvg[:, :-1, :] -= er
            tvg[:, 1:, :] += er
            tvg[:, :, :-1] -= ec
            tvg[:, :, 1:] += ec
            g += tau_col * tvg.reshape(b, n)
            x_proj = x - g * inv_L
            np.maximum(x_proj, 0.0, out=x_proj)
            diff = x - x_proj
            rnorm = np.sqrt(np.einsum("bi,bi->b", diff, diff))
            done = (rnorm <= r_thresh) & ~frozen
            if done.any():
                out[done] = x[done]
                iters[done] = it
                frozen |= done
                if frozen.all():
                    return out, iters
            x = x_proj
        raise lower_level.IterationCapExceeded(
            f"batched inner solve exceeded {lower_level.ITERATION_CAP} iterations "
            f"(lam range {lam.min():g}..{lam.max():g})")

    def eval_pair_batch(self, y_base, y_pert, tokens, beta: float):
        """All paired losses of one estimator batch, solved vectorized.

        Base solves are cold-started; each perturbed solve is warm-started
        from its base solution (distinct certified solutions, same accuracy
        guarantee).  Returns (losses at y_pert rows, losses at y_base).
        """
        beta = max(beta, 1e-12)
        m = len(tokens)
        y_pert = np.asarray(y_pert, dtype=float)
        _, logits_base = self.split_params(y_base)
        p_base = softmax(logits_base)
        x_trues, Js_base, Js_pert, zs = [], [], [], []
        for i, token in enumerate(tokens):
            x_true, gumbel, z = self._token_draw(token)
            _, logits_i = self.split_params(y_pert[i])
            x_trues.append(x_true)
            zs.append(z)
            Js_base.append(gumbel_top_k(p_base, self.k_pick, gumbel))
            Js_pert.append(gumbel_top_k(softmax(logits_i), self.k_pick, gumbel))

        base_sys = self._stack_systems([y_base] * m, Js_base, x_trues, zs)
        x_base, it_b = self._solve_batch(*base_sys, beta, np.zeros((m, self.n_pix)))
        pert_sys = self._stack_systems(list(y_pert), Js_pert, x_trues, zs)
        x_pert, it_p = self._solve_batch(*pert_sys, beta, x_base)

        truths = np.stack(x_trues)
        vals_base = np.sum((x_base - truths) ** 2, axis=1)
        vals_pert = np.sum((x_pert - truths) ** 2, axis=1)
        return vals_pert, vals_base, int(it_b.sum() + it_p.sum())

    def validation_errors(self, y, val_seed: int, m_val: int, beta: float = 1e-7) -> list:
        """Normalized reconstruction errors on m_val held-out draws.

        Tokens depend only on (val_seed, i), so different parameter vectors
        evaluated with the same val_seed see paired triangles, Gumbel keys
        and noise.
        """
        errs = []
        for i in range(m_val):
            token = NoiseSample(val_seed, (i,))
            x_true, J, d = self.draw_measurement(y, token)
            nrm = float(np.linalg.norm(x_true))
            if nrm == 0:
                raise ZeroTruthNorm("validation truth with zero norm")
            sol = self.solve_lower(y, J, d, beta)
            errs.append(float(np.linalg.norm(sol.x - x_true)) / nrm)
        return errs


class OEDOracle:
    """Stochastic loss H(y, xi) for the design problem, with call counters.

    Exposes the batched pair interface so estimator mini-batches solve
    their inner problems vectorized.
    """

    def __init__(self, instance: OEDInstance):
        self.instance = instance
        self.calls = 0
        self.lower_iters = 0

    def __call__(self, y, sample: NoiseSample, beta: float) -> float:
        loss, iters = self.instance.sample_loss(y, sample, beta)
        self.calls += 1
        self.lower_iters += iters
        return loss

    def eval_pair_batch(self, y_base, y_pert, tokens, beta: float):
        vals_pert, vals_base, iters = self.instance.eval_pair_batch(
            y_base, y_pert, tokens, beta)
        self.calls += 2 * len(tokens)
        self.lower_iters += iters
        return vals_pert, vals_base
