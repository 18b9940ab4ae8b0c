# core/calib.py

"""
Photometric calibration: camera response recovery from an exposure stack and
estimation of BSDF coefficients by inverse rendering.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lstsq
from scipy.optimize import minimize
from sklearn.isotonic import IsotonicRegression

from .exceptions import CalibrationError, ContractViolationError, DataError, FitError
from .render import DEFAULT_BOUNCES, BsdfParams, RadianceImage, shade, trace_paths

logger = logging.getLogger(__name__)

LEVELS = 256
ANCHOR = 128
DARK_LEVEL = 5
SATURATED_LEVEL = 250
BSDF_FIELDS = ('base_color', 'metallic', 'roughness', 'specular')


@dataclass(frozen=True)
class ResponseCurve:
    """
    Inverse camera response: log_exposure[v] = ln X for pixel value v.

    The forward direction (exposure to intensity) interpolates the table, so
    it is continuous; quantization happens only when images are written.
    """

    log_exposure: np.ndarray
    smoothing_lambda: float = 0.0

    def __post_init__(self):
        table = np.array(self.log_exposure, dtype=float).reshape(-1)
        if table.shape != (LEVELS,) or not np.all(np.isfinite(table)):
            raise ContractViolationError("A response curve needs 256 finite log-exposure entries.")
        table.setflags(write=False)
        object.__setattr__(self, 'log_exposure', table)

    @classmethod
    def linear(cls):
        levels = np.maximum(np.arange(LEVELS, dtype=float), 0.5)
        return cls(np.log(levels / ANCHOR))

    @classmethod
    def gamma(cls, gamma=2.2):
        levels = np.maximum(np.arange(LEVELS, dtype=float), 0.5)
        return cls(gamma * np.log(levels / ANCHOR))

    def to_intensity(self, exposure):
        """g(X): normalized intensity in [0, 1]; saturates above the table."""
        exposure = np.asarray(exposure, dtype=float)
        with np.errstate(divide='ignore'):
            log_x = np.log(np.maximum(exposure, 0.0))
        values = np.interp(log_x, self.log_exposure, np.arange(LEVELS, dtype=float), left=0.0, right=LEVELS - 1)
        return np.clip(values / (LEVELS - 1), 0.0, 1.0)

    def to_exposure(self, intensity):
        """g^-1 of quantized intensities."""
        levels = np.clip(np.rint(np.asarray(intensity, dtype=float) * (LEVELS - 1)), 0, LEVELS - 1).astype(int)
        return np.exp(self.log_exposure[levels])

    def to_dict(self):
        return {'log_exposure': [float(v) for v in self.log_exposure], 'smoothing_lambda': self.smoothing_lambda}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data['log_exposure'], float(data.get('smoothing_lambda', 0.0)))
        except (KeyError, TypeError) as exc:
            raise DataError(f"Malformed response curve: {exc}") from exc


def hat_weight(levels):
    levels = np.asarray(levels)
    return np.minimum(levels, LEVELS - 1 - levels).astype(float)


def _sample_pixels(reference, samples):
    """Pixels spread evenly over the intensity range of the reference exposure."""
    flat = reference.ravel()
    order = np.argsort(flat, kind='stable')
    picks = np.linspace(0, len(order) - 1, min(samples, len(order))).round().astype(int)
    return np.unique(order[picks])


def recover_response(images, exposures, smoothing=50.0, samples=200):
    """
    Least-squares response recovery from a static multi-exposure stack.

    Solves for the 256 log-exposure values and one log irradiance per sampled
    pixel, with hat weighting and a second-difference smoothness penalty.
    The gauge is fixed by g(128) = 0.
    """
    if len(images) != len(exposures):
        raise ContractViolationError("Need one exposure time per image.")
    exposures = np.asarray(exposures, dtype=float)
    if len(images) < 3:
        raise CalibrationError("Response recovery needs at least three exposures.")
    if np.any(exposures <= 0):
        raise ContractViolationError("Exposure times must be positive.")
    if exposures.max() / exposures.min() < 4.0:
        raise CalibrationError("Exposure times must span at least a 4x ratio.")

    stack = np.stack([np.clip(np.rint(img.values * (LEVELS - 1)), 0, LEVELS - 1).astype(int) for img in images])
    picks = _sample_pixels(stack[len(stack) // 2], samples)
    Z = stack.reshape(len(stack), -1)[:, picks].T  # (pixels, exposures)
    # pixels that are black or saturated in every exposure carry no information
    Z = Z[hat_weight(Z).sum(axis=1) > 0]
    if len(Z) < 2:
        raise CalibrationError("No sampled pixel lies inside the usable intensity range of any exposure.")
    n_pix, n_exp = Z.shape
    log_dt = np.log(exposures)

    rows = n_pix * n_exp + 1 + (LEVELS - 2)
    A = np.zeros((rows, LEVELS + n_pix))
    b = np.zeros(rows)
    k = 0
    for i in range(n_pix):
        for j in range(n_exp):
            w = hat_weight(Z[i, j])
            A[k, Z[i, j]] = w
            A[k, LEVELS + i] = -w
            b[k] = w * log_dt[j]
            k += 1
    A[k, ANCHOR] = 1.0
    k += 1
    for v in range(1, LEVELS - 1):
        w = smoothing * hat_weight(v)
        A[k, v - 1:v + 2] = (w, -2.0 * w, w)
        k += 1

    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise CalibrationError("Response system is rank deficient; exposures do not constrain the curve.")
    solution, _, _, _ = lstsq(A, b)
    g = solution[:LEVELS]

    levels = np.arange(LEVELS)
    g = IsotonicRegression(increasing=True).fit_transform(levels, g, sample_weight=hat_weight(levels) + 1e-3)
    g = g - g[ANCHOR]
    mid = np.diff(g[DARK_LEVEL:SATURATED_LEVEL + 1])
    if np.any(mid <= 0):
        raise CalibrationError("Recovered response is not strictly increasing over the mid-range.")
    logger.info("Recovered response from %d pixels x %d exposures", n_pix, n_exp)
    return ResponseCurve(g, smoothing)


def radiance_from_image(img, response, exposure):
    """
    Radiance E = g^-1(I) / dt.

    Saturated and dark pixels are returned with hit=False (unreliable).
    """
    if exposure <= 0:
        raise ContractViolationError("Exposure time must be positive.")
    levels = np.rint(img.values * (LEVELS - 1))
    reliable = (levels > DARK_LEVEL) & (levels < SATURATED_LEVEL)
    values = response.to_exposure(img.values) / exposure
    return RadianceImage(values, np.full(values.shape, np.nan), reliable)


@dataclass(frozen=True)
class FitOptions:
    lr: float = 0.05
    epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    fd_step: float = 1e-3
    # learning rate at the last epoch, as a fraction of lr
    lr_final_ratio: float = 0.01
    free: tuple = BSDF_FIELDS
    min_pixels: int = 500
    bounces: int = DEFAULT_BOUNCES
    tol: float = 1e-6
    # L-BFGS-B iterations run from the best Adam iterate; 0 skips the polish
    polish_iters: int = 200

    def to_dict(self):
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data['free'] = list(self.free)
        return data


@dataclass(frozen=True)
class FitReport:
    params: BsdfParams
    loss_history: list
    converged: bool
    epochs: int
    best_loss: float = float('nan')
    initial_loss: float = float('nan')
    best_history: list = field(default_factory=list)
    polish_iterations: int = 0
    polish_history: list = field(default_factory=list)

    def to_dict(self):
        return {
            'params': self.params.to_dict(),
            'loss_history': [float(v) for v in self.loss_history],
            'best_history': [float(v) for v in self.best_history],
            'converged': self.converged,
            'epochs': self.epochs,
            'best_loss': float(self.best_loss),
            'initial_loss': float(self.initial_loss),
            'polish_iterations': self.polish_iterations,
            'polish_history': [float(v) for v in self.polish_history],
        }


class BsdfObjective:
    """
    Normalized squared radiance error of the target object for given BSDF coefficients.

    The geometry is traced once; each evaluation only re-shades.
    """

    def __init__(self, target, scene, bounces=DEFAULT_BOUNCES, min_pixels=0):
        if target.values.shape != (scene.camera.height, scene.camera.width):
            raise ContractViolationError("Target radiance and scene camera differ in size.")
        self.scene = scene
        self.cache = trace_paths(scene, bounces)
        self.mask = (self.cache.object_ids == scene.target) & target.hit
        self.count = int(self.mask.sum())
        if self.count < max(min_pixels, 1):
            raise DataError(f"Target covers {self.count} reliable object pixels; at least {min_pixels} needed.")
        self.target = target.values[self.mask]
        self.scale = float(np.mean(self.target ** 2))
        if not self.scale > 0:
            raise DataError("Target radiance is zero on every object pixel.")

    def render(self, params):
        materials = [o.bsdf for o in self.scene.objects]
        materials[self.scene.target] = params
        _, multi = shade(self.cache, self.scene.with_materials(materials))
        return multi

    def __call__(self, x):
        rendered = self.render(BsdfParams.from_array(x))[self.mask]
        return float(np.mean((rendered - self.target) ** 2) / self.scale)

    def gradient(self, x, step, free):
        grad = np.zeros(4)
        for j in free:
            plus = x.copy()
            minus = x.copy()
            plus[j] = min(1.0, x[j] + step)
            minus[j] = max(0.0, x[j] - step)
            grad[j] = (self(plus) - self(minus)) / (plus[j] - minus[j])
        return grad


def _polish(objective, x, free, opts):
    """Bounded L-BFGS-B on the free coefficients, starting at x. Returns (x, loss, iterations, history, success)."""
    base = x.copy()

    def expand(z):
        full = base.copy()
        full[free] = z
        return full

    history = []
    result = minimize(lambda z: objective(expand(z)), base[free],
                      jac=lambda z: objective.gradient(expand(z), opts.fd_step, free)[free],
                      method='L-BFGS-B', bounds=[(0.0, 1.0)] * len(free),
                      callback=lambda intermediate_result: history.append(float(intermediate_result.fun)),
                      options={'maxiter': opts.polish_iters, 'ftol': 1e-15, 'gtol': 1e-12})
    logger.debug("L-BFGS-B polish: %s after %d iterations", result.message, result.nit)
    return np.clip(expand(result.x), 0.0, 1.0), float(result.fun), int(result.nit), history, bool(result.success)


def fit_bsdf(target, scene, init=None, opts=None):
    """
    Adam on the normalized radiance MSE with finite-difference gradients,
    followed by a bounded L-BFGS-B polish from the best Adam iterate.

    Only the coefficients named in opts.free move. The learning rate decays
    exponentially to lr * lr_final_ratio. Returns the best parameters seen.

    Without ambient light the radiance depends on base_color, metallic and
    specular only through (1 - metallic) * base_color and the normal-incidence
    Fresnel term, so with all three free the fit recovers those two combinations
    and roughness, not the individual coefficients.
    """
    opts = opts or FitOptions()
    init = init or BsdfParams()
    unknown = set(opts.free) - set(BSDF_FIELDS)
    if unknown:
        raise ContractViolationError(f"Unknown BSDF coefficients: {sorted(unknown)}.")
    free = [BSDF_FIELDS.index(name) for name in opts.free]
    objective = BsdfObjective(target, scene, opts.bounces, opts.min_pixels)

    x = init.as_array()
    initial = objective(x)
    if not np.isfinite(initial):
        raise FitError("Initial loss is not finite.")
    if opts.epochs == 0:
        return FitReport(init, [], False, 0, initial, initial, [])

    best_x, best = x.copy(), initial
    m = np.zeros(4)
    v = np.zeros(4)
    history, best_history = [], []
    decay = opts.lr_final_ratio ** (1.0 / max(opts.epochs - 1, 1))
    for epoch in range(opts.epochs):
        grad = objective.gradient(x, opts.fd_step, free)
        if not np.all(np.isfinite(grad)):
            raise FitError(f"Non-finite gradient at epoch {epoch}.")
        m = opts.beta1 * m + (1 - opts.beta1) * grad
        v = opts.beta2 * v + (1 - opts.beta2) * grad * grad
        m_hat = m / (1 - opts.beta1 ** (epoch + 1))
        v_hat = v / (1 - opts.beta2 ** (epoch + 1))
        lr = opts.lr * decay ** epoch
        x = np.clip(x - lr * m_hat / (np.sqrt(v_hat) + opts.eps), 0.0, 1.0)
        loss = objective(x)
        if not np.isfinite(loss):
            raise FitError(f"Loss became non-finite at epoch {epoch}.")
        if loss < best:
            best, best_x = loss, x.copy()
        history.append(loss)
        best_history.append(best)
        if best < opts.tol:
            break

    converged = bool(best < opts.tol or (len(best_history) > 10 and best_history[-11] - best <= 1e-9 * max(best, 1e-12)))
    polish_iterations, polish_history = 0, []
    if opts.polish_iters > 0 and free and best >= opts.tol:
        polished_x, polished, polish_iterations, polish_history, success = _polish(objective, best_x, free, opts)
        if not np.isfinite(polished):
            raise FitError("Loss became non-finite during the L-BFGS-B polish.")
        if polished < best:
            best, best_x = polished, polished_x
        converged = converged or success or best < opts.tol
    logger.info("BSDF fit: loss %.3g -> %.3g in %d epochs and %d polish iterations",
                initial, best, len(history), polish_iterations)
    return FitReport(BsdfParams.from_array(best_x), history, converged, len(history), best, initial, best_history,
                     polish_iterations, polish_history)


def residual_map(target, rendered):
    """|target - rendered| on pixels valid in both, with mean and 95th percentile."""
    if target.values.shape != rendered.values.shape:
        raise ContractViolationError("Residual map needs equally sized images.")
    valid = target.hit & rendered.hit
    error = np.where(valid, np.abs(target.values - rendered.values), 0.0)
    values = error[valid]
    stats = {
        'mean': float(values.mean()) if values.size else 0.0,
        'p95': float(np.percentile(values, 95)) if values.size else 0.0,
        'pixels': int(values.size),
    }
    return error, stats
