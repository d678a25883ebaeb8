"""Spherical convolutional conditional neural process for residual HRTF
spectra.

Pipeline per task: the context set is split per ear and the right-ear
locations are mirrored about the median plane, so both ears live in one
spatial frame. A per-frequency discretized set convolution (spherical
Gaussian kernel, learned precision per bin) embeds each ear's context into
density and Nadaraya-Watson signal channels on an equiangular grid. A
resize layer maps the 8 real channels to M, a residual CNN alternates zonal
spherical filtering (per-degree scaling in harmonic space, filters
interpolated from a few anchors) with a short frequency convolution, a
second set convolution (single learned precision) reads the left channel
half at each target and the right half at the mirrored target, and a
point-wise residual MLP plus a final resize yield a complex mean and a
risen-softplus standard deviation per ear and bin.

Every channel-mixing weight is ear-tied (block-circulant over the two ear
halves: [[U, V], [V, U]]), which together with the reflection-closed grid
makes the whole network exactly equivariant to mirroring a task and
swapping its ears, for any parameter values.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .sht import (
    EquiangularGrid,
    analysis_matrix,
    anchor_interp_matrix,
    num_coeffs,
    synthesis_matrix,
)
from .sphere import mirror_median
from .tasks import Task


@dataclass
class ModelConfig:
    grid_size: int = 32
    bandwidth: int = 15
    channels: int = 32
    cnn_blocks: int = 4
    mlp_blocks: int = 3
    freq_kernel: int = 3
    anchors: int = 4
    sigma_floor: float = 0.01
    freq_bins: int = 97

    def __post_init__(self):
        if self.channels % 2 != 0:
            raise ValueError("channel count must be even (ear-paired halves)")
        if self.bandwidth > self.grid_size // 2 - 1:
            raise ValueError("bandwidth exceeds the grid's exact-quadrature range")
        if self.freq_kernel % 2 != 1:
            raise ValueError("frequency kernel length must be odd")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")
        if self.anchors < 2:
            raise ValueError("need at least 2 zonal anchors")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


@dataclass
class Prediction:
    """Factored complex Gaussian predictive density per target; sigma is None
    for point predictors that carry no uncertainty."""

    mu: np.ndarray  # (T, 2, F) complex
    sigma: np.ndarray | None  # (T, 2, F) complex, both parts > 0

    def __post_init__(self):
        if self.sigma is not None and self.mu.shape != self.sigma.shape:
            raise ShapeError("mu and sigma shapes differ")


def risen_softplus(nu: np.ndarray, sigma_floor: float) -> np.ndarray:
    """sigma_floor + (1 - sigma_floor) log(1 + e^nu); strictly above the floor."""
    return sigma_floor + (1.0 - sigma_floor) * np.logaddexp(0.0, nu)


def predictive_log_density(
    targets: np.ndarray, prediction: Prediction
) -> float:
    """Log density of target features under the factored Gaussian: the real
    and imaginary parts of every (ear, bin) entry are independent normals."""
    if targets.shape != prediction.mu.shape:
        raise ShapeError(
            f"targets {targets.shape} vs prediction {prediction.mu.shape}"
        )
    if prediction.sigma is None:
        raise ValueError("prediction carries no uncertainty")
    if np.any(prediction.sigma.real <= 0) or np.any(prediction.sigma.imag <= 0):
        raise ValueError("predictive sigma must be strictly positive")
    total = 0.0
    for y, mu, sd in (
        (targets.real, prediction.mu.real, prediction.sigma.real),
        (targets.imag, prediction.mu.imag, prediction.sigma.imag),
    ):
        total += float(
            np.sum(
                -0.5 * math.log(2.0 * math.pi)
                - np.log(sd)
                - 0.5 * ((y - mu) / sd) ** 2
            )
        )
    return total


def _init_beta(grid_size: int) -> float:
    """Precision placing the kernel half-width at twice the grid spacing."""
    return math.log(2.0) / (2.0 * (1.0 - math.cos(2.0 * math.pi / grid_size)))


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh learnable tensors; channel-mixing blocks are uniform(+-1/sqrt(fan_in))."""
    half = config.channels // 2
    fk, a = config.freq_kernel, config.anchors

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

    log_beta = math.log(_init_beta(config.grid_size))
    params: dict[str, Tensor] = {
        "log_beta1": Tensor(np.full(config.freq_bins, log_beta), requires_grad=True),
        "log_beta2": Tensor(np.array([log_beta]), requires_grad=True),
        "resize/same": uniform((half, 4), 8),
        "resize/cross": uniform((half, 4), 8),
        "resize/bias": Tensor(np.zeros(half), requires_grad=True),
    }
    for i in range(config.cnn_blocks):
        fan = config.channels * fk
        params[f"cnn{i}/same"] = uniform((half, half, fk, a), fan)
        params[f"cnn{i}/cross"] = uniform((half, half, fk, a), fan)
        params[f"cnn{i}/bias"] = Tensor(np.zeros(half), requires_grad=True)
    for i in range(config.mlp_blocks):
        params[f"mlp{i}/same"] = uniform((half, half), config.channels)
        params[f"mlp{i}/cross"] = uniform((half, half), config.channels)
        params[f"mlp{i}/bias"] = Tensor(np.zeros(half), requires_grad=True)
    params["head/same"] = uniform((4, half), config.channels)
    params["head/cross"] = uniform((4, half), config.channels)
    params["head/bias"] = Tensor(np.zeros(4), requires_grad=True)
    return params


def _ear_tied_matrix(same: Tensor, cross: Tensor) -> Tensor:
    """[[U, V], [V, U]] so channel mixing commutes with the ear-half swap."""
    top = ad.concat([same, cross], axis=1)
    bottom = ad.concat([cross, same], axis=1)
    return ad.concat([top, bottom], axis=0)


def _ear_tied_bias(bias: Tensor) -> Tensor:
    return ad.concat([bias, bias], axis=0)


class SphericalConvCNP:
    """Forward model; parameters live in a named-tensor dict."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.grid = EquiangularGrid(config.grid_size)
        self.nodes = self.grid.node_vectors()  # (G^2, 3)
        self.analysis = analysis_matrix(self.grid, config.bandwidth)
        self.synthesis = synthesis_matrix(self.grid, config.bandwidth)
        # anchors -> per-coefficient zonal gains, fused into one constant map
        interp = anchor_interp_matrix(config.bandwidth, config.anchors)
        degrees = np.arange(config.bandwidth + 1)
        scale = np.sqrt(4.0 * math.pi / (2.0 * degrees + 1.0))
        expand = np.zeros((num_coeffs(config.bandwidth), config.bandwidth + 1))
        for l in degrees:
            expand[l * l : (l + 1) ** 2, l] = scale[l]
        self.anchor_gain = expand @ interp  # ((L+1)^2, A)

    # ------------------------------------------------------------------
    # stages

    def _set_conv_ear(
        self, locations: np.ndarray, features: np.ndarray, log_beta1: Tensor
    ) -> Tensor:
        """Density + signal channels for one ear, shape (4, F, G^2)."""
        f_bins = self.config.freq_bins
        n_nodes = len(self.nodes)
        c = len(locations)
        if c == 0:
            return Tensor(np.zeros((4, f_bins, n_nodes)))
        gap = 1.0 - locations @ self.nodes.T  # (C, G^2), >= 0
        beta = ad.exp(log_beta1)  # (F,)
        beta_full = ad.tile(ad.reshape(beta, (f_bins, 1, 1)), (1, c, n_nodes))
        kernel = ad.exp(ad.mul(beta_full, Tensor(np.broadcast_to(-2.0 * gap, (f_bins, c, n_nodes)))))
        density = ad.tsum(kernel, axis=1)  # (F, G^2)
        # Nadaraya-Watson numerators via batched matmul with constant features
        y_re = Tensor(np.ascontiguousarray(features.real.T)[:, None, :])  # (F,1,C)
        y_im = Tensor(np.ascontiguousarray(features.imag.T)[:, None, :])
        num_re = ad.reshape(ad.matmul(y_re, kernel), (f_bins, n_nodes))
        num_im = ad.reshape(ad.matmul(y_im, kernel), (f_bins, n_nodes))
        # 0/0 at fully-underflowed nodes resolves to the empty-context value 0
        safe_density = ad.add(density, Tensor(1e-300))
        sig_re = ad.div(num_re, safe_density)
        sig_im = ad.div(num_im, safe_density)
        zero = Tensor(np.zeros((1, f_bins, n_nodes)))
        return ad.concat(
            [
                ad.reshape(density, (1, f_bins, n_nodes)),
                zero,
                ad.reshape(sig_re, (1, f_bins, n_nodes)),
                ad.reshape(sig_im, (1, f_bins, n_nodes)),
            ],
            axis=0,
        )

    def first_setconv(self, task: Task, params: dict[str, Tensor]) -> Tensor:
        """Ear-split, right-ear flip, per-frequency set conv; (8, F, G^2)."""
        order = np.argsort(task.context_indices, kind="stable")
        locations = task.context_locations[order]
        features = task.context_features[order]
        left = self._set_conv_ear(locations, features[:, 0], params["log_beta1"])
        right = self._set_conv_ear(
            mirror_median(locations), features[:, 1], params["log_beta1"]
        )
        return ad.concat([left, right], axis=0)

    def resize_in(self, field: Tensor, params: dict[str, Tensor]) -> Tensor:
        f_bins, n_nodes = self.config.freq_bins, len(self.nodes)
        m = self.config.channels
        weight = _ear_tied_matrix(params["resize/same"], params["resize/cross"])
        out = ad.matmul(weight, ad.reshape(field, (8, f_bins * n_nodes)))
        bias = ad.tile(
            ad.reshape(_ear_tied_bias(params["resize/bias"]), (m, 1)),
            (1, f_bins * n_nodes),
        )
        return ad.reshape(ad.add(out, bias), (m, f_bins, n_nodes))

    def _shift_freq(self, coeffs: Tensor, offset: int) -> Tensor:
        """coeffs is (M, F, n_lm); returns x[:, f + offset, :] zero-padded."""
        m, f_bins, n_lm = coeffs.shape
        if offset == 0:
            return coeffs
        zeros = Tensor(np.zeros((m, abs(offset), n_lm)))
        if offset > 0:
            body = ad.narrow(coeffs, 1, offset, f_bins - offset)
            return ad.concat([body, zeros], axis=1)
        body = ad.narrow(coeffs, 1, 0, f_bins + offset)
        return ad.concat([zeros, body], axis=1)

    def _hybrid_conv(
        self, x: Tensor, same: Tensor, cross: Tensor, bias: Tensor
    ) -> Tensor:
        """Zonal spherical filtering mixed across channels and a short
        frequency window: grid -> harmonics -> per-degree gains -> grid."""
        m, f_bins = self.config.channels, self.config.freq_bins
        fk = self.config.freq_kernel
        half_k = fk // 2
        n_lm = num_coeffs(self.config.bandwidth)
        coeffs = ad.linmap(self.analysis, x)  # (M, F, n_lm)
        anchors = _ear_tied_matrix(
            ad.reshape(same, (same.shape[0], -1)),
            ad.reshape(cross, (cross.shape[0], -1)),
        )
        anchors = ad.reshape(anchors, (m, m, fk, self.config.anchors))
        gains = ad.linmap(self.anchor_gain, anchors)  # (M, M, fk, n_lm)
        acc = None
        for tap in range(fk):
            shifted = self._shift_freq(coeffs, tap - half_k)  # (M, F, n_lm)
            gain_tap = ad.reshape(ad.narrow(gains, 2, tap, 1), (m, m, n_lm))
            prod = ad.matmul(
                ad.transpose(gain_tap, (2, 0, 1)),  # (n_lm, M, M)
                ad.transpose(shifted, (2, 0, 1)),  # (n_lm, M, F)
            )
            acc = prod if acc is None else ad.add(acc, prod)
        out = ad.linmap(self.synthesis, ad.transpose(acc, (1, 2, 0)))
        bias_full = ad.tile(
            ad.reshape(_ear_tied_bias(bias), (m, 1, 1)), (1, f_bins, len(self.nodes))
        )
        return ad.add(out, bias_full)

    def cnn_forward(self, field: Tensor, params: dict[str, Tensor]) -> Tensor:
        x = field
        for i in range(self.config.cnn_blocks):
            update = self._hybrid_conv(
                ad.relu(x),
                params[f"cnn{i}/same"],
                params[f"cnn{i}/cross"],
                params[f"cnn{i}/bias"],
            )
            x = ad.add(x, update)
        return x

    def _read_half(
        self, z_half: Tensor, queries: np.ndarray, log_beta2: Tensor
    ) -> Tensor:
        """Nadaraya-Watson readout of (M/2, F, G^2) at query directions."""
        half, f_bins, n_nodes = z_half.shape
        n_q = len(queries)
        gap = Tensor(1.0 - self.nodes @ queries.T)  # (G^2, T)
        scale = ad.mul(ad.exp(ad.reshape(log_beta2, ())), Tensor(-2.0))
        kernel = ad.exp(ad.mul(gap, scale))  # (G^2, T)
        col = ad.tsum(kernel, axis=0, keepdims=True)  # (1, T)
        weights = ad.div(kernel, ad.tile(col, (n_nodes, 1)))
        out = ad.matmul(ad.reshape(z_half, (half * f_bins, n_nodes)), weights)
        return ad.reshape(out, (half, f_bins, n_q))

    def second_setconv(
        self, z: Tensor, targets: np.ndarray, params: dict[str, Tensor]
    ) -> Tensor:
        """Left half read at targets, right half at mirrored targets; (M, F, T)."""
        half = self.config.channels // 2
        z_left = ad.narrow(z, 0, 0, half)
        z_right = ad.narrow(z, 0, half, half)
        q_left = self._read_half(z_left, targets, params["log_beta2"])
        q_right = self._read_half(
            z_right, mirror_median(targets), params["log_beta2"]
        )
        return ad.concat([q_left, q_right], axis=0)

    def mlp_head(self, q: Tensor, params: dict[str, Tensor]) -> Tensor:
        """Point-wise residual blocks and the resize/split output layer.

        Returns raw head output (8, F, T): per ear [mu_re, mu_im, nu_re, nu_im].
        """
        m, f_bins = self.config.channels, self.config.freq_bins
        n_q = q.shape[2]
        x = ad.reshape(q, (m, f_bins * n_q))
        for i in range(self.config.mlp_blocks):
            weight = _ear_tied_matrix(params[f"mlp{i}/same"], params[f"mlp{i}/cross"])
            update = ad.matmul(weight, ad.relu(x))
            bias = ad.tile(
                ad.reshape(_ear_tied_bias(params[f"mlp{i}/bias"]), (m, 1)),
                (1, f_bins * n_q),
            )
            x = ad.add(x, ad.add(update, bias))
        head = _ear_tied_matrix(params["head/same"], params["head/cross"])
        out = ad.matmul(head, x)  # (8, F*T)
        bias = ad.tile(
            ad.reshape(_ear_tied_bias(params["head/bias"]), (8, 1)),
            (1, f_bins * n_q),
        )
        return ad.reshape(ad.add(out, bias), (8, f_bins, n_q))

    # ------------------------------------------------------------------
    # end to end

    def forward(
        self, task: Task, params: dict[str, Tensor]
    ) -> tuple[Prediction, Tensor]:
        """Predictions for every target plus the mean per-target negative log
        likelihood as a differentiable scalar."""
        if task.n_bins != self.config.freq_bins:
            raise ShapeError(
                f"task has {task.n_bins} bins, model expects {self.config.freq_bins}"
            )
        if task.target_size == 0:
            raise ValueError("task has no targets")
        field = self.first_setconv(task, params)
        field = self.resize_in(field, params)
        z = self.cnn_forward(field, params)
        q = self.second_setconv(z, task.target_locations, params)
        raw = self.mlp_head(q, params)

        floor = self.config.sigma_floor
        nll_terms = []
        mu = np.empty((task.target_size, 2, self.config.freq_bins), dtype=complex)
        sigma = np.empty_like(mu)
        f_bins, n_q = self.config.freq_bins, task.target_size
        for ear in range(2):
            mu_re = ad.reshape(ad.narrow(raw, 0, 4 * ear + 0, 1), (f_bins, n_q))
            mu_im = ad.reshape(ad.narrow(raw, 0, 4 * ear + 1, 1), (f_bins, n_q))
            nu_re = ad.reshape(ad.narrow(raw, 0, 4 * ear + 2, 1), (f_bins, n_q))
            nu_im = ad.reshape(ad.narrow(raw, 0, 4 * ear + 3, 1), (f_bins, n_q))
            sd_re = _risen_softplus_t(nu_re, floor)
            sd_im = _risen_softplus_t(nu_im, floor)
            y = task.target_features[:, ear].T  # (F, T)
            nll_terms.append(_gauss_nll(Tensor(y.real.copy()), mu_re, sd_re))
            nll_terms.append(_gauss_nll(Tensor(y.imag.copy()), mu_im, sd_im))
            mu[:, ear] = (mu_re.data + 1j * mu_im.data).T
            sigma[:, ear] = (sd_re.data + 1j * sd_im.data).T
        total = nll_terms[0]
        for term in nll_terms[1:]:
            total = ad.add(total, term)
        mean_nll = ad.mul(total, Tensor(1.0 / n_q))
        return Prediction(mu, sigma), mean_nll

    def predict(self, task: Task, params: dict[str, Tensor]) -> Prediction:
        with ad.no_grad():
            prediction, _ = self.forward(task, params)
        return prediction


def _risen_softplus_t(nu: Tensor, floor: float) -> Tensor:
    return ad.add(ad.mul(ad.softplus(nu), Tensor(1.0 - floor)), Tensor(floor))


def _gauss_nll(y: Tensor, mu: Tensor, sd: Tensor) -> Tensor:
    """Sum over components of -log N(y; mu, sd^2)."""
    delta = ad.sub(y, mu)
    z = ad.div(delta, sd)
    quad = ad.mul(ad.mul(z, z), Tensor(0.5))
    per = ad.add(ad.add(quad, ad.log(sd)), Tensor(0.5 * math.log(2.0 * math.pi)))
    return ad.tsum(per)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    path: str | Path,
    config: ModelConfig,
    params: dict[str, Tensor],
    extra: dict | None = None,
    arrays: dict[str, np.ndarray] | None = None,
) -> None:
    """Named-tensor archive plus a JSON sidecar with the config and metadata."""
    tensors = {name: p.data for name, p in params.items()}
    if arrays:
        tensors.update(arrays)
    ad.save_tensors(path, tensors)
    sidecar = {"config": asdict(config)}
    if extra:
        sidecar.update(extra)
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )


def load_checkpoint(
    path: str | Path,
) -> tuple[ModelConfig, dict[str, Tensor], dict, dict[str, np.ndarray]]:
    """Returns (config, params, sidecar metadata, non-parameter arrays)."""
    sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    config = ModelConfig(**sidecar.pop("config"))
    tensors = ad.load_tensors(path)
    rng = np.random.default_rng(0)
    reference = init_params(config, rng)
    params = {}
    arrays = {}
    for name, array in tensors.items():
        if name in reference:
            if array.shape != reference[name].shape:
                raise ShapeError(
                    f"checkpoint tensor {name} has shape {array.shape}, "
                    f"expected {reference[name].shape}"
                )
            params[name] = Tensor(array, requires_grad=True)
        else:
            arrays[name] = array
    missing = set(reference) - set(params)
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    return config, params, sidecar, arrays
