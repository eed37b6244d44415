"""Experiment driver: degrade, validate, reference, restore.

Commands read a flat ``key = value`` config (UTF-8, ``#`` comment lines,
unknown keys rejected) and write artifacts into an output directory.  All
outputs are byte-deterministic for a fixed (config, seed); wall-clock times
are therefore omitted from CSV traces unless explicitly requested.

Exit codes: 0 success, 2 invalid config, 3 inadmissible parameters,
4 divergence.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import funcs, imaging, pdsolve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INADMISSIBLE = 3
EXIT_DIVERGENCE = 4


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# key -> (parser, default); None default means required-at-use
_SCHEMA = {
    "input": (str, None),
    "kernel_size": (int, 7),
    "theta1_sq": (float, 576.0),
    "theta2_sq": (float, 25.0),
    "kappa": (float, 0.15),
    "algorithm": (str, "pd2"),
    "metric": (str, "scalar"),
    "tau": (float, 16.0),
    "sigma1": (float, 0.0296875),
    "sigma2": (float, 0.0037109375),
    "metric_tau": (str, None),
    "metric_sigma1": (str, None),
    "metric_sigma2": (str, None),
    "lambda": (float, 1.0),
    "max_iter": (int, 2000),
    "stop_tol": (float, 0.0),
    "seed": (int, 0),
    "output": (str, None),
    "reference": (str, None),
    "reference_iters": (int, 5000),
    "error_rho": (float, 0.0),
    "error_decay": (float, 2.0),
}

_PATH_KEYS = ("input", "output", "reference", "metric_tau", "metric_sigma1", "metric_sigma2")


class ExperimentConfig:
    """Typed view over the parsed key/value map."""

    def __init__(self, values, base_dir):
        self.values = dict(values)
        self.base_dir = Path(base_dir)

    def get(self, key):
        if key in self.values:
            return self.values[key]
        return _SCHEMA[key][1]

    def path(self, key):
        raw = self.get(key)
        if raw is None:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    def require_path(self, key):
        p = self.path(key)
        if p is None:
            raise ConfigError(f"config key '{key}' is required")
        return p

    def validate(self):
        for key in ("theta1_sq", "theta2_sq"):
            if self.get(key) < 0:
                raise ConfigError(f"{key} must be nonnegative")
        for key in ("kappa", "tau", "sigma1", "sigma2"):
            if self.get(key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if not 0.0 < self.get("lambda") <= 1.0:
            raise ConfigError("lambda must lie in ]0, 1]")
        if self.get("max_iter") < 0 or self.get("reference_iters") < 0:
            raise ConfigError("iteration counts must be nonnegative")
        if self.get("kernel_size") < 1 or self.get("kernel_size") % 2 == 0:
            raise ConfigError("kernel_size must be odd and positive")
        if self.get("algorithm").lower() not in ("pd1", "pd2"):
            raise ConfigError("algorithm must be pd1 or pd2")
        if self.get("metric") not in ("scalar", "diagonal"):
            raise ConfigError("metric must be scalar or diagonal")
        if self.get("error_rho") < 0:
            raise ConfigError("error_rho must be nonnegative")
        if self.get("error_decay") <= 1.0:
            raise ConfigError("error_decay must exceed 1")
        return self


def parse_config_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        parser = _SCHEMA[key][0]
        try:
            values[key] = parser(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {val!r}") from None
    return values


def load_config(path, overrides=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    values = parse_config_text(text)
    if overrides:
        values.update(overrides)
    return ExperimentConfig(values, path.parent).validate()


def write_manifest(cfg, path, extra=None):
    """Re-emit the effective configuration as a key = value manifest."""
    lines = []
    for key in _SCHEMA:
        if key in cfg.values:
            lines.append(f"{key} = {cfg.values[key]}")
    for key, val in (extra or {}).items():
        lines.append(f"{key} = {val}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Problem assembly


def _load_original(cfg):
    return imaging.read_pgm(cfg.require_path("input"))


def _degraded_paths(outdir):
    return (outdir / "w1.pdf64", outdir / "w2.pdf64", outdir / "manifest.cfg")


def build_metrics(cfg, n_pixels):
    if cfg.get("metric") == "scalar":
        return imaging.scalar_metrics(cfg.get("tau"), cfg.get("sigma1"),
                                      cfg.get("sigma2"), n_pixels)
    tau_img = imaging.read_raw(cfg.require_path("metric_tau"))
    s1_img = imaging.read_raw(cfg.require_path("metric_sigma1"))
    s2_img = imaging.read_raw(cfg.require_path("metric_sigma2"))
    if tau_img.pixels.size != n_pixels:
        raise ConfigError("metric weight images do not match the input size")
    return imaging.diagonal_metrics(tau_img, s1_img, s2_img)


def build_problem(cfg, w1, w2):
    blur = imaging.make_blur(imaging.uniform_kernel(cfg.get("kernel_size")),
                             w1.width, w1.height)
    return imaging.build_restoration_problem(
        w1, w2, blur, cfg.get("theta1_sq"), cfg.get("theta2_sq"), cfg.get("kappa"))


def build_params(cfg, w1, max_iter=None):
    n = w1.pixels.size
    U, U_i = build_metrics(cfg, n)
    rho = cfg.get("error_rho")
    injector = None
    if rho > 0:
        injector = pdsolve.ErrorSchedule(rho, seed=cfg.get("seed"),
                                         decay=cfg.get("error_decay"))
    return pdsolve.PDParams(
        U=U, U_i=U_i, lam=cfg.get("lambda"),
        error_injector=injector,
        max_iter=cfg.get("max_iter") if max_iter is None else max_iter,
        stop_tol=cfg.get("stop_tol"),
        x0=w1.pixels)


# ---------------------------------------------------------------------------
# Diagonal-metric tuning (the "empirically optimized" run)


def operator_scaled_weights(width, height, alpha_balance=1.0):
    """Row/column-sum preconditioner weights for K = [Id; G1; G2].

    tau_j = 1 / sum_i |K_ij|^(2 - a), per-row sigma = 1 / sum_j |K_ij|^a;
    gradient rows with empty stencils (image border) inherit the generic
    row weight.  Returned as (tau, sigma1, sigma2) pixel images, before
    any admissibility rescaling.
    """
    a = alpha_balance
    grid_colsum = np.full((height, width), 1.0)  # identity column entries
    for axis in ("horizontal", "vertical"):
        take = np.zeros((height, width))
        if axis == "horizontal":
            take[:, :-1] += 1.0   # -1 coefficient at (i, j)
            take[:, 1:] += 1.0    # +1 coefficient at (i, j+1)
        else:
            take[:-1, :] += 1.0
            take[1:, :] += 1.0
        grid_colsum += take
    tau = 1.0 / grid_colsum ** (2.0 - a)
    sigma1 = np.ones((height, width))
    row = np.full((height, width), 0.5 ** a)
    sigma2 = row
    return (imaging.Image.from_grid(tau),
            imaging.Image.from_grid(sigma1),
            imaging.Image.from_grid(sigma2))


def rescale_for_admissibility(problem, U, U_i, algorithm="pd2", budget=0.9,
                              mu_target=1.9):
    """Scale metrics so the step-size condition holds with margin.

    Dual metrics are scaled so the weighted norms sum to ``budget`` (< 1);
    for PD2 the primal metric is first capped so zeta*mu stays below
    2 - small margin via ``mu_target``.
    """
    mu = funcs.lipschitz_under_metric(problem.h, U)
    if algorithm == "pd2" and mu > 0:
        # zeta/ (zeta mu) = 1/mu > 1/2 needs mu < 2; leave headroom.
        cap = mu_target / mu
        if cap < 1.0:
            U = U.scaled(cap)
    params = pdsolve.PDParams(U=U, U_i=U_i, max_iter=1)
    terms, _ = pdsolve.weighted_norm_terms(problem, params)
    total = sum(terms)
    scale = budget / total
    return U, [Ui.scaled(scale) for Ui in U_i]


def tuned_diagonal_weights(cfg, w1, w2, threshold=1e-3, probe_iters=None):
    """Pick diagonal weights empirically: try a documented family of
    candidates (the scalar run itself plus operator-scaled weights at a few
    balance exponents) and keep the one reaching ``threshold`` distance to
    a scalar-run reference in the fewest iterations.

    Returns (tau, sigma1, sigma2) Images for ``diagonal_metrics``.
    """
    n = w1.pixels.size
    problem = build_problem(cfg, w1, w2)
    algorithm = cfg.get("algorithm")

    # Reference and scalar baseline.
    U_s, U_i_s = imaging.scalar_metrics(cfg.get("tau"), cfg.get("sigma1"),
                                        cfg.get("sigma2"), n)
    ref_params = pdsolve.PDParams(U=U_s, U_i=U_i_s, lam=cfg.get("lambda"),
                                  max_iter=cfg.get("reference_iters"),
                                  x0=w1.pixels)
    ref_state, _ = pdsolve.run(algorithm, problem, ref_params)
    reference = ref_state.x

    candidates = [("scalar",
                   imaging.Image(w1.width, w1.height, U_s.weights),
                   imaging.Image(w1.width, w1.height, U_i_s[0].weights),
                   imaging.Image(w1.width, w1.height, U_i_s[1].weights[:n]))]
    for a in (1.0, 1.5):
        tau_img, s1_img, s2_img = operator_scaled_weights(w1.width, w1.height, a)
        # match the scalar primal scale so the data-term geometry is kept
        tau_scale = cfg.get("tau") / float(np.max(tau_img.pixels))
        tau_img = imaging.Image(w1.width, w1.height, tau_img.pixels * tau_scale)
        U, U_i = imaging.diagonal_metrics(tau_img, s1_img, s2_img)
        U, U_i = rescale_for_admissibility(problem, U, U_i, algorithm)
        candidates.append((f"operator-scaled a={a}",
                           imaging.Image(w1.width, w1.height, U.weights),
                           imaging.Image(w1.width, w1.height, U_i[0].weights),
                           imaging.Image(w1.width, w1.height, U_i[1].weights[:n])))

    budget = probe_iters if probe_iters is not None else cfg.get("max_iter")
    best = None
    for name, tau_img, s1_img, s2_img in candidates:
        U, U_i = imaging.diagonal_metrics(tau_img, s1_img, s2_img)
        params = pdsolve.PDParams(U=U, U_i=U_i, lam=cfg.get("lambda"),
                                  max_iter=budget, x0=w1.pixels)
        try:
            _, trace = pdsolve.run(algorithm, problem, params,
                                   pdsolve.Diagnostics(reference=reference))
        except pdsolve.InadmissibleError:
            continue
        crossed = [r.n for r in trace if r.dist_to_ref <= threshold]
        iters = crossed[0] if crossed else math.inf
        if best is None or iters < best[0]:
            best = (iters, name, tau_img, s1_img, s2_img)
    _, name, tau_img, s1_img, s2_img = best
    return name, tau_img, s1_img, s2_img


# ---------------------------------------------------------------------------
# Commands


def cmd_degrade(cfg):
    original = _load_original(cfg)
    outdir = cfg.require_path("output")
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = imaging.uniform_kernel(cfg.get("kernel_size"))
    w1, w2, _ = imaging.degrade_pair(original, kernel, cfg.get("theta1_sq"),
                                     cfg.get("theta2_sq"), cfg.get("seed"))
    imaging.write_pgm(w1, outdir / "w1.pgm")
    imaging.write_pgm(w2, outdir / "w2.pgm")
    imaging.write_raw(w1, outdir / "w1.pdf64")
    imaging.write_raw(w2, outdir / "w2.pdf64")
    write_manifest(cfg, outdir / "manifest.cfg")
    print(f"degraded observations written to {outdir}")
    return EXIT_OK


def _load_degraded(cfg):
    outdir = cfg.require_path("output")
    w1_path, w2_path, manifest = _degraded_paths(outdir)
    for p in (w1_path, w2_path, manifest):
        if not p.exists():
            raise ConfigError(f"missing degraded input {p}; run 'degrade' first")
    recorded = parse_config_text(manifest.read_text(encoding="utf-8"))
    for key in ("seed", "kernel_size", "theta1_sq", "theta2_sq"):
        if key in recorded and recorded[key] != cfg.get(key):
            raise ConfigError(
                f"manifest disagrees with config on '{key}' "
                f"({recorded[key]} vs {cfg.get(key)})")
    return imaging.read_raw(w1_path), imaging.read_raw(w2_path)


def _validated_report(cfg, problem, params):
    algorithm = cfg.get("algorithm")
    report = pdsolve.validate(algorithm, problem, params)
    return report


def cmd_validate(cfg):
    original = _load_original(cfg)
    # Admissibility depends only on operators, metrics and variances, so the
    # observations may be absent; zeros keep the identical problem geometry.
    zero = imaging.Image(original.width, original.height,
                         np.zeros(original.pixels.size))
    problem = build_problem(cfg, zero, zero)
    params = build_params(cfg, zero)
    report = _validated_report(cfg, problem, params)
    sys.stdout.write(report.as_text())
    return EXIT_OK if report.admissible else EXIT_INADMISSIBLE


def cmd_reference(cfg):
    w1, w2 = _load_degraded(cfg)
    outdir = cfg.require_path("output")
    problem = build_problem(cfg, w1, w2)
    params = build_params(cfg, w1, max_iter=cfg.get("reference_iters"))
    params.stop_tol = 0.0
    report = _validated_report(cfg, problem, params)
    sys.stdout.write(report.as_text())
    if not report.admissible:
        return EXIT_INADMISSIBLE
    state, _ = pdsolve.run(cfg.get("algorithm"), problem, params)
    imaging.write_raw(imaging.Image(w1.width, w1.height, state.x),
                      outdir / "reference.pdf64")
    print(f"reference written to {outdir / 'reference.pdf64'}")
    return EXIT_OK


def cmd_restore(cfg, include_time=False):
    w1, w2 = _load_degraded(cfg)
    outdir = cfg.require_path("output")
    problem = build_problem(cfg, w1, w2)
    params = build_params(cfg, w1)
    report = _validated_report(cfg, problem, params)
    sys.stdout.write(report.as_text())
    (outdir / "admissibility.txt").write_text(report.as_text(), encoding="utf-8")
    if not report.admissible:
        return EXIT_INADMISSIBLE

    diag = pdsolve.Diagnostics()
    ref_path = cfg.path("reference")
    if ref_path is not None:
        diag.reference = imaging.read_raw(ref_path).pixels
    input_path = cfg.path("input")
    if input_path is not None and input_path.exists():
        diag.snr_reference = imaging.read_pgm(input_path).pixels

    state, trace = pdsolve.run(cfg.get("algorithm"), problem, params, diag)
    restored = imaging.Image(w1.width, w1.height, state.x)
    imaging.write_pgm(restored, outdir / "restored.pgm")
    imaging.write_raw(restored, outdir / "restored.pdf64")
    trace.to_csv(outdir / "trace.csv", include_time=include_time)
    if diag.snr_reference is not None:
        original = imaging.Image(w1.width, w1.height, diag.snr_reference)
        print(f"snr w1 = {imaging.snr_db(original, w1)!r}")
        print(f"snr w2 = {imaging.snr_db(original, w2)!r}")
        print(f"snr restored = {imaging.snr_db(original, restored)!r}")
    print(f"restored image written to {outdir / 'restored.pgm'}")
    return EXIT_OK


def _build_arg_parser():
    ap = argparse.ArgumentParser(
        prog="vmpd",
        description="Primal-dual image restoration experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("degrade", "restore", "reference", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--output", default=None,
                       help="override the config output directory")
        if name == "restore":
            p.add_argument("--reference", default=None,
                           help="raw-float reference for dist_to_ref tracing")
            p.add_argument("--wall-times", action="store_true",
                           help="include wall-clock times in trace.csv "
                                "(breaks byte-determinism)")
    return ap


def main(argv=None):
    args = _build_arg_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output is not None:
        overrides["output"] = args.output
    if getattr(args, "reference", None) is not None:
        overrides["reference"] = args.reference
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "degrade":
            return cmd_degrade(cfg)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "reference":
            return cmd_reference(cfg)
        return cmd_restore(cfg, include_time=getattr(args, "wall_times", False))
    except (ConfigError, imaging.ImageFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except pdsolve.InadmissibleError as e:
        sys.stdout.write(e.report.as_text())
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except pdsolve.DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
