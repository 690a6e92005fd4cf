"""Command-line harness wiring configs to the four experiments.

Commands: synth | bgsub | denoise | inpaint | selftest.  Every command
appends per-run metric rows to a CSV in the output directory; rows are
byte-identical across reruns with the same config and seed, except for
the trailing wall-clock `seconds` column.  Configuration comes from
per-command defaults, overridden by a flat key=value --config file,
overridden by explicit command-line flags.  Errors print a single
machine-readable line on stderr and exit nonzero.

The DPCA_THREADS environment variable caps worker processes for patch
coding.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import imgio, surrogates
from .imaging import (
    METRICS_COLUMNS,
    InpaintTask,
    append_metrics,
    add_gaussian_noise,
    fit_background,
    foreground_mask,
    inpaint,
    paint_missing,
    psnr,
    sigma_for_psnr,
    sse,
)
from .linalg import truncated_svd
from .solvers import DPCA1a, DPCA1b, DPCA2, PlainPCA
from .synth import (
    export_scene,
    fscore_maps,
    generate_scene,
    match_sources,
    moderate_overlap_config,
    significant_overlap_config,
)
from .thresholding import FirmThresholds, firm, soft_adaptive

SOLVER_NAMES = ("pca", "dpca1a", "dpca1b", "dpca2")

SYNTH_COLUMNS = ("case", "algorithm", "lambda", "rho1", "rho2", "K", "seed",
                 "trial", "mean_correlation", "min_correlation",
                 "explained_variance", "iterations", "converged", "seconds")


class CliError(Exception):
    def __init__(self, category: str, detail: str):
        super().__init__(detail)
        self.category = category


DEFAULTS = {
    "synth": dict(solver="dpca1b", k=8, lam=0.67, rho1=0.12, rho2=0.24,
                  scale_lambda=True, trials=15, seed=0, eta_t=0.9,
                  eta_s=0.005, preset="moderate", max_outer=30,
                  max_inner=100, outer_tol=0.01, inner_tol=1e-5,
                  out="out", export_scenes=False, sweep=()),
    "bgsub": dict(solver="dpca1b", k=10, lam=200.0, rho1=4.0, rho2=16.0,
                  scale_lambda=False, seed=0, frames=None, query=None,
                  threshold=None, max_outer=20, max_inner=100,
                  outer_tol=0.01, inner_tol=1e-5, out="out"),
    "denoise": dict(solver="dpca2", k=64, lam=50000.0, rho1=10.0, rho2=45.0,
                    scale_lambda=False, image=None, psnr_in=14.14,
                    patches=20000, stride=1, seed=0, max_outer=20,
                    max_inner=100, outer_tol=0.01, inner_tol=1e-5,
                    out="out"),
    "inpaint": dict(solver="dpca2", k=64, lam=3000.0, rho1=10.0, rho2=40.0,
                    scale_lambda=False, image=None, mask=None,
                    missing_fraction=0.15, sparsity=20, stride=2, seed=0,
                    train_patches=1000, max_outer=10, max_inner=100,
                    outer_tol=0.01, inner_tol=1e-5, out="out"),
    "selftest": dict(seed=0),
}

_BOOL_KEYS = ("scale_lambda", "export_scenes")


def make_solver(name: str, cfg: dict):
    """Build a configured estimator from a resolved config dict."""
    if name not in SOLVER_NAMES:
        raise CliError("config", f"unknown solver '{name}'")
    loop = dict(outer_tol=cfg["outer_tol"], inner_tol=cfg["inner_tol"],
                max_outer=cfg["max_outer"], max_inner=cfg["max_inner"])
    if name == "pca":
        return PlainPCA(n_components=cfg["k"])
    if name == "dpca1a":
        return DPCA1a(n_components=cfg["k"], lam=cfg["lam"],
                      scale_lambda=cfg["scale_lambda"], **loop)
    cls = DPCA1b if name == "dpca1b" else DPCA2
    if cfg["rho1"] is None or cfg["rho2"] is None:
        raise CliError("config", f"solver '{name}' requires --rho1 and --rho2")
    return cls(n_components=cfg["k"], lam=cfg["lam"], rho1=cfg["rho1"],
               rho2=cfg["rho2"], scale_lambda=cfg["scale_lambda"], **loop)


# ---------------------------------------------------------------------------
# Config resolution: defaults <- config file <- explicit flags.
# ---------------------------------------------------------------------------

def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise CliError("missing-input", f"config file not found: {path}")
    values = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError("config", f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            key = key.strip().replace("-", "_")
            if key == "lambda":  # file keys mirror the flag names
                key = "lam"
            values[key] = val.strip()
    return values


def _convert(key: str, raw: str, template):
    try:
        if key in _BOOL_KEYS or isinstance(template, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(template, int) and not isinstance(template, bool):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise CliError("config", f"bad value for {key}: {raw!r}") from exc


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    file_vals = _load_config_file(args.config) if getattr(args, "config", None) else {}
    for key, raw in file_vals.items():
        if key not in cfg:
            raise CliError("config", f"unknown config key '{key}' for {command}")
        template = cfg[key]
        if template is None:
            cfg[key] = raw  # path-like keys default to None
        else:
            cfg[key] = _convert(key, raw, template)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None and val != ():
            cfg[key] = val
    return cfg


def config_from_row(row: dict) -> dict:
    """Recover the solver parameters recorded in a metrics CSV row."""
    out = {"solver": row["algorithm"], "k": int(row["K"])}
    out["lam"] = float(row["lambda"]) if row["lambda"] != "" else 0.0
    out["rho1"] = float(row["rho1"]) if row["rho1"] != "" else None
    out["rho2"] = float(row["rho2"]) if row["rho2"] != "" else None
    if "seed" in row:
        out["seed"] = int(row["seed"])
    return out


def _solver_row_fields(cfg: dict) -> dict:
    plain = cfg["solver"] == "pca"
    no_firm = cfg["solver"] in ("pca", "dpca1a")
    return {
        "algorithm": cfg["solver"],
        "lambda": "" if plain else cfg["lam"],
        "rho1": "" if no_firm else cfg["rho1"],
        "rho2": "" if no_firm else cfg["rho2"],
        "K": cfg["k"],
    }


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------

def _parse_sweep(specs, cfg) -> list[dict]:
    """Parse --sweep KEY=START:STOP:COUNT (or KEY=v1,v2,...) into a list of
    config overrides; multiple keys are zipped into a joint grid."""
    if not specs:
        return [{}]
    grids = {}
    for spec in specs:
        if "=" not in spec:
            raise CliError("config", f"bad sweep spec: {spec!r}")
        key, _, rhs = spec.partition("=")
        key = key.strip().replace("-", "_")
        if key not in ("eta_t", "eta_s", "lam"):
            raise CliError("config", f"cannot sweep '{key}'")
        try:
            if ":" in rhs:
                start, stop, count = rhs.split(":")
                vals = np.linspace(float(start), float(stop), int(count))
            else:
                vals = np.array([float(v) for v in rhs.split(",")])
        except ValueError as exc:
            raise CliError("config", f"bad sweep spec: {spec!r}") from exc
        grids[key] = vals
    lengths = {len(v) for v in grids.values()}
    if len(lengths) != 1:
        raise CliError("config", "joint sweep grids must have equal lengths")
    n = lengths.pop()
    return [{k: float(v[i]) for k, v in grids.items()} for i in range(n)]


def run_synth(cfg: dict) -> int:
    os.makedirs(cfg["out"], exist_ok=True)
    preset = {"moderate": moderate_overlap_config,
              "significant": significant_overlap_config}.get(cfg["preset"])
    if preset is None:
        raise CliError("config", f"unknown preset '{cfg['preset']}'")
    csv_path = os.path.join(cfg["out"], "metrics.csv")
    for i, overrides in enumerate(_parse_sweep(cfg["sweep"], cfg)):
        point = {**cfg, **overrides}
        case = f"synth-{cfg['preset']}" + (f"-sweep{i}" if overrides else "")
        scene_cfg = preset(eta_t=point["eta_t"], eta_s=point["eta_s"])
        rows = []
        corrs = []
        for trial in range(point["trials"]):
            t0 = time.perf_counter()
            trial_seed = point["seed"] + trial
            scene = generate_scene(replace(scene_cfg, seed=trial_seed))
            solver = make_solver(point["solver"], point)
            solver.fit(scene.X)
            m = match_sources(solver.Z_, scene.LV)
            corrs.append(m.mean_correlation)
            rows.append({
                "case": case, **_solver_row_fields(point),
                "seed": trial_seed, "trial": trial,
                "mean_correlation": m.mean_correlation,
                "min_correlation": float(m.correlations.min()),
                "explained_variance": solver.explained_variance_pct_,
                "iterations": solver.n_iter_,
                "converged": str(bool(solver.converged_)).lower(),
                "seconds": time.perf_counter() - t0,
            })
            if point.get("export_scenes") and trial == 0:
                export_scene(os.path.join(cfg["out"], f"{case}-scene"), scene)
        corrs = np.array(corrs)
        for stat, value in (("mean", corrs.mean()), ("std", corrs.std())):
            rows.append({"case": case, **_solver_row_fields(point),
                         "seed": point["seed"], "trial": stat,
                         "mean_correlation": float(value)})
        append_metrics(csv_path, rows, columns=SYNTH_COLUMNS)
        print(f"{case}: solver={point['solver']} trials={point['trials']} "
              f"mean_correlation={corrs.mean():.4f} std={corrs.std():.4f}")
    return 0


def _load_stack(cfg: dict):
    if cfg["frames"]:
        if not os.path.isdir(cfg["frames"]):
            raise CliError("missing-input", f"frame directory not found: {cfg['frames']}")
        from .imaging import FrameStack
        return FrameStack(frames=imgio.read_stack(cfg["frames"])), None, "bgsub-user"
    stack, gt = surrogates.moving_square_stack()
    return stack, gt, "bgsub-square"


def run_bgsub(cfg: dict) -> int:
    os.makedirs(cfg["out"], exist_ok=True)
    stack, gt, case = _load_stack(cfg)
    t0 = time.perf_counter()
    solver = make_solver(cfg["solver"], cfg)
    model = fit_background(stack, solver)
    row = {"case": case, **_solver_row_fields(cfg)}
    if gt is not None:
        scores = []
        for i in range(stack.n_frames):
            mask = foreground_mask(model, i, threshold=cfg["threshold"])
            scores.append(fscore_maps(mask.astype(float).ravel(), gt[i].ravel(),
                                      binarize_rule=lambda v: v > 0.5))
        p, r, f = np.array(scores).mean(axis=0)
        row.update(precision=float(p), recall=float(r), fscore=float(f))
        print(f"{case}: solver={cfg['solver']} mean F={f:.4f} "
              f"(precision {p:.4f}, recall {r:.4f})")
    query = cfg["query"] if cfg["query"] is not None else stack.n_frames // 2
    mask = foreground_mask(model, int(query), threshold=cfg["threshold"])
    imgio.write_pgm(os.path.join(cfg["out"], f"{case}-foreground.pgm"),
                    mask.astype(float) * 255.0)
    row["seconds"] = time.perf_counter() - t0
    append_metrics(os.path.join(cfg["out"], "metrics.csv"), [row])
    return 0


def _load_image(cfg: dict, case_prefix: str):
    if cfg["image"]:
        if not os.path.exists(cfg["image"]):
            raise CliError("missing-input", f"image not found: {cfg['image']}")
        name = os.path.splitext(os.path.basename(cfg["image"]))[0]
        return imgio.read_pgm(cfg["image"]), f"{case_prefix}-{name}"
    return surrogates.piecewise_image(256), f"{case_prefix}-surrogate"


def run_denoise(cfg: dict) -> int:
    from .imaging import denoise
    os.makedirs(cfg["out"], exist_ok=True)
    clean, case = _load_image(cfg, "denoise")
    sigma = sigma_for_psnr(cfg["psnr_in"])
    noisy = add_gaussian_noise(clean, sigma, seed=cfg["seed"])
    t0 = time.perf_counter()
    solver = make_solver(cfg["solver"], cfg)
    out, _, _ = denoise(noisy, solver, count_cap=cfg["patches"],
                        stride=cfg["stride"], seed=cfg["seed"])
    seconds = time.perf_counter() - t0
    imgio.write_pgm(os.path.join(cfg["out"], f"{case}-noisy.pgm"), noisy)
    imgio.write_pgm(os.path.join(cfg["out"], f"{case}-{cfg['solver']}.pgm"), out)
    row = {"case": case, **_solver_row_fields(cfg),
           "psnr_in": psnr(noisy, clean), "psnr_out": psnr(out, clean),
           "sse": sse(out, clean), "seconds": seconds}
    append_metrics(os.path.join(cfg["out"], "metrics.csv"), [row])
    print(f"{case}: solver={cfg['solver']} psnr_in={row['psnr_in']:.2f} "
          f"psnr_out={row['psnr_out']:.2f}")
    return 0


def run_inpaint(cfg: dict) -> int:
    os.makedirs(cfg["out"], exist_ok=True)
    clean, case = _load_image(cfg, "inpaint")
    if cfg["mask"]:
        if not os.path.exists(cfg["mask"]):
            raise CliError("missing-input", f"mask not found: {cfg['mask']}")
        known = imgio.read_pgm(cfg["mask"]) > 0
        if known.shape != clean.shape:
            raise CliError("config", "mask dimensions must equal image dimensions")
    else:
        known = surrogates.text_mask(clean.shape, fraction=cfg["missing_fraction"],
                                     seed=cfg["seed"])
    train = surrogates.corpus_patches(per_image=cfg["train_patches"])
    t0 = time.perf_counter()
    solver = make_solver(cfg["solver"], cfg)
    solver.fit(train)
    masked = paint_missing(clean, known, 0.0)
    task = InpaintTask(image=masked, known=known, sparsity=cfg["sparsity"],
                       stride=cfg["stride"])
    workers = int(os.environ.get("DPCA_THREADS", "1") or "1")
    out, info = inpaint(task, solver.U_, original=clean, workers=max(workers, 1))
    seconds = time.perf_counter() - t0
    imgio.write_pgm(os.path.join(cfg["out"], f"{case}-masked.pgm"), masked)
    imgio.write_pgm(os.path.join(cfg["out"], f"{case}-mask.pgm"),
                    known.astype(float) * 255.0)
    imgio.write_pgm(os.path.join(cfg["out"], f"{case}-{cfg['solver']}.pgm"), out)
    row = {"case": case, **_solver_row_fields(cfg),
           "psnr_in": psnr(masked, clean), "psnr_out": info["psnr"],
           "sse": info["sse"], "seconds": seconds}
    append_metrics(os.path.join(cfg["out"], "metrics.csv"), [row])
    print(f"{case}: solver={cfg['solver']} psnr_in={row['psnr_in']:.2f} "
          f"psnr_out={row['psnr_out']:.2f} sse={row['sse']:.4g}")
    return 0


def run_selftest(cfg: dict) -> int:
    """Quick invariant suites: exact-recovery reduction and thresholding
    algebra; prints one line per check."""
    rng = np.random.default_rng(cfg["seed"])
    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"selftest {name}: {'ok' if ok else 'FAIL'}")
        failures += 0 if ok else 1

    for k in (1, 4):
        X = rng.standard_normal((40, 4)) @ rng.standard_normal((4, 60))
        X = X[:, :50] if k == 1 else X  # vary shapes a little
        for name, est in (("dpca1a", DPCA1a(k, lam=0.0)),
                          ("dpca1b", DPCA1b(k, lam=0.0, rho1=0.0, rho2=1e12)),
                          ("dpca2", DPCA2(k, lam=0.0, rho1=0.0, rho2=1e12))):
            est.fit(X)
            Xc = X - X.mean(axis=0)
            svd = truncated_svd(Xc, k)
            best = svd.U @ np.diag(svd.d) @ svd.Z
            rel = np.linalg.norm(best - est.U_ @ est.Z_) / np.linalg.norm(Xc)
            check(f"zero-penalty reduction {name} K={k}", rel <= 1e-6)

    y = rng.standard_normal(10_000) * 10.0
    lam = 2.0
    t = FirmThresholds(1.0, 2.0)
    s = soft_adaptive(y, lam)
    f = firm(y, t)
    check("soft odd", np.allclose(soft_adaptive(-y, lam), -s))
    check("firm odd", np.allclose(firm(-y, t), -f))
    check("soft non-expansive", np.all(np.abs(s) <= np.abs(y) + 1e-12))
    check("firm non-expansive", np.all(np.abs(f) <= np.abs(y) + 1e-12))
    ys = np.sort(np.abs(y))
    check("soft monotone", np.all(np.diff(soft_adaptive(ys, lam)) >= -1e-12))
    check("firm monotone", np.all(np.diff(firm(ys, t)) >= -1e-12))
    print(f"selftest: {'PASS' if failures == 0 else f'{failures} FAILURES'}")
    return 0 if failures == 0 else 1


COMMANDS = {
    "synth": run_synth,
    "bgsub": run_bgsub,
    "denoise": run_denoise,
    "inpaint": run_inpaint,
    "selftest": run_selftest,
}


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--config", help="flat key=value config file")
    sp.add_argument("--solver", choices=SOLVER_NAMES)
    sp.add_argument("--lambda", dest="lam", type=float,
                    help="sparsity penalty (raw, unless --scale-lambda)")
    sp.add_argument("--rho1", type=float, help="firm threshold kill level")
    sp.add_argument("--rho2", type=float, help="firm threshold keep level")
    sp.add_argument("--k", type=int, help="component count")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--scale-lambda", action=argparse.BooleanOptionalAction,
                    default=None, help="multiply lambda by sqrt(n*p)")
    sp.add_argument("--max-outer", type=int, dest="max_outer")
    sp.add_argument("--max-inner", type=int, dest="max_inner")
    sp.add_argument("--outer-tol", type=float, dest="outer_tol")
    sp.add_argument("--inner-tol", type=float, dest="inner_tol")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpca",
        description="Dissociative PCA experiments: synthetic source "
                    "separation, background subtraction, denoising, inpainting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="synthetic source-recovery trials")
    _add_common(sp)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--preset", choices=("moderate", "significant"))
    sp.add_argument("--eta-t", type=float, dest="eta_t", help="temporal noise variance")
    sp.add_argument("--eta-s", type=float, dest="eta_s", help="spatial noise variance")
    sp.add_argument("--sweep", action="append", default=None,
                    metavar="KEY=START:STOP:COUNT",
                    help="sweep eta_t / eta_s / lam; repeated keys are zipped")
    sp.add_argument("--export-scenes", action=argparse.BooleanOptionalAction,
                    default=None, dest="export_scenes")

    sp = sub.add_parser("bgsub", help="background subtraction")
    _add_common(sp)
    sp.add_argument("--frames", help="directory of PGM frames (default: shipped surrogate)")
    sp.add_argument("--query", type=int, help="frame index for mask export")
    sp.add_argument("--threshold", type=float, help="fixed foreground threshold")

    sp = sub.add_parser("denoise", help="patch-based denoising")
    _add_common(sp)
    sp.add_argument("--image", help="clean PGM image (default: shipped surrogate)")
    sp.add_argument("--psnr-in", type=float, dest="psnr_in", help="noise level as target PSNR")
    sp.add_argument("--patches", type=int, help="training patch cap")
    sp.add_argument("--stride", type=int)

    sp = sub.add_parser("inpaint", help="mask-aware OMP inpainting")
    _add_common(sp)
    sp.add_argument("--image", help="clean PGM image (default: shipped surrogate)")
    sp.add_argument("--mask", help="PGM mask, 0 = missing (default: synthetic text)")
    sp.add_argument("--missing-fraction", type=float, dest="missing_fraction")
    sp.add_argument("--sparsity", type=int)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--train-patches", type=int, dest="train_patches",
                    help="corpus patches per training image")

    sp = sub.add_parser("selftest", help="run built-in invariant checks")
    sp.add_argument("--config", help="flat key=value config file")
    sp.add_argument("--seed", type=int)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver/runtime failures, still one line
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
