"""Command-line surface: phantom, flatten, synth-pano, fitting, warp, eval.

Exit codes: 0 success, 1 usage error, 2 data error. All numeric output uses
fixed 6-decimal formatting for diffable logs; binary/data files keep full
precision. Randomness is seeded via --seed; the numpy kernels are
deterministic regardless of --threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import attention
from .cpr import CprConfig, flatten, inverse_map_grid, synth_panorama
from .errors import ArchVolError
from .fitting import (
    FitReport,
    clip_extremes,
    fit_lattice,
    loss_clip,
    oob,
    run_supervision,
    tv,
)
from .io import (
    read_arch,
    read_lattice,
    read_volume,
    write_arch,
    write_lattice,
    write_panorama_pgm,
    write_report,
    write_volume,
)
from .lattice import upsample_lattice, warp
from .metrics import binarize_shared_threshold, dsc, hd95, psnr, ssim3d
from .phantom import PhantomSpec, make_phantom
from .volume import normalize_minmax


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected DxHxW, got {text!r}")
    return tuple(int(p) for p in parts)


def _parse_pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected a,b, got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected a,b,c, got {text!r}")
    return tuple(float(p) for p in parts)


def _print_values(values: dict) -> None:
    for name, value in values.items():
        if isinstance(value, float):
            print(f"{name} = {value:.6f}")
        else:
            print(f"{name} = {value}")


def _rounded(values: dict) -> dict:
    return {
        k: (round(v, 6) if isinstance(v, float) else v) for k, v in values.items()
    }


def _report_dict(report: FitReport) -> dict:
    doc = {
        "iterations": report.iterations,
        "residual": report.residual,
        "wall_time_s": report.wall_time_s,
    }
    doc.update(report.loss_terms)
    return doc


def build_parser() -> _Parser:
    parser = _Parser(prog="archvol", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="RNG seed (phantom, selfcheck)")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="thread budget; kernels are deterministic regardless")
    parser.add_argument("--report", type=str, default=None,
                        help="write a JSON report of the run to this path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[], help="synthesize the arch phantom")
    p.add_argument("--teeth", type=int, default=14)
    p.add_argument("--dims", type=_parse_dims, default=(64, 64, 128))
    p.add_argument("--tooth-radius", type=float, default=0.06)
    p.add_argument("--band-thickness", type=float, default=0.22)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("flatten", help="flatten a native volume into canonical space")
    p.add_argument("--volume", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--canonical-dims", type=_parse_dims, default=(48, 64, 128))
    p.add_argument("--depth-range", type=_parse_pair, default=(-0.35, 0.35))
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth-pano", help="project a canonical volume to a panorama")
    p.add_argument("--volume", required=True)
    p.add_argument("--projection", choices=["mean", "max"], default="mean")
    p.add_argument("--out", required=True, help="output PGM path")

    for name, extra in (("fit-lattice", False), ("fit-supervision", True)):
        p = sub.add_parser(
            name,
            help=(
                "fit a control lattice to the analytic correspondence grid"
                + (" (full five-step supervision run)" if extra else "")
            ),
        )
        p.add_argument("--arch", required=True)
        p.add_argument("--native-dims", type=_parse_dims, default=(64, 64, 128))
        p.add_argument("--depth-range", type=_parse_pair, default=(-0.35, 0.35))
        p.add_argument("--lattice-dims", type=_parse_dims, default=(8, 8, 16))
        p.add_argument("--lambda-tv", type=float, default=1e-3)
        p.add_argument("--lambda-oob", type=float, default=1.0)
        p.add_argument("--lambda-clip", type=float, default=0.01)
        p.add_argument("--reduce", choices=["sum", "mean"], default="sum")
        if extra:
            p.add_argument("--clip-tau", type=float, default=0.5)
            p.add_argument("--out-dir", required=True)
        else:
            p.add_argument("--clip-tau", type=float, default=None,
                           help="also clip extreme displacements before writing")
            p.add_argument("--out", required=True)

    p = sub.add_parser("warp", help="warp a canonical volume through a lattice")
    p.add_argument("--volume", required=True, help="canonical volume header")
    p.add_argument("--lattice", required=True)
    p.add_argument("--out-dims", type=_parse_dims, default=(64, 64, 128))
    p.add_argument("--spacing", type=_parse_triple, default=(1.0, 1.0, 1.0))
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="reconstruction metrics between two volumes")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--peak", type=float, default=1.0)

    sub.add_parser("acf-selfcheck", help="run the attention invariant suite")

    return parser


def cmd_phantom(args) -> dict:
    spec = PhantomSpec(
        teeth=args.teeth,
        tooth_radius=args.tooth_radius,
        band_thickness=args.band_thickness,
        seed=args.seed,
    )
    vol, curve = make_phantom(spec, args.dims)
    os.makedirs(args.out, exist_ok=True)
    write_volume(vol, os.path.join(args.out, "native.json"))
    write_arch(curve, os.path.join(args.out, "arch.json"))
    return {
        "teeth": args.teeth,
        "seed": args.seed,
        "voxels": int(np.prod(args.dims)),
        "foreground_fraction": float((vol.data > spec.bg_intensity).mean()),
    }


def cmd_flatten(args) -> dict:
    vol = read_volume(args.volume)
    curve = read_arch(args.arch)
    cfg = CprConfig(args.canonical_dims, args.depth_range)
    canonical = flatten(vol, curve, cfg)
    write_volume(canonical, args.out)
    return {
        "canonical_dims": "x".join(str(d) for d in cfg.canonical_dims),
        "value_min": float(canonical.data.min()),
        "value_max": float(canonical.data.max()),
    }


def cmd_synth_pano(args) -> dict:
    vol = read_volume(args.volume)
    pano = synth_panorama(vol, projection=args.projection)
    write_panorama_pgm(pano, args.out)
    return {
        "height": pano.shape[0],
        "width": pano.shape[1],
        "pano_min": float(pano.min()),
        "pano_max": float(pano.max()),
    }


def _fit_common(args):
    curve = read_arch(args.arch)
    # canonical dims play no role in the inverse correspondence
    cfg = CprConfig(depth_range=args.depth_range)
    return curve, cfg


def cmd_fit_lattice(args) -> dict:
    curve, cfg = _fit_common(args)
    grid, mask = inverse_map_grid(curve, cfg, args.native_dims)
    lat, report = fit_lattice(grid, mask, args.lattice_dims, args.lambda_tv, args.reduce)
    out_lat = lat
    if args.clip_tau is not None:
        out_lat = clip_extremes(lat, args.clip_tau)
    write_lattice(out_lat, args.out)
    doc = _report_dict(report)
    doc["clip_l1"] = loss_clip(lat, args.reduce)
    doc["oob"] = oob(lat, args.reduce)
    doc["mask_fraction"] = float(mask.mean())
    return doc


def cmd_fit_supervision(args) -> dict:
    curve, cfg = _fit_common(args)
    pstar, pstar_clip, grid, mask, report = run_supervision(
        curve, cfg, args.native_dims, args.lattice_dims, args.lambda_tv, args.clip_tau
    )
    os.makedirs(args.out_dir, exist_ok=True)
    write_lattice(pstar, os.path.join(args.out_dir, "pstar.json"))
    write_lattice(pstar_clip, os.path.join(args.out_dir, "pstar_clip.json"))
    doc = _report_dict(report)
    doc["mask_fraction"] = float(mask.mean())
    doc["tv_clip"] = tv(pstar_clip, args.reduce)
    doc["oob_clip"] = oob(pstar_clip, args.reduce)
    return doc


def cmd_warp(args) -> dict:
    vol = read_volume(args.volume)
    lat = read_lattice(args.lattice)
    grid = upsample_lattice(lat, args.out_dims)
    out = warp(vol, grid, spacing=args.spacing)
    write_volume(out, args.out)
    return {
        "out_dims": "x".join(str(d) for d in out.dims),
        "value_min": float(out.data.min()),
        "value_max": float(out.data.max()),
    }


def cmd_eval(args) -> dict:
    pred = read_volume(args.pred)
    gt = read_volume(args.gt)
    norm_pred = normalize_minmax(pred)
    norm_gt = normalize_minmax(gt)
    m_pred, m_gt, mu = binarize_shared_threshold(pred, gt)
    return {
        "psnr_db": psnr(norm_pred, norm_gt, peak=args.peak),
        "ssim": ssim3d(norm_pred, norm_gt),
        "dsc": dsc(m_pred, m_gt),
        "hd95_mm": hd95(m_pred, m_gt),
        "mu_gt": mu,
    }


def cmd_acf_selfcheck(args) -> dict:
    results = attention_selfcheck(seed=args.seed)
    doc = {}
    ok_all = True
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        doc[name] = "pass" if ok else "fail"
        ok_all &= ok
    doc["all"] = "pass" if ok_all else "fail"
    if not ok_all:
        raise ArchVolError("acf selfcheck failed")
    return doc


def attention_selfcheck(seed: int = 0):
    """Invariant suite over seeded random weights; returns (name, ok, detail)."""
    rng = np.random.default_rng(seed)
    results = []

    c_r, c_phi, c_s, d, c_out = 6, 5, 4, 3, 7
    h, w = 4, 6
    weights = attention.seeded_level_weights(c_r, c_phi, c_s, d, c_out, seed=seed)
    fr = attention.FeatureMap(rng.normal(size=(c_r, h, w)))
    phi = attention.FeatureMap(rng.normal(size=(c_phi, 9, 11)))
    fs_map = attention.align_semantic(phi, weights.proj, (h, w))
    xr = attention.tokens_from_map(fr)
    xs = attention.tokens_from_map(fs_map)

    _, attn = attention.cross_attention(xr, xs, weights, return_weights=True)
    row_err = float(np.abs(attn.sum(axis=1) - 1.0).max())
    in_range = bool(np.all((attn >= 0.0) & (attn <= 1.0)))
    results.append((
        "softmax_rows_stochastic",
        row_err <= 1e-6 and in_range,
        f"max row-sum error {row_err:.2e}",
    ))

    gated = attention.gated_residual(xr, attention.cross_attention(xr, xs, weights), 0.0)
    identical = bool(np.array_equal(gated.data, xr.data))
    results.append(("gate_zero_identity", identical, "alpha=0 output equals input"))

    perm = rng.permutation(xs.data.shape[0])
    xs_perm = attention.TokenSeq(xs.data[perm], xs.origin)
    out_a = attention.cross_attention(xr, xs, weights).data
    out_b = attention.cross_attention(xr, xs_perm, weights).data
    perm_err = float(np.abs(out_a - out_b).max())
    results.append((
        "key_value_permutation_invariance",
        perm_err <= 1e-9,
        f"max deviation {perm_err:.2e}",
    ))

    levels = []
    lh, lw = 16, 32
    for level in range(5):
        wts = attention.seeded_level_weights(c_r, c_phi, c_s, d, c_out, seed=seed + level)
        fr_l = attention.FeatureMap(rng.normal(size=(c_r, lh, lw)))
        phi_l = attention.FeatureMap(rng.normal(size=(c_phi, 13, 17)))
        levels.append((fr_l, phi_l, wts, (lh, lw)))
        lh, lw = max(1, lh // 2), max(1, lw // 2)
    fused = attention.acf_forward(levels)
    shapes_ok = all(
        f.data.shape == (c_out,) + tuple(lv[3]) for f, lv in zip(fused, levels)
    )
    results.append((
        "pyramid_shape_contract",
        shapes_ok,
        "5 levels " + ", ".join(str(f.data.shape) for f in fused),
    ))

    probe_w = dataclasses.replace(weights, alpha=0.37)
    _, grads = attention.probe_value_and_grads(fr, fs_map, probe_w)
    eps = 1e-6
    worst = 0.0
    for key in ("alpha", "wq", "wk", "wv", "wo", "mix"):
        base = np.asarray(getattr(probe_w, key), dtype=np.float64)
        gflat = np.atleast_1d(grads[key]).ravel()
        flat = np.atleast_1d(base).ravel()
        picks = rng.choice(flat.size, size=min(5, flat.size), replace=False)
        for idx in picks:

            def probe_at(delta):
                bumped = flat.copy()
                bumped[idx] += delta
                new_val = float(bumped[0]) if base.ndim == 0 else bumped.reshape(base.shape)
                return attention.probe_value_and_grads(
                    fr, fs_map, dataclasses.replace(probe_w, **{key: new_val})
                )[0]

            fd = (probe_at(eps) - probe_at(-eps)) / (2 * eps)
            rel = abs(fd - gflat[idx]) / max(abs(gflat[idx]), 1e-8)
            worst = max(worst, rel)
    results.append((
        "probe_gradient_fidelity",
        worst <= 1e-4,
        f"max relative FD error {worst:.2e}",
    ))
    return results


_COMMANDS = {
    "phantom": cmd_phantom,
    "flatten": cmd_flatten,
    "synth-pano": cmd_synth_pano,
    "fit-lattice": cmd_fit_lattice,
    "fit-supervision": cmd_fit_supervision,
    "warp": cmd_warp,
    "eval": cmd_eval,
    "acf-selfcheck": cmd_acf_selfcheck,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        result = _COMMANDS[args.command](args)
    except ArchVolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_values(result)
    if args.report:
        write_report(_rounded(result), args.report)
    return 0


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
