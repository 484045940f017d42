"""Search width/depth knobs so each architecture's parameter count lands near its reference.

Run once offline; the chosen plans are copied into ``nnuzoo/models/presets.py``
and this script regenerates ``docs/calibration.md`` from whatever plans are
currently committed (``--search`` prints the search results as well).

    python3 tools/calibrate.py [--search] [--out docs/calibration.md]
"""
from __future__ import annotations

import argparse
import copy
import itertools
import json
from pathlib import Path

from nnuzoo.models import (ARCHITECTURES, PAPER_DATASETS, REFERENCE_PARAMS_M, build_model, count_params,
                           preset_config)
from nnuzoo.models.presets import DATASETS, U2_DEC, U2_ENC

TOL = 0.10
COUNT_PRESET = "AbdomenCT"


def count(arch: str, dataset: str = COUNT_PRESET, plan: dict | None = None) -> int:
    cfg = preset_config(arch, dataset)
    if plan is not None:
        cfg = cfg.replace(plan=plan)
    return count_params(build_model(arch, cfg, device="meta"))


def _round8(v: float) -> int:
    return max(8, int(round(v / 8)) * 8)


def _scaled_u2(f: float):
    return ([[_round8(m * f), _round8(o * f)] for m, o in U2_ENC],
            [[_round8(m * f), _round8(o * f)] for m, o in U2_DEC])


def plain_strides(hw, n_stages: int, min_size: int = 4):
    """Halve each axis while it stays even and at least ``min_size``; None if too few poolings."""
    h, w = hw
    strides = []
    for _ in range(n_stages - 1):
        sh = 2 if h % 2 == 0 and h // 2 >= min_size else 1
        sw = 2 if w % 2 == 0 and w // 2 >= min_size else 1
        if sh == sw == 1:
            return None
        strides.append([sh, sw])
        h, w = h // sh, w // sw
    return strides


def candidates(arch: str, base: dict, dataset: str):
    """Yield (knob description, plan) pairs."""
    def with_(**kw):
        p = copy.deepcopy(base)
        for k, v in kw.items():
            if k == "attrs":
                p["attrs"] = {**p.get("attrs", {}), **v}
            else:
                p[k] = v
        return p

    if arch == "nnUNet-like":
        for n, cap, conv in itertools.product(range(5, 10), (256, 320, 384, 448, 512), (2, 3, 4)):
            strides = plain_strides(DATASETS[dataset].patch, n)
            if strides is None:
                continue
            feats = [min(32 * 2 ** i, cap) for i in range(n)]
            yield f"stages={n} cap={cap} convs={conv}", with_(features=feats, strides=strides, convs_per_stage=conv)
    elif arch == "UNETR":
        for mid, dec in itertools.product((16, 32, 48, 64, 96, 128), (1, 2, 3)):
            yield f"mid={mid} dec_convs={dec}", with_(mid=mid, attrs={"dec_convs": dec})
    elif arch == "SwT":
        for mid in (64, 80, 96, 112, 128):
            yield f"mid={mid}", with_(mid=mid)
    elif arch in ("SwinUMamba", "SegMamba", "LightUMamba"):
        for c in range(16, 129, 4):
            yield f"base_dim={c}", with_(dims=[c, 2 * c, 4 * c, 8 * c])
    elif arch == "UNETR2Net":
        for e, n in itertools.product((128, 192, 256, 320, 384, 448, 512), (2, 3, 4, 6)):
            yield f"embed_dim={e} layers={n}", with_(attrs={"embed_dim": e, "layers": n, "heads": max(1, e // 64)})
    elif arch in ("SwT2Net", "SS2D2Net", "MambaND2Net"):
        for n, g in itertools.product(range(1, 15), (1, 2)):
            yield f"layers={n} growth={g}", with_(attrs={"layers": n, "growth": g})
    elif arch == "Alt1DM2Net":
        for f, n in itertools.product((0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.6), (1, 2)):
            enc, dec = _scaled_u2(f)
            yield f"channels x{f} layers={n}", with_(enc=enc, dec=dec, attrs={"layers": n})
    elif arch in ("SS2D2NetS", "Alt1DM2NetS"):
        for n, g, e in itertools.product(range(1, 7), (1, 2), (2, 3, 4)):
            yield f"layers={n} growth={g} expand={e}", with_(attrs={"layers": n, "growth": g, "expand": e})
    else:
        yield "default", base


def search(arch: str, dataset: str = COUNT_PRESET):
    target = REFERENCE_PARAMS_M[arch][PAPER_DATASETS.index(dataset)] * 1e6
    base = preset_config(arch, dataset).plan
    best = None
    for desc, plan in candidates(arch, base, dataset):
        n = count(arch, dataset, plan)
        rel = (n - target) / target
        if best is None or abs(rel) < abs(best[2]):
            best = (desc, plan, rel, n)
    return best


def report_rows():
    rows = []
    for arch in ARCHITECTURES:
        cells = []
        for ds in PAPER_DATASETS:
            ref = REFERENCE_PARAMS_M[arch][PAPER_DATASETS.index(ds)]
            n = count(arch, ds) / 1e6
            cells.append((n, ref, (n - ref) / ref))
        rows.append((arch, cells))
    return rows


def write_markdown(rows, path: Path) -> None:
    lines = ["# Parameter calibration", "",
             "Counts in millions from `count_params` on the committed presets, next to the reference",
             f"counts. Relative gaps beyond ±{TOL:.0%} are marked with `!`. Regenerate with",
             "`python3 tools/calibrate.py`.", "",
             "| Architecture | " + " | ".join(PAPER_DATASETS) + " |",
             "|---|" + "---|" * len(PAPER_DATASETS)]
    for arch, cells in rows:
        out = []
        for n, ref, rel in cells:
            flag = " !" if abs(rel) > TOL else ""
            out.append(f"{n:.2f} / {ref:.2f} ({rel:+.1%}){flag}")
        lines.append(f"| {arch} | " + " | ".join(out) + " |")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--search", action="store_true", help="run the knob search and print chosen plans")
    ap.add_argument("--archs", nargs="*", default=list(ARCHITECTURES))
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "docs" / "calibration.md"))
    args = ap.parse_args(argv)
    if args.search:
        for arch in args.archs:
            datasets = PAPER_DATASETS if arch == "nnUNet-like" else (COUNT_PRESET,)
            for ds in datasets:
                desc, plan, rel, n = search(arch, ds)
                print(f"{arch:12s} {ds:10s} {n / 1e6:9.3f}M {rel:+7.1%}  {desc}")
                print("    " + json.dumps(plan))
        return
    write_markdown(report_rows(), Path(args.out))
    print(Path(args.out).read_text())


if __name__ == "__main__":
    main()
