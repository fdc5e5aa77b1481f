#!/usr/bin/env python3
"""Regenerate the committed golden files under tests/golden/.

Inputs are small seeded-random tensors.  Every *expected* output is computed
here by the scalar reference code in tests/oracles.py (plain per-element
loops), not by the library, so the goldens stay an independent check on the
shipped kernels.  Parameter bundles are written through the library's own
savers because they are inputs, not expectations.

Run from anywhere:  python3 scripts/gen_goldens.py
"""

import json
import os
import sys

import numpy as np

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
GOLD = os.path.join(ROOT, "tests", "golden")
sys.path.insert(0, os.path.join(ROOT, "tests"))
sys.path.insert(0, os.path.join(ROOT, "src"))

import oracles  # noqa: E402
from panocc import amoe3d  # noqa: E402
from panocc.ptns import write_ptns  # noqa: E402

CALIB = {
    "a": [0.0, 40.0, -5.0],
    "u0": 64.0,
    "v0": 64.0,
    "A": [[1.0, 0.0], [0.0, 1.0]],
    "theta_min": 0.15,
    "theta_max": 1.9,
    "w_raw": 128,
    "h_raw": 128,
    "v_flip": False,
}

EQUI_W, EQUI_H = 96, 48

LIFT_GRID = dict(nx=6, ny=6, nz=2, x0=-1.5, y0=-1.5, z0=-0.5, dx=0.5, dy=0.5, dz=0.5)
FUSE_CA = dict(nx=4, ny=4, nz=2, x0=-1.07, y0=-1.0, z0=-0.5, dx=0.5, dy=0.5, dz=0.5)
FUSE_PO = dict(nr=2, nphi=4, nz=2, r0=0.0, r1=1.8, z0=-0.5, dz=0.5)


def f32(arr):
    """Round to the float32 values a tensor file stores, back in float64."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


def cartesian_centroid_list(g):
    out = []
    for k in range(g["nz"]):
        for j in range(g["ny"]):
            for i in range(g["nx"]):
                out.append((
                    g["x0"] + (i + 0.5) * g["dx"],
                    g["y0"] + (j + 0.5) * g["dy"],
                    g["z0"] + (k + 0.5) * g["dz"],
                ))
    return out


def gen_unwrap():
    raw = np.random.default_rng(1).random((128, 128)).astype(np.float32)
    write_ptns(os.path.join(GOLD, "raw.ptns"), raw)
    with open(os.path.join(GOLD, "calib.json"), "w", encoding="utf-8") as fh:
        json.dump(CALIB, fh, indent=2, sort_keys=True)
        fh.write("\n")
    su, sv, valid = oracles.remap_table_scalar(EQUI_W, EQUI_H, CALIB)
    plane = oracles.bilinear_scalar(
        raw.astype(np.float64)[:, :, None], su, sv, valid, 0.0
    )
    write_ptns(os.path.join(GOLD, "expected_unwrap.ptns"), plane.astype(np.float32))
    write_ptns(os.path.join(GOLD, "expected_unwrap_mask.ptns"),
               valid.astype(np.uint8))


def gen_lift():
    rng = np.random.default_rng(3)
    plane = rng.random((EQUI_H, EQUI_W, 2)).astype(np.float32)
    write_ptns(os.path.join(GOLD, "lift_plane.ptns"), plane)
    gdc_dir = os.path.join(GOLD, "gdc")
    os.makedirs(gdc_dir, exist_ok=True)
    w = (0.1 * np.random.default_rng(4).standard_normal((2, 2))).astype(np.float32)
    b = np.array([0.4, -0.2], dtype=np.float32)
    write_ptns(os.path.join(gdc_dir, "gdc_weights.ptns"), w)
    write_ptns(os.path.join(gdc_dir, "gdc_bias.ptns"), b)

    pf = plane.astype(np.float64)
    pooled = np.array([
        sum(float(pf[j, i, ch]) for j in range(EQUI_H) for i in range(EQUI_W))
        / (EQUI_H * EQUI_W)
        for ch in range(2)
    ])
    delta = pooled @ w.astype(np.float64) + b.astype(np.float64)

    cents = cartesian_centroid_list(LIFT_GRID)
    data, valid = oracles.lift_equi_scalar(cents, CALIB, pf, delta=tuple(delta))
    write_ptns(os.path.join(GOLD, "expected_lift.ptns"), data.astype(np.float32))
    write_ptns(os.path.join(GOLD, "expected_lift_valid.ptns"),
               valid.astype(np.uint8))


def fuse_params():
    rng = np.random.default_rng(7)
    align = dict(
        weights=0.5 * rng.standard_normal((3, 2)),
        bias=0.1 * rng.standard_normal(2),
    )
    saliency = dict(
        mlp_w1=0.4 * rng.standard_normal((4, 2)),
        mlp_b1=0.1 * rng.standard_normal(2),
        mlp_w2=0.4 * rng.standard_normal((2, 4)),
        mlp_b2=0.1 * rng.standard_normal(4),
        spatial_kernel=0.05 * rng.standard_normal((2, 7, 7, 7)),
        spatial_bias=0.1,
    )
    moe = dict(
        expert_w1=0.3 * rng.standard_normal((3, 4, 4)),
        expert_b1=0.1 * rng.standard_normal((3, 4)),
        expert_w2=0.3 * rng.standard_normal((3, 4, 4)),
        expert_b2=0.1 * rng.standard_normal((3, 4)),
        gating_kernel=0.2 * rng.standard_normal((3, 3, 3, 3)),
        gating_bias=0.1 * rng.standard_normal(3),
    )
    return align, saliency, moe


def cross_indices_scalar(ca, po):
    """Containing polar bin of each Cartesian centroid, boundary to the
    lower bin, in flat order."""
    dr = (po["r1"] - po["r0"]) / po["nr"]
    dphi = oracles.TWO_PI / po["nphi"]
    idx = []
    for x, y, z in cartesian_centroid_list(ca):
        r = float(np.hypot(x, y))
        phi = float(np.arctan2(y, x))
        p = oracles.bin_lower_scalar(r - po["r0"], dr, po["nr"])
        q = 0 if (x == 0.0 and y == 0.0) else oracles.bin_lower_scalar(
            phi + oracles.PI, dphi, po["nphi"]
        )
        kz = oracles.bin_lower_scalar(z - po["z0"], po["dz"], po["nz"])
        idx.append((kz * po["nphi"] + q) * po["nr"] + p)
    return idx


def expit(v):
    return 1.0 / (1.0 + np.exp(-np.float64(v)))


def gen_fuse():
    align, saliency, moe = fuse_params()
    amoe3d.save_fusion_params(
        os.path.join(GOLD, "fuse_params"),
        amoe3d.PointwiseAffine(**align),
        amoe3d.SaliencyParams(**saliency),
        amoe3d.MoeParams(**moe),
    )
    # the CLI reads float32 tensors back as float64; mirror that rounding
    align = {k: f32(v) for k, v in align.items()}
    sal = {k: (f32(v) if isinstance(v, np.ndarray) else v)
           for k, v in saliency.items()}
    mp = {k: f32(v) for k, v in moe.items()}

    po_data = np.random.default_rng(8).standard_normal((16, 3)).astype(np.float32)
    ca_data = np.random.default_rng(9).standard_normal((32, 2)).astype(np.float32)
    write_ptns(os.path.join(GOLD, "fuse_polar.ptns"), po_data)
    write_ptns(os.path.join(GOLD, "fuse_cartesian.ptns"), ca_data)
    po_f = po_data.astype(np.float64)
    ca_f = ca_data.astype(np.float64)

    idx = cross_indices_scalar(FUSE_CA, FUSE_PO)
    n = len(idx)
    x = np.zeros((n, 4))
    for row, pol in enumerate(idx):
        x[row, :2] = po_f[pol] @ align["weights"] + align["bias"]
        x[row, 2:] = ca_f[row]

    def mlp(vec):
        h = np.maximum(vec @ sal["mlp_w1"] + sal["mlp_b1"], 0.0)
        return h @ sal["mlp_w2"] + sal["mlp_b2"]

    gap = np.array([sum(float(v) for v in x[:, c]) / n for c in range(4)])
    gmp = np.array([max(float(v) for v in x[:, c]) for c in range(4)])
    a_c = np.array([expit(v) for v in mlp(gap) + mlp(gmp)])

    nz, ny, nx = FUSE_CA["nz"], FUSE_CA["ny"], FUSE_CA["nx"]
    grid = x.reshape(nz, ny, nx, 4)
    avg = np.zeros((nz, ny, nx))
    mx = np.zeros((nz, ny, nx))
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                vals = [float(v) for v in grid[k, j, i]]
                avg[k, j, i] = sum(vals) / 4.0
                mx[k, j, i] = max(vals)
    resp = (
        oracles.conv3d_scalar(avg, sal["spatial_kernel"][0])
        + oracles.conv3d_scalar(mx, sal["spatial_kernel"][1])
        + sal["spatial_bias"]
    )
    a_s = np.vectorize(expit)(resp).reshape(-1)

    y = (x * a_c[None, :]) * a_s[:, None]

    energy = oracles.grad_energy_map_scalar(y.reshape(nz, ny, nx, 4))
    k_experts = mp["expert_w1"].shape[0]
    logit_maps = [
        oracles.conv3d_scalar(energy, mp["gating_kernel"][i]) + mp["gating_bias"][i]
        for i in range(k_experts)
    ]
    out = y.copy()
    for row in range(n):
        k, rem = divmod(row, ny * nx)
        j, i = divmod(rem, nx)
        alpha = oracles.softmax_scalar([m[k, j, i] for m in logit_maps])
        for e in range(k_experts):
            pre = y[row] @ mp["expert_w1"][e] + mp["expert_b1"][e]
            h = np.array([oracles.gelu_scalar(v) for v in pre])
            contrib = h @ mp["expert_w2"][e] + mp["expert_b2"][e]
            out[row] = out[row] + alpha[e] * contrib
    write_ptns(os.path.join(GOLD, "expected_fuse.ptns"), out.astype(np.float32))


def gen_eval():
    rng = np.random.default_rng(5)
    gt = rng.integers(0, 3, size=(4, 4, 2)).astype(np.uint8)
    pred = gt.copy()
    flip = rng.random(gt.shape) < 0.35
    pred[flip] = rng.integers(0, 3, size=int(flip.sum())).astype(np.uint8)
    write_ptns(os.path.join(GOLD, "eval_gt.ptns"), gt)
    write_ptns(os.path.join(GOLD, "eval_pred.ptns"), pred)

    gt2 = rng.integers(0, 3, size=(4, 4, 2)).astype(np.uint8)
    pred2 = gt2.copy()
    flip2 = rng.random(gt2.shape) < 0.35
    pred2[flip2] = rng.integers(0, 3, size=int(flip2.sum())).astype(np.uint8)
    write_ptns(os.path.join(GOLD, "eval_gt2.ptns"), gt2)
    write_ptns(os.path.join(GOLD, "eval_pred2.ptns"), pred2)

    logits = np.random.default_rng(6).standard_normal((4, 4, 2, 3))
    write_ptns(os.path.join(GOLD, "eval_logits.ptns"), logits.astype(np.float32))


def main():
    os.makedirs(GOLD, exist_ok=True)
    gen_unwrap()
    gen_lift()
    gen_fuse()
    gen_eval()
    names = sorted(
        os.path.join(dp, f)[len(GOLD) + 1 :]
        for dp, _, fs in os.walk(GOLD)
        for f in fs
    )
    total = sum(
        os.path.getsize(os.path.join(GOLD, f)) for f in names
    )
    print(f"wrote {len(names)} files ({total / 1024:.1f} KiB) under {GOLD}")
    for f in names:
        print(f"  {f}")


if __name__ == "__main__":
    main()
