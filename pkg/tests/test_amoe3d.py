import numpy as np
import pytest
from scipy import special

from panocc import amoe3d, bigrid, lifting
from panocc.errors import LevelMismatchError, ShapeMismatchError

import oracles


def grid_of(nx, ny, nz):
    return bigrid.CartesianGridSpec(nx=nx, ny=ny, nz=nz, x0=0.0, y0=0.0,
                                    z0=0.0, dx=1.0, dy=1.0, dz=1.0)


def volume_of(data_grid, valid=None):
    """Build a FeatureVolume from a dense (nz, ny, nx, C) array."""
    nz, ny, nx, c = data_grid.shape
    g = grid_of(nx, ny, nz)
    flat = data_grid.reshape(-1, c)
    v = np.ones(flat.shape[0], dtype=bool) if valid is None else valid.reshape(-1)
    return lifting.FeatureVolume(grid=g, data=flat, valid=v)


def cross_setup(seed=0, c_po=2, c_ca=3):
    rng = np.random.default_rng(seed)
    ca = bigrid.CartesianGridSpec(nx=4, ny=4, nz=2, x0=-1.07, y0=-1.0,
                                  z0=0.0, dx=0.5, dy=0.5, dz=0.5)
    po = bigrid.PolarGridSpec(nr=2, nphi=4, nz=2, r0=0.0, r1=1.8, z0=0.0,
                              dz=0.5)
    table = bigrid.build_cross_indices(ca, po, 1)
    v_po = lifting.FeatureVolume(
        grid=po, data=rng.standard_normal((po.voxel_count, c_po)),
        valid=np.ones(po.voxel_count, dtype=bool))
    v_ca = lifting.FeatureVolume(
        grid=ca, data=rng.standard_normal((ca.voxel_count, c_ca)),
        valid=np.ones(ca.voxel_count, dtype=bool))
    return table, v_po, v_ca


# -- polar injection -------------------------------------------------------

def test_inject_identity_align_constant_polar():
    table, v_po, v_ca = cross_setup(c_po=2, c_ca=2)
    v_po.data[:] = 3.5
    out = amoe3d.inject_polar(v_po, table, v_ca,
                              amoe3d.PointwiseAffine.identity(2))
    assert np.all(out.data[:, :2] == 3.5)
    assert np.array_equal(out.data[:, 2:], v_ca.data)
    assert out.channels == 4


def test_inject_zero_align_gives_bias():
    table, v_po, v_ca = cross_setup(c_po=3, c_ca=1)
    align = amoe3d.PointwiseAffine(weights=np.zeros((3, 2)),
                                   bias=np.array([1.5, -2.0]))
    out = amoe3d.inject_polar(v_po, table, v_ca, align)
    assert np.all(out.data[:, 0] == 1.5)
    assert np.all(out.data[:, 1] == -2.0)


def test_inject_random_matches_gather_matvec_oracle():
    table, v_po, v_ca = cross_setup(seed=5, c_po=3, c_ca=2)
    rng = np.random.default_rng(6)
    w = rng.standard_normal((3, 4))
    b = rng.standard_normal(4)
    out = amoe3d.inject_polar(v_po, table, v_ca,
                              amoe3d.PointwiseAffine(weights=w, bias=b))
    for vox in range(v_ca.data.shape[0]):
        src = int(table.indices[vox])
        aligned = [
            sum(float(v_po.data[src, i]) * float(w[i, k]) for i in range(3))
            + float(b[k])
            for k in range(4)
        ]
        assert out.data[vox, :4] == pytest.approx(aligned, abs=1e-6)
        assert np.array_equal(out.data[vox, 4:], v_ca.data[vox])


def test_inject_validity_is_or_of_sources():
    table, v_po, v_ca = cross_setup(seed=7)
    v_po.valid[:] = False
    v_po.data[:] = 0.0
    v_ca.valid[::2] = False
    v_ca.data[::2] = 0.0
    out = amoe3d.inject_polar(v_po, table, v_ca,
                              amoe3d.PointwiseAffine.identity(2))
    assert np.array_equal(out.valid, v_ca.valid)


def test_inject_wrong_grid_rejected():
    table, v_po, v_ca = cross_setup()
    other = lifting.FeatureVolume(
        grid=grid_of(4, 4, 2), data=np.zeros((32, 3)),
        valid=np.ones(32, dtype=bool))
    with pytest.raises(LevelMismatchError):
        amoe3d.inject_polar(v_po, table, other, amoe3d.PointwiseAffine.identity(2))


# -- channel gate ----------------------------------------------------------

def test_channel_gate_zero_mlp_is_half():
    rng = np.random.default_rng(1)
    x = volume_of(rng.standard_normal((2, 3, 4, 6)))
    gate = amoe3d.channel_gate(x, amoe3d.SaliencyParams.zeros(6))
    assert gate == pytest.approx(np.full(6, 0.5), abs=1e-15)


def test_channel_gate_constant_volume_doubles_mlp():
    c = 5
    rng = np.random.default_rng(2)
    p = amoe3d.SaliencyParams.zeros(c)
    p = amoe3d.SaliencyParams(
        mlp_w1=rng.standard_normal(p.mlp_w1.shape),
        mlp_b1=rng.standard_normal(p.mlp_b1.shape),
        mlp_w2=rng.standard_normal(p.mlp_w2.shape),
        mlp_b2=rng.standard_normal(p.mlp_b2.shape),
        spatial_kernel=p.spatial_kernel, spatial_bias=p.spatial_bias,
    )
    const = np.full((2, 2, 2, c), 1.25)
    gate = amoe3d.channel_gate(volume_of(const), p)
    vec = np.full(c, 1.25)
    h = np.maximum(vec @ p.mlp_w1 + p.mlp_b1, 0.0)
    mlp = h @ p.mlp_w2 + p.mlp_b2
    assert gate == pytest.approx(special.expit(2.0 * mlp), abs=1e-12)


def test_channel_gate_random_against_scalar_oracle():
    rng = np.random.default_rng(3)
    c, hidden = 4, 2
    x = volume_of(rng.standard_normal((2, 2, 3, c)))
    p = amoe3d.SaliencyParams(
        mlp_w1=rng.standard_normal((c, hidden)),
        mlp_b1=rng.standard_normal(hidden),
        mlp_w2=rng.standard_normal((hidden, c)),
        mlp_b2=rng.standard_normal(c),
        spatial_kernel=np.zeros((2, 7, 7, 7)), spatial_bias=0.0,
    )
    gate = amoe3d.channel_gate(x, p)

    def scalar_mlp(vec):
        h = [max(sum(float(vec[i]) * float(p.mlp_w1[i, j]) for i in range(c))
                 + float(p.mlp_b1[j]), 0.0) for j in range(hidden)]
        return [sum(h[j] * float(p.mlp_w2[j, k]) for j in range(hidden))
                + float(p.mlp_b2[k]) for k in range(c)]

    n = x.data.shape[0]
    gap = [sum(float(x.data[i, ch]) for i in range(n)) / n for ch in range(x.channels)]
    gmp = [max(float(x.data[i, ch]) for i in range(n)) for ch in range(x.channels)]
    expect = [float(special.expit(a + b))
              for a, b in zip(scalar_mlp(gap), scalar_mlp(gmp))]
    assert gate == pytest.approx(expect, abs=1e-6)


# -- spatial gate ----------------------------------------------------------

def test_spatial_gate_zero_params_is_half():
    rng = np.random.default_rng(4)
    x = volume_of(rng.standard_normal((3, 3, 3, 2)))
    gate = amoe3d.spatial_gate(x, amoe3d.SaliencyParams.zeros(2))
    assert gate.shape == (3, 3, 3)
    assert np.all(gate == 0.5)


def test_spatial_gate_constant_volume_interior_analytic():
    c = 3
    const = 0.75
    rng = np.random.default_rng(5)
    kernel = rng.standard_normal((2, 7, 7, 7))
    bias = 0.3
    p = amoe3d.SaliencyParams(
        mlp_w1=np.zeros((c, 1)), mlp_b1=np.zeros(1),
        mlp_w2=np.zeros((1, c)), mlp_b2=np.zeros(c),
        spatial_kernel=kernel, spatial_bias=bias,
    )
    # 15^3 volume has a true interior where zero padding cannot reach
    x = volume_of(np.full((15, 15, 15, c), const))
    gate = amoe3d.spatial_gate(x, p)
    s = float(kernel.sum())
    interior_expect = float(special.expit(const * s + bias))
    assert gate[7, 7, 7] == pytest.approx(interior_expect, rel=1e-12)
    # the corner sees mostly padding, so it must differ
    assert abs(gate[0, 0, 0] - interior_expect) > 1e-6


def test_spatial_gate_degenerate_volume_is_center_tap():
    c = 2
    rng = np.random.default_rng(6)
    kernel = rng.standard_normal((2, 7, 7, 7))
    p = amoe3d.SaliencyParams(
        mlp_w1=np.zeros((c, 1)), mlp_b1=np.zeros(1),
        mlp_w2=np.zeros((1, c)), mlp_b2=np.zeros(c),
        spatial_kernel=kernel, spatial_bias=-0.2,
    )
    vals = np.array([[1.5, -0.5]])
    x = volume_of(vals.reshape(1, 1, 1, c))
    gate = amoe3d.spatial_gate(x, p)
    avg = 0.5
    mx = 1.5
    expect = special.expit(avg * kernel[0, 3, 3, 3] + mx * kernel[1, 3, 3, 3] - 0.2)
    assert gate[0, 0, 0] == pytest.approx(float(expect), rel=1e-12)


def test_spatial_gate_matches_loop_convolution():
    rng = np.random.default_rng(7)
    x = volume_of(rng.standard_normal((3, 4, 3, 2)))
    kernel = rng.standard_normal((2, 7, 7, 7))
    p = amoe3d.SaliencyParams(
        mlp_w1=np.zeros((2, 1)), mlp_b1=np.zeros(1),
        mlp_w2=np.zeros((1, 2)), mlp_b2=np.zeros(2),
        spatial_kernel=kernel, spatial_bias=0.1,
    )
    gate = amoe3d.spatial_gate(x, p)
    g = x.as_grid()
    resp = (oracles.conv3d_scalar(g.mean(axis=3), kernel[0])
            + oracles.conv3d_scalar(g.max(axis=3), kernel[1]) + 0.1)
    assert gate == pytest.approx(special.expit(resp), abs=1e-9)


# -- saliency composition --------------------------------------------------

def test_half_gates_quarter_signal():
    rng = np.random.default_rng(8)
    x = volume_of(rng.standard_normal((2, 2, 2, 3)))
    y = amoe3d.apply_saliency(x, np.full(3, 0.5), np.full((2, 2, 2), 0.5))
    assert np.array_equal(y.data, x.data * 0.25)


def test_unit_gates_identity():
    rng = np.random.default_rng(9)
    x = volume_of(rng.standard_normal((2, 2, 2, 3)))
    y = amoe3d.apply_saliency(x, np.ones(3), np.ones((2, 2, 2)))
    assert np.array_equal(y.data, x.data)


def test_apply_saliency_random_against_loops():
    rng = np.random.default_rng(10)
    x = volume_of(rng.standard_normal((2, 3, 2, 2)))
    a_c = rng.random(2)
    a_s = rng.random((2, 3, 2))
    y = amoe3d.apply_saliency(x, a_c, a_s)
    flat_s = a_s.reshape(-1)
    for i in range(x.data.shape[0]):
        for ch in range(2):
            expect = float(x.data[i, ch]) * float(a_c[ch]) * float(flat_s[i])
            assert y.data[i, ch] == pytest.approx(expect, abs=1e-12)


# -- gradient energy -------------------------------------------------------

def test_energy_of_constant_is_exactly_zero():
    x = volume_of(np.full((3, 4, 5, 2), 2.25))
    e = amoe3d.grad_energy3d(x)
    assert np.all(e == 0.0)
    assert amoe3d.grad_energy_total(x) == 0.0


def test_energy_of_unit_ramp():
    # single channel, value = x-index, 4 voxels along x
    gridvals = np.zeros((1, 1, 4, 1))
    gridvals[0, 0, :, 0] = [0.0, 1.0, 2.0, 3.0]
    x = volume_of(gridvals)
    e = amoe3d.grad_energy3d(x)
    assert e[0, 0, :].tolist() == [1.0, 1.0, 1.0, 0.0]
    assert amoe3d.grad_energy_total(x) == 3.0


def test_energy_matches_triple_loop_oracle_exactly():
    rng = np.random.default_rng(11)
    g = rng.standard_normal((3, 3, 4, 2))
    x = volume_of(g)
    total = amoe3d.grad_energy_total(x)
    assert total == pytest.approx(oracles.grad_energy_scalar(g), rel=1e-12)


def test_energy_scaling_law():
    rng = np.random.default_rng(12)
    g = rng.standard_normal((3, 4, 3, 2))
    e1 = amoe3d.grad_energy_total(volume_of(g))
    for s in (2.0, -3.5, 0.25):
        es = amoe3d.grad_energy_total(volume_of(s * g))
        assert es == pytest.approx(s * s * e1, rel=1e-6)


def test_energy_gradient_against_central_differences():
    rng = np.random.default_rng(13)
    h = 1e-4
    for _ in range(5):
        g = rng.standard_normal((4, 4, 4, 2))
        x = volume_of(g)
        analytic = amoe3d.grad_energy_backward(x).reshape(g.shape)
        # probe a handful of entries, central differences
        for _ in range(12):
            idx = tuple(rng.integers(0, s) for s in g.shape)
            gp = g.copy()
            gp[idx] += h
            gm = g.copy()
            gm[idx] -= h
            fd = (amoe3d.grad_energy_total(volume_of(gp))
                  - amoe3d.grad_energy_total(volume_of(gm))) / (2 * h)
            ref = analytic[idx]
            denom = max(1.0, abs(ref))
            assert abs(fd - ref) / denom < 1e-4


# -- expert mixture --------------------------------------------------------

def make_moe(rng, c, k=2, gk=3):
    hidden = c
    return amoe3d.MoeParams(
        expert_w1=rng.standard_normal((k, c, hidden)),
        expert_b1=rng.standard_normal((k, hidden)),
        expert_w2=rng.standard_normal((k, hidden, c)),
        expert_b2=rng.standard_normal((k, c)),
        gating_kernel=rng.standard_normal((k, gk, gk, gk)),
        gating_bias=rng.standard_normal(k),
    )


def test_gating_uniform_for_zero_params():
    rng = np.random.default_rng(14)
    x = volume_of(np.full((2, 2, 2, 3), 1.0))
    alpha = amoe3d.moe_gating(x, amoe3d.MoeParams.zeros(3, n_experts=4))
    assert alpha.shape == (4, 2, 2, 2)
    assert np.all(alpha == 0.25)


def test_gating_positive_and_sums_to_one():
    rng = np.random.default_rng(15)
    for trial in range(20):
        c = int(rng.integers(1, 4))
        k = int(rng.integers(2, 5))
        x = volume_of(rng.standard_normal((3, 3, 3, c)))
        alpha = amoe3d.moe_gating(x, make_moe(rng, c, k))
        assert np.all(alpha > 0.0)
        assert np.abs(alpha.sum(axis=0) - 1.0).max() < 1e-6


def test_gating_constant_volume_is_bias_softmax():
    rng = np.random.default_rng(16)
    c, k = 2, 3
    p = make_moe(rng, c, k)
    x = volume_of(np.full((2, 2, 2, c), 4.0))
    alpha = amoe3d.moe_gating(x, p)
    expect = oracles.softmax_scalar(list(p.gating_bias))
    for i in range(k):
        assert np.allclose(alpha[i], expect[i], atol=1e-12)


def test_expert_permutation_is_bit_exact():
    rng = np.random.default_rng(17)
    c, k = 3, 4
    p = make_moe(rng, c, k)
    x = volume_of(rng.standard_normal((3, 3, 3, c)))
    base = amoe3d.moe_fuse(x, p)
    for perm_seed in range(3):
        perm = np.random.default_rng(perm_seed).permutation(k)
        shuffled = amoe3d.MoeParams(
            expert_w1=p.expert_w1[perm], expert_b1=p.expert_b1[perm],
            expert_w2=p.expert_w2[perm], expert_b2=p.expert_b2[perm],
            gating_kernel=p.gating_kernel[perm], gating_bias=p.gating_bias[perm],
        )
        out = amoe3d.moe_fuse(x, shuffled)
        assert np.array_equal(out.data, base.data), f"perm {perm} changed bits"


def test_zero_output_layer_adds_weighted_biases():
    rng = np.random.default_rng(18)
    c, k = 2, 2
    p = make_moe(rng, c, k)
    p = amoe3d.MoeParams(
        expert_w1=p.expert_w1, expert_b1=p.expert_b1,
        expert_w2=np.zeros_like(p.expert_w2),
        expert_b2=rng.standard_normal((k, c)),
        gating_kernel=p.gating_kernel, gating_bias=p.gating_bias,
    )
    x = volume_of(rng.standard_normal((2, 2, 2, c)))
    alpha = amoe3d.moe_gating(x, p).reshape(k, -1)
    out = amoe3d.moe_fuse(x, p)
    for i in range(x.data.shape[0]):
        expect = x.data[i] + sum(alpha[j, i] * p.expert_b2[j] for j in range(k))
        assert out.data[i] == pytest.approx(expect, abs=1e-12)


def test_moe_small_case_against_scalar_oracle():
    rng = np.random.default_rng(19)
    c, k = 2, 2
    p = make_moe(rng, c, k)
    g = rng.standard_normal((3, 3, 3, c))
    x = volume_of(g)
    out = amoe3d.moe_fuse(x, p)

    energy = oracles.grad_energy_map_scalar(g)
    n = 27
    for vox in range(n):
        iz, iy, ix = np.unravel_index(vox, (3, 3, 3))
        logits = []
        for j in range(k):
            conv = oracles.conv3d_scalar(energy, p.gating_kernel[j])
            logits.append(conv[iz, iy, ix] + float(p.gating_bias[j]))
        alpha = oracles.softmax_scalar(logits)
        acc = [float(x.data[vox, ch]) for ch in range(c)]
        for j in range(k):
            h = [oracles.gelu_scalar(
                sum(float(x.data[vox, a]) * float(p.expert_w1[j, a, b])
                    for a in range(c)) + float(p.expert_b1[j, b]))
                for b in range(c)]
            y = [sum(h[b] * float(p.expert_w2[j, b, ch]) for b in range(c))
                 + float(p.expert_b2[j, ch]) for ch in range(c)]
            for ch in range(c):
                acc[ch] += alpha[j] * y[ch]
        assert out.data[vox] == pytest.approx(acc, abs=1e-6)


# -- full refinement -------------------------------------------------------

def test_forward_neutral_experts_reduce_to_gating():
    rng = np.random.default_rng(20)
    c = 3
    x = volume_of(rng.standard_normal((2, 3, 2, c)))
    sal = amoe3d.SaliencyParams.zeros(c)
    moe = amoe3d.MoeParams.zeros(c)
    out = amoe3d.amoe3d_forward(x, sal, moe)
    gated = amoe3d.apply_saliency(
        x, amoe3d.channel_gate(x, sal), amoe3d.spatial_gate(x, sal))
    assert np.array_equal(out.data, gated.data)


def test_forward_equals_stage_pipeline():
    rng = np.random.default_rng(21)
    c = 2
    x = volume_of(rng.standard_normal((3, 2, 2, c)))
    sal = amoe3d.SaliencyParams(
        mlp_w1=rng.standard_normal((c, 1)), mlp_b1=rng.standard_normal(1),
        mlp_w2=rng.standard_normal((1, c)), mlp_b2=rng.standard_normal(c),
        spatial_kernel=rng.standard_normal((2, 7, 7, 7)),
        spatial_bias=0.05,
    )
    moe = make_moe(rng, c, 3)
    out = amoe3d.amoe3d_forward(x, sal, moe)
    y = amoe3d.apply_saliency(
        x, amoe3d.channel_gate(x, sal), amoe3d.spatial_gate(x, sal))
    expect = amoe3d.moe_fuse(y, moe)
    assert np.array_equal(out.data, expect.data)


def test_forward_on_degenerate_volume():
    rng = np.random.default_rng(22)
    c = 4
    x = volume_of(rng.standard_normal((1, 1, 1, c)))
    out = amoe3d.amoe3d_forward(x, amoe3d.SaliencyParams.zeros(c),
                                amoe3d.MoeParams.zeros(c))
    assert out.data.shape == (1, c)
    assert np.all(np.isfinite(out.data))


# -- parameter files -------------------------------------------------------

def test_params_round_trip(tmp_path):
    rng = np.random.default_rng(23)
    c_po, c_inj = 2, 5
    align = amoe3d.PointwiseAffine(weights=rng.standard_normal((c_po, 3)),
                                   bias=rng.standard_normal(3))
    sal = amoe3d.SaliencyParams(
        mlp_w1=rng.standard_normal((c_inj, 2)), mlp_b1=rng.standard_normal(2),
        mlp_w2=rng.standard_normal((2, c_inj)), mlp_b2=rng.standard_normal(c_inj),
        spatial_kernel=rng.standard_normal((2, 7, 7, 7)),
        spatial_bias=0.125,
    )
    moe = make_moe(rng, c_inj, 2)
    amoe3d.save_fusion_params(str(tmp_path), align, sal, moe)
    align2, sal2, moe2 = amoe3d.load_fusion_params(str(tmp_path))
    # tensors pass through a float32 container
    assert np.array_equal(align2.weights, align.weights.astype(np.float32))
    assert np.array_equal(sal2.spatial_kernel,
                          sal.spatial_kernel.astype(np.float32))
    assert np.array_equal(moe2.gating_bias, moe.gating_bias.astype(np.float32))
    assert sal2.spatial_bias == pytest.approx(sal.spatial_bias)
