import math

import numpy as np
import pytest

from staircase_lab.hyperbolicity import (
    full_report,
    monodromy,
    phonon_gap,
    pn_barrier,
    second_variation_spectrum,
    transfer_matrices,
)
from staircase_lab.model import frenkel_kontorova
from staircase_lab.variational import minimize_periodic

from oracles import pn_barrier_oracle


def test_transfer_matrices_integrable():
    m = frenkel_kontorova(0.0)
    cfg = minimize_periodic(m, 1, 3)
    for mat in transfer_matrices(m, cfg):
        assert np.allclose(mat, [[2.0, -1.0], [1.0, 0.0]], atol=1e-12)


def test_transfer_matrix_determinants_telescope():
    m = frenkel_kontorova(1.0)
    cfg = minimize_periodic(m, 1, 5)
    dets = [float(np.linalg.det(mat)) for mat in transfer_matrices(m, cfg)]
    assert np.prod(dets) == pytest.approx(1.0, abs=1e-12)


def test_transfer_matrix_fixed_point_closed_form():
    m = frenkel_kontorova(2.0)
    cfg = minimize_periodic(m, 0, 1)
    (mat,) = transfer_matrices(m, cfg)
    assert np.allclose(mat, [[2.0 + 8.0 * math.pi**2, -1.0], [1.0, 0.0]], atol=1e-9)


def test_monodromy_integrable_parabolic():
    m = frenkel_kontorova(0.0)
    rep = monodromy(m, minimize_periodic(m, 0, 1))
    assert rep.trace == pytest.approx(2.0, abs=1e-12)
    assert rep.lyapunov == 0.0


def test_monodromy_fixed_point_closed_form():
    m = frenkel_kontorova(2.0)
    rep = monodromy(m, minimize_periodic(m, 0, 1))
    T = 2.0 + 8.0 * math.pi**2
    assert rep.trace == pytest.approx(T, abs=1e-9)
    lam = math.log((T + math.sqrt(T * T - 4.0)) / 2.0)
    assert rep.lyapunov == pytest.approx(lam, abs=1e-9)


def test_monodromy_determinant_one():
    for k in (0.5, 1.0, 2.0):
        m = frenkel_kontorova(k)
        for p, q in [(0, 1), (1, 2), (1, 3), (2, 5), (3, 7), (3, 8)]:
            rep = monodromy(m, minimize_periodic(m, p, q))
            assert abs(rep.det - 1.0) < 1e-8
            prod = rep.eigenvalues[0] * rep.eigenvalues[1]
            assert prod.real == pytest.approx(rep.det, rel=1e-9)


def test_second_variation_integrable_circulant():
    m = frenkel_kontorova(0.0)
    for q in (3, 5, 8):
        cfg = minimize_periodic(m, 1, q)
        spec = second_variation_spectrum(m, cfg)
        expected = np.sort(2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(q) / q))
        assert np.abs(spec - expected).max() < 1e-9
        assert abs(spec[0]) < 1e-12  # slide mode


def test_second_variation_fixed_point():
    m = frenkel_kontorova(2.0)
    spec = second_variation_spectrum(m, minimize_periodic(m, 0, 1))
    assert spec[0] == pytest.approx(8.0 * math.pi**2, abs=1e-9)


def test_minimizer_spectrum_nonnegative():
    for k, p, q in [(0.5, 1, 4), (1.0, 2, 5), (2.0, 1, 3)]:
        m = frenkel_kontorova(k)
        spec = second_variation_spectrum(m, minimize_periodic(m, p, q))
        assert spec[0] > -1e-8


def test_gap_trace_lyapunov_consistency():
    # one rotation number, coupling swept across the hyperbolic range
    for k in (0.25, 0.5, 1.0, 2.0):
        m = frenkel_kontorova(k)
        cfg = minimize_periodic(m, 1, 2)
        rep = monodromy(m, cfg)
        gap = phonon_gap(m, cfg)
        hyperbolic = rep.lyapunov > 0.0
        assert hyperbolic == (abs(rep.trace) > 2.0)
        assert hyperbolic == (gap > 1e-6)


def test_pn_barrier_integrable_zero():
    assert pn_barrier(frenkel_kontorova(0.0), 1, 2, 16) < 1e-10


def test_pn_barrier_single_site():
    for k in (0.5, 2.0):
        b = pn_barrier(frenkel_kontorova(k), 0, 1, 64)
        # E(s) = -k cos(2 pi s) sampled on the grid containing both extremes
        assert b == pytest.approx(2.0 * k, abs=1e-12)


def test_pn_barrier_matches_grid_oracle():
    m = frenkel_kontorova(0.5)
    tool = pn_barrier(m, 1, 2, 16)
    oracle = pn_barrier_oracle(m, 1, 2, 16)
    assert tool == pytest.approx(oracle, abs=1e-5)


def test_pn_barrier_increasing_in_k():
    barriers = [pn_barrier(frenkel_kontorova(k), 0, 1, 32) for k in (0.25, 0.5, 1.0, 2.0)]
    assert all(b2 > b1 for b1, b2 in zip(barriers, barriers[1:]))


def test_pn_barrier_validates_input():
    with pytest.raises(ValueError):
        pn_barrier(frenkel_kontorova(1.0), 0, 1, 8)
    with pytest.raises(ValueError):
        pn_barrier(frenkel_kontorova(1.0), 2, 4, 16)


def test_full_report_fields():
    m = frenkel_kontorova(2.0)
    rep = full_report(m, minimize_periodic(m, 1, 2), sweep_n=16)
    assert rep.phonon_gap > 1e-6
    assert rep.pn_barrier > 0.0
    assert abs(rep.det - 1.0) < 1e-12
    assert rep.spectrum is not None and len(rep.spectrum) == 2
