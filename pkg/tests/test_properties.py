"""Property tests for the structural invariants.

Randomized inputs via hypothesis; each property is something the rest
of the code leans on implicitly (feasibility of geometric delays,
gram symmetry, phase-alignment optimality, quantile/cdf inversion).
"""

import numpy as np
from hypothesis import given, settings, strategies as st

from widemimo import (
    Hypoexponential,
    bank_for_scene,
    gram,
    gram_matrix,
    hypoexp_cdf,
    hypoexp_quantile,
    is_feasible,
    mimo_scene,
    phase_aligned_sum,
    project_feasible,
    true_delays,
)

SCENE = mimo_scene()
BANK = bank_for_scene(SCENE)

coord = st.floats(min_value=5e3, max_value=8e4, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(x=coord, y=coord)
def test_geometric_delays_always_feasible(x, y):
    tau = true_delays(SCENE, target=(x, y, 0.0))
    assert is_feasible(tau, SCENE)
    # and the projection of an already-feasible vector is itself
    back = project_feasible(tau.tau, SCENE)
    np.testing.assert_allclose(back.tau, tau.tau, rtol=0, atol=1e-18)


delay = st.floats(min_value=0.0, max_value=10.0 * BANK.sample_period,
                  allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(ta=delay, tb=delay, m=st.integers(1, 2), mp=st.integers(1, 2))
def test_gram_conjugate_symmetry(ta, tb, m, mp):
    fwd = gram(BANK, ta, tb, m, mp)
    rev = gram(BANK, tb, ta, mp, m)
    assert abs(fwd - np.conj(rev)) <= 1e-15 / BANK.sample_period


@settings(max_examples=25, deadline=None)
@given(offs=st.lists(delay, min_size=2, max_size=2))
def test_gram_matrix_is_positive_semidefinite(offs):
    g = gram_matrix(BANK, BANK.window_start + np.asarray(offs))
    np.testing.assert_allclose(g, g.conj().T, atol=1e-12 / BANK.sample_period)
    evals = np.linalg.eigvalsh(g)
    assert evals.min() >= -1e-9 * evals.max()


finite_complex = st.builds(complex,
                           st.floats(-10, 10, allow_nan=False),
                           st.floats(-10, 10, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(g=st.lists(finite_complex, min_size=1, max_size=12),
       phases=st.lists(st.floats(0, 2 * np.pi, allow_nan=False),
                       min_size=12, max_size=12))
def test_phase_alignment_dominates_any_phases(g, phases):
    arr = np.asarray(g)
    best, _ = phase_aligned_sum(arr)
    tried = abs(np.sum(arr * np.exp(1j * np.asarray(phases[:len(g)]))))
    assert tried <= best * (1 + 1e-12) + 1e-12


@settings(max_examples=30, deadline=None)
@given(rates=st.lists(st.floats(1e-2, 1e2, allow_nan=False),
                      min_size=1, max_size=8),
       p=st.floats(1e-4, 1 - 1e-4))
def test_hypoexp_quantile_inverts_cdf(rates, p):
    d = Hypoexponential(rates)
    x = hypoexp_quantile(d, p)
    assert abs(hypoexp_cdf(d, x) - p) <= 1e-7
