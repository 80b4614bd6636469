import math

import numpy as np
import pytest

from kpocat import basis
from kpocat.dynamics import (
    CoupledState,
    LocalBlock,
    NormDriftError,
    SystemParams,
    TimeGrid,
    apply_hamiltonian,
    coupling_strength,
    make_blocks,
    rk4_step,
    run_simulation,
)
from kpocat.fock import coherent_state
from kpocat.pump import LpfCascade, PumpSample


def small_params(**kw):
    base = dict(J=10, L=2, T=10.0, kpo_cutoffs=(6, 5, 4), A_p=2.45, B=0.5)
    base.update(kw)
    return SystemParams(**base)


def index_map(spec):
    """(l, n, tuple) -> flat index, in the order of CoupledState.flat()."""
    idx, pos = {}, 0
    for l, N in enumerate(spec.kpo_cutoffs):
        tuples = [tuple(int(x) for x in t) for t in basis.enumerate_sector(l, spec.J)]
        for n in range(N + 1):
            for t in tuples:
                idx[(l, n, t)] = pos
                pos += 1
    return idx, pos


def dense_hamiltonian(spec, j, K, g, sample, delta=0.0):
    """Full H during bin j, assembled element by element from the tuple actions."""
    idx, dim = index_map(spec)
    P = complex(sample.p, sample.p_prime)
    H = np.zeros((dim, dim), dtype=complex)
    for (l, n, t), i in idx.items():
        H[i, i] = -0.5 * K * n * (n - 1) + delta * n - (abs(P) ** 2 / (2 * K) if K else 0.0)
        if n + 2 <= spec.kpo_cutoffs[l]:
            H[idx[(l, n + 2, t)], i] += 0.5 * P * math.sqrt((n + 1) * (n + 2))
            H[i, idx[(l, n + 2, t)]] += 0.5 * P.conjugate() * math.sqrt((n + 1) * (n + 2))
        if n >= 1 and l + 1 <= spec.L and n - 1 <= spec.kpo_cutoffs[l + 1]:
            new, c = basis.creation_action(j, t)
            k = idx[(l + 1, n - 1, new)]
            H[k, i] += 1j * g * math.sqrt(n) * c
            H[i, k] += -1j * g * math.sqrt(n) * c
    return H


def random_causal_state(spec, j, seed):
    rng = np.random.default_rng(seed)
    state = CoupledState.vacuum(spec)
    for l, s in enumerate(state.sectors):
        n = basis.multiset_count(j, l)
        s[:, :n] = rng.normal(size=(s.shape[0], n)) + 1j * rng.normal(size=(s.shape[0], n))
    return state


@pytest.mark.parametrize("j", [1, 2, 4])
def test_apply_hamiltonian_matches_dense_oracle(j):
    params = SystemParams(J=5, L=3, T=5.0, kpo_cutoffs=(4, 3, 3, 2), delta=0.3)
    spec = params.sector_spec
    width = params.grid().widths[j - 1]
    g = coupling_strength(params, width)
    sample = PumpSample(0.0, 0.8, 0.1, 0.35)
    state = random_causal_state(spec, j, seed=j)
    H = dense_hamiltonian(spec, j, params.K, g, sample, params.delta)
    assert np.allclose(H, H.conj().T)
    out = apply_hamiltonian(state, sample, j, params, make_blocks(params, width))
    got = np.concatenate([s.ravel() for s in out])
    assert np.max(np.abs(got - (-1j) * H @ state.flat())) < 1e-12


def test_local_block_is_hermitian():
    spec = basis.SectorSpec(5, 3, (4, 3, 3, 2))
    for s in range(4):
        H = LocalBlock(spec, s, 1.0, 0.7, 0.2).hamiltonian(PumpSample(0, 0.5, 0, -0.2))
        assert np.allclose(H, H.conj().T)


@pytest.mark.parametrize("P", [2.0, 1.3 + 0.4j])
def test_kpo_cancellation_on_coherent_components(P):
    # with g = 0 and no output photons the block is the bare KPO
    spec = basis.SectorSpec(1, 0, (60,))
    blk = LocalBlock(spec, 0, 1.0, 0.0)
    H = blk.hamiltonian(PumpSample(0.0, P.real, 0.0, P.imag))
    alpha0 = np.sqrt(complex(P))
    for sign in (1, -1):
        psi = coherent_state(sign * alpha0, 60).amps
        assert np.max(np.abs(H @ psi)) < 1e-12


def test_time_grid():
    g = TimeGrid.build(50.0, 80, 0.1)
    assert g.J == 80
    assert g.edges[0] == 0.0 and g.edges[-1] == 50.0
    assert np.allclose(g.widths[:64], 25.0 / 64) and np.allclose(g.widths[64:], 25.0 / 16)
    assert np.all(g.widths / g.substeps <= 0.1 + 1e-12)
    with pytest.raises(ValueError):
        TimeGrid.build(50.0, 81)


def test_params_validation():
    with pytest.raises(ValueError):
        SystemParams(J=12)
    with pytest.raises(ValueError):
        SystemParams(shortcut="fast")
    with pytest.raises(ValueError):
        SystemParams(bin_coupling="other")
    assert SystemParams(L=4).kpo_cutoffs == (6, 6, 6, 5, 4)


def test_direct_and_propagator_paths_agree():
    params = small_params(shortcut="eq12")
    s1, o1 = run_simulation(params, method="propagator")
    s2, o2 = run_simulation(params, method="direct")
    assert np.max(np.abs(s1.flat() - s2.flat())) < 1e-12
    assert np.allclose(o1.n_kpo, o2.n_kpo, atol=1e-12)
    assert np.allclose(o1.bin_populations, o2.bin_populations, atol=1e-12)
    assert o1.times == pytest.approx(o2.times)


def test_causality_and_norm_during_run():
    params = small_params(substep_target=0.05)
    state, obs = run_simulation(params, check_causality=True)
    assert obs.causality_max == 0.0
    assert obs.norm_drift < 1e-6
    assert state.norm_sq() == pytest.approx(1.0, abs=1e-6)


def test_bin_populations_match_final_state():
    from kpocat.tomography import bin_populations

    state, obs = run_simulation(small_params())
    # populations are recorded when each bin closes; later bins only rescale
    # them through the (tiny) non-unitarity of RK4
    assert np.max(np.abs(bin_populations(state) - obs.bin_populations)) < 1e-6
    assert state.output_photons() == pytest.approx(bin_populations(state).sum(), abs=1e-12)
    assert state.output_photons() == pytest.approx(obs.n_out, abs=1e-6)
    assert state.kpo_photons() == pytest.approx(obs.n_in, abs=1e-12)


def test_no_pump_leaves_vacuum():
    params = small_params(pump_enabled=False)
    state, obs = run_simulation(params)
    vac = CoupledState.vacuum(params.sector_spec)
    assert np.array_equal(state.flat(), vac.flat())
    assert obs.n_out == 0.0 and max(obs.n_kpo) == 0.0


def test_rk4_step_on_vacuum_without_pump_is_identity():
    params = small_params(pump_enabled=False)
    state = CoupledState.vacuum(params.sector_spec)
    out = rk4_step(state, None, 0.1, params, 1)
    assert np.array_equal(out.flat(), state.flat())


def test_excitation_is_conserved_without_pump():
    # K = 0, single KPO photon: photons move from the cavity to the line
    params = SystemParams(K=0.0, J=20, L=1, T=20.0, kpo_cutoffs=(1, 0), pump_enabled=False)
    initial = CoupledState.from_kpo(params.sector_spec, [0.0, 1.0])
    state, obs = run_simulation(params, initial=initial)
    assert obs.n_in + obs.n_out == pytest.approx(1.0, abs=1e-6)
    t = np.asarray(obs.times)
    assert np.max(np.abs(np.asarray(obs.n_kpo) - np.exp(-0.2 * t))) < 0.03


def test_literal_coupling_option():
    params = small_params(bin_coupling="literal")
    assert coupling_strength(params, 0.25) == pytest.approx(math.sqrt(0.2))
    assert coupling_strength(small_params(), 0.25) == pytest.approx(math.sqrt(0.8))


def test_norm_drift_detection():
    params = small_params()
    state = CoupledState.vacuum(params.sector_spec)
    cascade = LpfCascade(1.0, 200.0, 0.2, 0.5, stages=[50.0] * 4)
    with pytest.raises(NormDriftError):
        rk4_step(state, cascade, 0.5, params, 1)


def test_initial_state_spec_mismatch():
    params = small_params()
    other = CoupledState.vacuum(basis.SectorSpec(5, 2, (6, 5, 4)))
    with pytest.raises(ValueError):
        run_simulation(params, initial=other)


def test_memory_budget_enforced():
    params = small_params(memory_budget=1024)
    with pytest.raises(basis.MemoryBudgetError):
        run_simulation(params)


def test_timeseries_csv(tmp_path):
    _, obs = run_simulation(small_params())
    obs.write_timeseries_csv(tmp_path / "ts.csv")
    lines = (tmp_path / "ts.csv").read_text().splitlines()
    assert lines[0] == "t,p,p_prime,n_kpo"
    assert len(lines) == len(obs.times) + 1
