import numpy as np
import pytest

from dppwalk import env as envmod
from dppwalk import walk as walkmod
from dppwalk.env import LatticeWindow, ProcessSpec, full_lattice, sample
from dppwalk.walk import (CouplingError, StepTable, TransitionRule,
                          build_step_table, coupled_sign_walk, point_at_index,
                          point_positions, run_annealed, run_ensemble_quenched,
                          run_quenched, step_distribution)


@pytest.fixture(scope="module")
def env135():
    return sample(ProcessSpec.explicit([(0,), (3,), (5,)]), LatticeWindow((8,)), seed=0)


def test_step_distribution_uniform(env135):
    dist = step_distribution(env135, TransitionRule(0.0), (0,))
    assert dist == [((3,), 0.5), ((5,), 0.5)]


def test_step_distribution_weighted(env135):
    # from site 3: +e to 5 at gap 2, -e to 0 at gap 3; alpha=1 weights 2:3
    dist = dict(step_distribution(env135, TransitionRule(1.0), (3,)))
    assert dist[(5,)] == pytest.approx(2 / 5)
    assert dist[(0,)] == pytest.approx(3 / 5)


def test_step_distribution_alpha_zero_matches_uniform(env135):
    a = step_distribution(env135, TransitionRule(0.0), (3,))
    b = step_distribution(env135, TransitionRule(2.0), (3,))
    assert [p for p, _ in a] == [p for p, _ in b]
    assert sum(q for _, q in b) == pytest.approx(1.0)


def test_quenched_trajectory_consistency():
    env = sample(ProcessSpec.bernoulli(0.5), LatticeWindow((32, 32)), seed=4)
    traj = run_quenched(env, TransitionRule(), 200, seed=11)
    assert traj.horizon == 200
    sides = np.array(env.window.sides)
    for t in range(201):
        tor = tuple(traj.torus[t])
        assert env.occupancy[tor]
        assert np.array_equal(traj.torus[t], traj.unwrapped[t] % sides)
    inc = np.diff(traj.unwrapped, axis=0)
    # one axis moves per step, by exactly the gap at the source site
    assert ((inc != 0).sum(axis=1) == 1).all()


def test_quenched_deterministic():
    env = sample(ProcessSpec.bernoulli(0.5), LatticeWindow((32, 32)), seed=4)
    a = run_quenched(env, TransitionRule(), 100, seed=5)
    b = run_quenched(env, TransitionRule(), 100, seed=5)
    c = run_quenched(env, TransitionRule(), 100, seed=6)
    assert np.array_equal(a.unwrapped, b.unwrapped)
    assert not np.array_equal(a.unwrapped, c.unwrapped)


def test_ensemble_matches_trajectory_walker_zero():
    env = sample(ProcessSpec.bernoulli(0.5), LatticeWindow((32, 32)), seed=4)
    traj = run_quenched(env, TransitionRule(), 150, seed=21)
    ens = run_ensemble_quenched(env, TransitionRule(), 150, 8, 21)
    assert np.array_equal(ens.final[0], traj.unwrapped[-1])


def test_alpha_zero_bit_identical_to_uniform_engine():
    env = sample(ProcessSpec.bernoulli(0.5), LatticeWindow((32, 32)), seed=4)
    weighted = build_step_table(env, TransitionRule(alpha=0.0))
    # independently built Eq-style uniform cumulative table
    twod = 2 * env.d
    cum = np.tile(np.arange(1, twod + 1, dtype=np.float64) / twod,
                  (env.window.volume, 1))
    uniform = StepTable(env, weighted.nbr, weighted.gaplen, cum, TransitionRule())
    assert np.array_equal(weighted.cum, uniform.cum)
    a = walkmod._run_block(weighted.nbr[None], weighted.gaplen[None],
                           weighted.cum[None], np.zeros(16, dtype=np.int64),
                           np.arange(16), 300, 77)
    b = walkmod._run_block(uniform.nbr[None], uniform.gaplen[None],
                           uniform.cum[None], np.zeros(16, dtype=np.int64),
                           np.arange(16), 300, 77)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_returns_and_window_limited():
    env = full_lattice(LatticeWindow((6, 6)))
    ens = run_ensemble_quenched(env, TransitionRule(), 500, 50, 3)
    assert (ens.returns >= 0).all()
    # 500-step SRW on a 6x6 torus always leaves the half-window
    assert ens.window_limited.all()


def test_ensemble_csv_and_json_deterministic():
    env = sample(ProcessSpec.bernoulli(0.5), LatticeWindow((16, 16)), seed=2)
    a = run_ensemble_quenched(env, TransitionRule(), 50, 10, 9)
    b = run_ensemble_quenched(env, TransitionRule(), 50, 10, 9)
    assert a.to_csv() == b.to_csv()
    assert a.to_json() == b.to_json()


def test_annealed_round_robin_envs():
    spec = ProcessSpec.bernoulli(0.5)
    ens = run_annealed(spec, LatticeWindow((64,)), TransitionRule(), 50, 12,
                       master_seed=5, envs=3)
    assert ens.walkers == 12
    assert ens.mode == "annealed"
    again = run_annealed(spec, LatticeWindow((64,)), TransitionRule(), 50, 12,
                         master_seed=5, envs=3)
    assert np.array_equal(ens.final, again.final)


def test_point_index_unwrapping(env135):
    assert point_at_index(env135, 0) == 0
    assert point_at_index(env135, 1) == 3
    assert point_at_index(env135, 2) == 5
    assert point_at_index(env135, 3) == 8  # next period
    assert point_at_index(env135, -1) == -3  # 5 - 8
    assert point_positions(env135).tolist() == [0, 3, 5]


def test_coupling_identity(env135):
    traj = run_quenched(env135, TransitionRule(), 100, seed=1)
    y = coupled_sign_walk(env135, traj)
    assert y[0] == 0
    assert (np.abs(np.diff(y)) == 1).all()


def test_coupling_identity_bernoulli():
    env = sample(ProcessSpec.bernoulli(0.5), LatticeWindow((512,)), seed=6)
    traj = run_quenched(env, TransitionRule(), 400, seed=2)
    coupled_sign_walk(env, traj)  # raises on any violated step


def test_coupling_detects_mismatch(env135):
    traj = run_quenched(env135, TransitionRule(), 50, seed=1)
    broken = walkmod.Trajectory(env135, traj.rule, traj.seed,
                                traj.torus.copy(), traj.unwrapped.copy())
    broken.unwrapped[20:] += 1
    with pytest.raises(CouplingError):
        coupled_sign_walk(env135, broken)


def test_invalid_args():
    env = full_lattice(LatticeWindow((4, 4)))
    with pytest.raises(ValueError):
        run_annealed(ProcessSpec.bernoulli(0.5), LatticeWindow((8, 8)),
                     TransitionRule(), 10, 0, 1)
    with pytest.raises(ValueError):
        point_positions(env)
