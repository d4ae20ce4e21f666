import numpy as np

from opebench import BanditFeedback

FIXTURE_RECORDS = [(0, 0.0, 0.5), (1, 1.0, 0.5), (1, 0.0, 0.5), (0, 1.0, 0.5)]


def make_fb(actions, rewards, propensities, n_actions=2, contexts=None, positions=None, len_list=1, **kw):
    n = len(actions)
    return BanditFeedback(
        n_actions=n_actions,
        len_list=len_list,
        contexts=np.zeros((n, 1)) if contexts is None else contexts,
        actions=actions,
        positions=np.zeros(n, dtype=int) if positions is None else positions,
        rewards=rewards,
        propensities=propensities,
        **kw,
    )


def four_record_fixture():
    """Two actions, half/half logging; the evaluation policy always picks action 1."""
    a, r, p = map(list, zip(*FIXTURE_RECORDS))
    fb = make_fb(a, r, p, behavior_probs=np.full((4, 2), 0.5))
    dist = one_hot_dist(np.ones(4, dtype=int), 2)
    return fb, dist


def one_hot_dist(chosen, n_actions, len_list=1):
    chosen = np.asarray(chosen)
    dist = np.zeros((chosen.size, n_actions, len_list))
    dist[np.arange(chosen.size), chosen, :] = 1.0
    return dist


def random_instance(rng, n_max=500, a_max=8, binary=True):
    """Random logged data with a random stochastic evaluation policy and q-hat table."""
    n = int(rng.integers(2, n_max + 1))
    A = int(rng.integers(2, a_max + 1))
    pb = rng.dirichlet(np.ones(A), size=n) * 0.9 + 0.1 / A
    cum = np.cumsum(pb, axis=1)
    actions = np.minimum((rng.random(n)[:, None] > cum).sum(axis=1), A - 1)
    rewards = (rng.random(n) < 0.4).astype(float) if binary else rng.random(n)
    fb = BanditFeedback(
        n_actions=A,
        len_list=1,
        contexts=rng.normal(size=(n, 2)),
        actions=actions,
        positions=np.zeros(n, dtype=int),
        rewards=rewards,
        propensities=pb[np.arange(n), actions],
        behavior_probs=pb,
    )
    pe = rng.dirichlet(np.ones(A), size=n)
    q = rng.random((n, A))
    return fb, pe[:, :, None], q
