import numpy as np
import pytest

from blockdfl.aggregation import CandidateGlobalUpdate
from blockdfl.chain import Chain, ChainParams, HmacSigner, StakeLedger

ACCEPTANCE_REPORT: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_REPORT):
        terminalreporter.write_line(ACCEPTANCE_REPORT[k])


@pytest.fixture
def signer():
    return HmacSigner(20, seed=7)


@pytest.fixture
def chain(signer):
    """20 participants, 4 aggregators, 7 verifiers, uniform stake 10."""
    return Chain(ChainParams(4, 7, 5), signer, StakeLedger.uniform(20, 10))


def make_candidates(assignment, round_idx, signer, updates, n_providers=3):
    providers = assignment.providers
    out = []
    for k, (aid, g) in enumerate(zip(assignment.aggregators, updates)):
        pids = tuple(sorted(providers[(k + j) % len(providers)] for j in range(n_providers)))
        out.append(CandidateGlobalUpdate(aid, round_idx, np.asarray(g, float), pids).signed(signer))
    return out
