from itertools import product

from meshslam.policy import DistributionDecision, Role, Route, decide


def test_tracking_policy_table():
    """The four displayed routing cases for the tracking node."""
    tr = Role.TRACKING
    assert decide(tr, {Role.MAPPING, Role.LOOP}) == DistributionDecision(
        Route.REMOTE_LM, Route.REMOTE_LC)
    assert decide(tr, {Role.MAPPING}) == DistributionDecision(
        Route.REMOTE_LM, Route.REMOTE_LM)
    assert decide(tr, {Role.LOOP}) == DistributionDecision(
        Route.LOCAL, Route.REMOTE_LC)
    assert decide(tr, set()) == DistributionDecision(Route.LOCAL, Route.LOCAL)


def test_mapping_policy():
    assert decide(Role.MAPPING, {Role.TRACKING, Role.LOOP}).lc_route is Route.REMOTE_LC
    assert decide(Role.MAPPING, {Role.TRACKING}).lc_route is Route.LOCAL
    assert decide(Role.MAPPING, set()).lm_route is Route.LOCAL


def test_loop_policy_always_local():
    for peers in (set(), {Role.TRACKING}, {Role.MAPPING},
                  {Role.TRACKING, Role.MAPPING}):
        d = decide(Role.LOOP, peers)
        assert d.lc_route is Route.LOCAL


def test_policy_total_and_deterministic():
    """Defined for every role x membership combination, and pure."""
    members = [set(), {Role.MAPPING}, {Role.LOOP}, {Role.MAPPING, Role.LOOP},
               {Role.TRACKING}, {Role.TRACKING, Role.MAPPING},
               {Role.TRACKING, Role.LOOP},
               {Role.TRACKING, Role.MAPPING, Role.LOOP}]
    for role, peers in product(Role, members):
        first = decide(role, peers)
        assert isinstance(first, DistributionDecision)
        for _ in range(3):
            assert decide(role, peers) == first


def test_own_role_in_peer_set_is_ignored():
    assert decide(Role.TRACKING, {Role.TRACKING}) == decide(Role.TRACKING, set())
