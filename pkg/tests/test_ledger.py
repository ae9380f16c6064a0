import json

import pytest
from hypothesis import given, strategies as st

from chainbench import ledger as lg
from chainbench.errors import AlreadyExists, InvalidArgument, UnknownAddress
from chainbench.scripts import make_address, make_do_nothing, make_transfer, sign_txn
from chainbench.vm import compile_script, execute

A = make_address("A")
B = make_address("B")


def funded(balance=100):
    s = lg.create_account(lg.LedgerState(), A)
    s = lg.create_account(s, B)
    return lg.mint(s, A, balance)


def commit(state, txn, now=0.0):
    assert lg.validate_txn(state, txn, now) is lg.Verdict.ACCEPT
    outcome = execute(compile_script(txn.script), txn.sender, lg.BalanceView(state), txn.max_steps)
    return lg.apply_txn(state, txn, outcome)


def test_create_account():
    s = lg.create_account(lg.LedgerState(), A)
    assert lg.query_account(s, A) == lg.AccountState(A, 0, 0)
    with pytest.raises(AlreadyExists):
        lg.create_account(s, A)


def test_account_pool_for_twelve_clients():
    s = lg.LedgerState()
    for i in range(12):
        s = lg.create_account(s, make_address(f"c{i}-sender"))
        s = lg.create_account(s, make_address(f"c{i}-receiver"))
    assert len(s) == 24


def test_mint():
    s = lg.mint(lg.create_account(lg.LedgerState(), A), A, 10**9)
    assert lg.query_account(s, A).balance == 10**9
    assert lg.query_account(s, A).sequence_number == 0
    with pytest.raises(UnknownAddress):
        lg.mint(s, B, 1)
    with pytest.raises(InvalidArgument):
        lg.mint(s, A, 2**64)


def test_states_are_persistent():
    s0 = funded()
    s1, _ = commit(s0, sign_txn(A, 0, make_transfer(B, 10)))
    assert lg.query_account(s0, A).balance == 100
    assert lg.query_account(s1, A).balance == 90


def test_validate_verdicts():
    s = funded()
    assert lg.validate_txn(s, sign_txn(A, 0, make_do_nothing())) is lg.Verdict.ACCEPT
    assert lg.validate_txn(s, sign_txn(A, 1, make_do_nothing())) is lg.Verdict.SEQ_GAP
    assert lg.validate_txn(s, sign_txn(A, 0, make_do_nothing(), 0.0), now=61.0) is lg.Verdict.EXPIRED
    assert lg.validate_txn(s, sign_txn(make_address("x"), 0, make_do_nothing())) is lg.Verdict.UNKNOWN_SENDER
    t = sign_txn(A, 0, make_do_nothing())
    bad = type(t)(t.sender, t.sequence_number, t.script, t.expiration, t.max_steps, b"\x00" * 32)
    assert lg.validate_txn(s, bad) is lg.Verdict.BAD_AUTH


def test_transfer_applies_write_set():
    s, out = commit(funded(), sign_txn(A, 0, make_transfer(B, 10)))
    assert out.ok
    assert lg.query_account(s, A) == lg.AccountState(A, 90, 1)
    assert lg.query_account(s, B).balance == 10
    assert s.version == 1


def test_do_nothing_only_bumps_sequence():
    s, _ = commit(funded(), sign_txn(A, 0, make_do_nothing()))
    assert lg.query_account(s, A) == lg.AccountState(A, 100, 1)


def test_replay_is_rejected():
    t = sign_txn(A, 0, make_transfer(B, 1))
    s, _ = commit(funded(), t)
    assert lg.validate_txn(s, t) is lg.Verdict.STALE_SEQ


def test_abort_still_charges_sequence_number():
    s, out = commit(funded(5), sign_txn(A, 0, make_transfer(B, 10)))
    assert not out.ok
    assert lg.query_account(s, A) == lg.AccountState(A, 5, 1)
    assert lg.query_account(s, B).balance == 0
    assert s.version == 1


def test_dump_and_hash():
    s = funded()
    doc = json.loads(lg.dump_json(s))
    assert doc["accounts"][A.hex()] == {"balance": 100, "sequence_number": 0}
    assert lg.state_hash(s) == lg.state_hash(funded())
    assert lg.state_hash(s) != lg.state_hash(funded(101))


ops = st.lists(
    st.tuples(st.sampled_from(["transfer", "nothing", "replay"]), st.integers(1, 60)),
    max_size=30,
)


@given(st.integers(0, 500), ops)
def test_conservation_and_sequence_invariants(minted, plan):
    s = funded(minted)
    seqs = [0]
    for kind, amount in plan:
        seq = lg.query_account(s, A).sequence_number
        if kind == "replay" and seq > 0:
            assert lg.validate_txn(s, sign_txn(A, seq - 1, make_do_nothing())) is not lg.Verdict.ACCEPT
            continue
        script = make_transfer(B, amount) if kind == "transfer" else make_do_nothing()
        before = s.version
        s, _ = commit(s, sign_txn(A, seq, script))
        assert s.version == before + 1
        assert s.total_balance() == minted
        assert all(a.balance >= 0 for a in s.accounts.values())
        seqs.append(lg.query_account(s, A).sequence_number)
    assert seqs == list(range(len(seqs)))


@given(st.integers(1, 100), st.integers(1, 200))
def test_apply_is_deterministic(bal, amount):
    t = sign_txn(A, 0, make_transfer(B, amount))
    a, _ = commit(funded(bal), t)
    b, _ = commit(funded(bal), t)
    assert a == b and lg.dump_json(a) == lg.dump_json(b)
