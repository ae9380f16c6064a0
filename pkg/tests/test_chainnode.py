import pytest
from hypothesis import given, settings, strategies as st

from chainbench import ledger as lg
from chainbench.chainnode import ChainConfig, ConsensusKind, Mode, RejectReason, spawn_network
from chainbench.chainnode.node import CommitRecord, ValidatorNode
from chainbench.consensus import GENESIS, Block, NetConfig, bft_quorum
from chainbench.errors import ConfigurationError, MeasurementError
from chainbench.scripts import make_address, make_do_nothing, make_transfer, sign_txn

A = make_address("A")
B = make_address("B")


def network(**kw):
    net = spawn_network(ChainConfig(**kw))
    net.create_account(A)
    net.create_account(B)
    net.mint(A, 1000)
    return net


def test_spawn_four_validators():
    net = spawn_network(ChainConfig(num_validators=4))
    assert len(net.nodes) == 4
    assert net.nodes[0].consensus.quorum == bft_quorum(4) == 3
    assert all(n.ledger == lg.LedgerState() for n in net.nodes)


def test_single_validator_orders_locally():
    net = network(num_validators=1)
    assert net.submit_txn(sign_txn(A, 0, make_transfer(B, 5))).admitted
    assert net.settle()
    assert net.query_account(B).balance == 5


@pytest.mark.parametrize(
    "kw, field",
    [
        ({"num_validators": 0}, "num_validators"),
        ({"batch_size": 0}, "batch_size"),
        ({"mempool_capacity": 0}, "mempool_capacity"),
        ({"gateway": 4}, "gateway"),
        ({"consensus": "pbft"}, "consensus"),
    ],
)
def test_invalid_config_names_field(kw, field):
    with pytest.raises(ConfigurationError) as err:
        spawn_network(ChainConfig(**kw))
    assert err.value.field == field


def test_from_mapping_rejects_unknown_key():
    with pytest.raises(ConfigurationError) as err:
        ChainConfig.from_mapping({"validators": 4})
    assert err.value.field == "validators"
    cfg = ChainConfig.from_mapping({"num_validators": 7, "drop_rate": 0.05, "consensus": "cft"})
    assert cfg.num_validators == 7 and cfg.net.drop_rate == 0.05 and cfg.consensus is ConsensusKind.CFT


def test_receipts():
    net = network(mempool_capacity=2)
    t0 = sign_txn(A, 0, make_do_nothing())
    assert net.submit_txn(t0).admitted
    assert net.submit_txn(t0).reason is RejectReason.DUPLICATE
    assert net.submit_txn(sign_txn(A, 1, make_do_nothing())).admitted
    assert net.submit_txn(sign_txn(A, 2, make_do_nothing())).reason is RejectReason.BACKPRESSURE
    assert net.submit_txn(sign_txn(make_address("x"), 0, make_do_nothing())).reason is RejectReason.UNKNOWN_SENDER
    forged = sign_txn(B, 0, make_do_nothing())
    forged = type(forged)(forged.sender, 0, forged.script, forged.expiration, forged.max_steps, b"\x01" * 32)
    assert net.submit_txn(forged).reason is RejectReason.BAD_AUTH
    assert net.settle()
    assert net.submit_txn(t0).reason is RejectReason.STALE
    assert net.submit_txn(sign_txn(A, 2, make_do_nothing(), -1000.0)).reason is RejectReason.EXPIRED


def test_three_transfers_advance_every_validator():
    net = network()
    before = [n.published.version for n in net.nodes]
    for s in range(3):
        assert net.submit_txn(sign_txn(A, s, make_transfer(B, 1))).admitted
    assert net.settle()
    assert [n.published.version for n in net.nodes] == [v + 3 for v in before]
    assert net.query_account(B).balance == 3


def test_stale_txn_in_block_is_skipped():
    node = ValidatorNode(0, ChainConfig(num_validators=1))
    node.ledger = lg.mint(lg.create_account(lg.create_account(lg.LedgerState(), A), B), A, 10)
    t0 = sign_txn(A, 0, make_transfer(B, 1))
    block = Block(GENESIS.id, 1, 0, (t0, t0, sign_txn(A, 1, make_do_nothing())), None)
    records: list[CommitRecord] = []
    node.record_commits = True
    node._execute_block(block, records)
    assert node.skipped == 1 and node.executed == 2
    assert lg.query_account(node.ledger, A).sequence_number == 2
    assert [r.sequence_number for r in records] == [0, 1]


def test_network_info_echo_and_uptime():
    net = spawn_network(ChainConfig(num_validators=4))
    a = net.network_info()
    assert (a.num_validators, a.consensus, a.mode, a.gateway) == (4, "bft", "virtual", 0)
    net.run_for(0.5)
    b = net.network_info()
    assert b.uptime >= a.uptime + 0.5
    assert spawn_network(ChainConfig(consensus=ConsensusKind.CFT)).network_info().consensus == "cft"


def test_query_reflects_only_committed_state():
    net = network()
    net.submit_txn(sign_txn(A, 0, make_transfer(B, 7)))
    assert net.query_account(B).balance == 0
    assert net.settle()
    assert net.query_account(B).balance == 7


def test_trace_disabled_by_default():
    with pytest.raises(MeasurementError):
        spawn_network(ChainConfig()).trace_events()


def test_execution_never_precedes_commit(tmp_path):
    net = network(trace=True)
    for s in range(10):
        net.submit_txn(sign_txn(A, s, make_transfer(B, 1)))
        net.run_for(0.0002)
    assert net.settle()
    events = net.trace_events()
    for v in range(4):
        commits = {e["round"]: e["time"] for e in events if e["validator"] == v and e["event"] == "commit"}
        executes = {e["round"]: e["time"] for e in events if e["validator"] == v and e["event"] == "execute"}
        assert commits and commits.keys() == executes.keys()
        assert all(executes[r] >= commits[r] for r in commits)
    net.write_trace(tmp_path / "trace.jsonl")
    assert (tmp_path / "trace.jsonl").read_text().count("\n") == len(events)


def drive(net, senders, per_sender):
    admitted = []
    for k in range(per_sender):
        for s in senders:
            t = sign_txn(s, k, make_transfer(B, 1))
            if net.submit_txn(t).admitted:
                admitted.append(t.key)
        net.run_for(0.0001)
    return admitted


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**32),
    n=st.sampled_from([1, 4, 7]),
    consensus=st.sampled_from(list(ConsensusKind)),
    drop=st.sampled_from([0.0, 0.05]),
)
def test_replicated_ledgers_match(seed, n, consensus, drop):
    net = spawn_network(ChainConfig(num_validators=n, consensus=consensus, net=NetConfig(drop_rate=drop, seed=seed)))
    senders = [make_address(f"p{i}") for i in range(3)]
    for s in senders + [B]:
        net.create_account(s)
    for s in senders:
        net.mint(s, 50)
    drive(net, senders, 5)
    assert net.settle()
    assert len(set(net.ledger_dumps())) == 1
    assert len(set(net.state_hashes())) == 1


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32), consensus=st.sampled_from(list(ConsensusKind)))
def test_fault_free_commits_each_admitted_txn_once(seed, consensus):
    net = spawn_network(ChainConfig(consensus=consensus, net=NetConfig(seed=seed)))
    senders = [make_address(f"q{i}") for i in range(4)]
    for s in senders + [B]:
        net.create_account(s)
    for s in senders:
        net.mint(s, 50)
    admitted = drive(net, senders, 8)
    assert net.settle()
    for node in net.nodes:
        keys = [t.key for blk in node.consensus.committed for t in blk.payload]
        assert sorted(keys) == sorted(admitted)


def test_wall_mode_rejected_config_before_threads():
    with pytest.raises(ConfigurationError):
        spawn_network(ChainConfig(mode=Mode.WALL, num_validators=0))
