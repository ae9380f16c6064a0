"""Shared fixtures for virtual-time runs that also expose the commit log."""

from chainbench.bench import BenchConfig, ClientsConfig, make_clients, run_three_phase
from chainbench.chainnode import ChainConfig, spawn_network
from chainbench.consensus import NetConfig

import oracles


def observed_run(seed, num_clients=12, total=6000, n=4, **chain_kw):
    net = spawn_network(ChainConfig(num_validators=n, net=NetConfig(seed=seed), **chain_kw))
    clients = make_clients(ClientsConfig(num_clients=num_clients, total_txns=total))
    m = run_three_phase(clients, net, BenchConfig(), seed=seed)
    return net, clients, m


def oracle_rates(net, clients, m):
    """Per-client committed-count / duration straight from the gateway commit log."""
    log = net.commit_log()
    out = []
    for c, o in zip(clients, m.observations):
        count = oracles.commit_log_count(log, c.sender, o.t_start, o.t_end)
        out.append(count / (o.t_end - o.t_start))
    return out
