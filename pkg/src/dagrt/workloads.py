"""Synthetic reference workloads and their generated task libraries.

Each template produces a JSON application plus one Python task library.
Task bodies are deterministic: they mix their input buffers into the node's
output buffer with a keyed hash, then occupy the PE for the platform's
nodecost with a plain sleep, so byte-level results never depend on the
scheduler, the PE, or wall-clock timing.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass
from typing import Optional

from . import model

# serial compute targets per template, microseconds
_TARGET_US = {
    "rc": 820,
    "tm": 4_390,
    "wifi_tx": 16_120,
    "pd": 95_830,
}

TEMPLATES = ("rc", "tm", "wifi_tx", "pd", "pulse", "fanout", "rc_stream")

_ALIASES = {
    "radar_correlator": "rc",
    "temporal_mitigation": "tm",
    "wifi_tx_chain": "wifi_tx",
    "pulse_doppler": "pd",
}

_VAR_BYTES = 64


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    app_path: str
    library_path: str
    prototype: model.ApplicationPrototype
    serial_cost_us: float
    input_bits: int


@dataclass
class _Node:
    name: str
    preds: list[str]
    succs: list[str]
    # (resource_type, cost_us) pairs; cpu always present and first
    platforms: list[tuple[str, int]]


def _chain(names: list[str]) -> list[_Node]:
    nodes = []
    for i, name in enumerate(names):
        preds = [names[i - 1]] if i > 0 else []
        succs = [names[i + 1]] if i < len(names) - 1 else []
        nodes.append(_Node(name, preds, succs, []))
    return nodes


def _link(nodes: dict[str, _Node], a: str, b: str) -> None:
    nodes[a].succs.append(b)
    nodes[b].preds.append(a)


def _rc_shape() -> list[_Node]:
    # seven nodes: split, two parallel branches, join, two post stages
    names = [f"rc_n{i}" for i in range(7)]
    nodes = {n: _Node(n, [], [], []) for n in names}
    for a, b in [
        ("rc_n0", "rc_n1"), ("rc_n0", "rc_n2"),
        ("rc_n1", "rc_n3"), ("rc_n2", "rc_n3"),
        ("rc_n3", "rc_n4"), ("rc_n4", "rc_n5"), ("rc_n5", "rc_n6"),
    ]:
        _link(nodes, a, b)
    return [nodes[n] for n in names]


def _tm_shape() -> list[_Node]:
    # eleven nodes: chain with one diamond in the middle
    names = [f"tm_n{i:02d}" for i in range(11)]
    nodes = {n: _Node(n, [], [], []) for n in names}
    chain_pairs = [
        ("tm_n00", "tm_n01"), ("tm_n01", "tm_n02"), ("tm_n02", "tm_n03"),
        ("tm_n03", "tm_n04"), ("tm_n03", "tm_n05"),
        ("tm_n04", "tm_n06"), ("tm_n05", "tm_n06"),
        ("tm_n06", "tm_n07"), ("tm_n07", "tm_n08"),
        ("tm_n08", "tm_n09"), ("tm_n09", "tm_n10"),
    ]
    for a, b in chain_pairs:
        _link(nodes, a, b)
    return [nodes[n] for n in names]


def _wifi_tx_shape() -> list[_Node]:
    return _chain([f"wt_n{i:03d}" for i in range(93)])


def _pd_shape(width: int, stages: int) -> list[_Node]:
    names = ["pd_head"]
    for s in range(stages):
        names.extend(f"pd_s{s}_{i:03d}" for i in range(width))
    names.extend(["pd_gather", "pd_tail"])
    nodes = {n: _Node(n, [], [], []) for n in names}
    for s in range(stages):
        for i in range(width):
            cur = f"pd_s{s}_{i:03d}"
            prev = "pd_head" if s == 0 else f"pd_s{s - 1}_{i:03d}"
            _link(nodes, prev, cur)
        if s == stages - 1:
            for i in range(width):
                _link(nodes, f"pd_s{s}_{i:03d}", "pd_gather")
    _link(nodes, "pd_gather", "pd_tail")
    return [nodes[n] for n in names]


def _fanout_shape(width: int) -> list[_Node]:
    names = ["fo_head"] + [f"fo_w{i:02d}" for i in range(width)] + ["fo_tail"]
    nodes = {n: _Node(n, [], [], []) for n in names}
    for i in range(width):
        _link(nodes, "fo_head", f"fo_w{i:02d}")
        _link(nodes, f"fo_w{i:02d}", "fo_tail")
    return [nodes[n] for n in names]


def _assign_costs(
    nodes: list[_Node],
    rng: random.Random,
    target_us: Optional[int],
    accel: dict[str, str],
    fft_speedup: float,
    flat_cost_us: Optional[int] = None,
) -> None:
    """Draw per-node cpu costs, scale their sum to the target, and add the
    accelerator alternative for nodes named in ``accel``."""
    if flat_cost_us is not None:
        raw = [float(flat_cost_us)] * len(nodes)
    else:
        raw = [rng.uniform(0.5, 1.5) for _ in nodes]
        scale = target_us / sum(raw)
        raw = [r * scale for r in raw]
    for node, cost in zip(nodes, raw):
        cpu_cost = max(1, round(cost))
        node.platforms = [("cpu", cpu_cost)]
        alt = accel.get(node.name)
        if alt is not None:
            node.platforms.append((alt, max(1, round(cpu_cost / fft_speedup))))


def _emit_app(
    name: str,
    nodes: list[_Node],
    library_file: str,
    rng: random.Random,
    streaming: bool,
) -> dict:
    doc: dict = {"AppName": name, "SharedObject": library_file}
    edge_cost = {}
    for node in nodes:
        for succ in node.succs:
            edge_cost[(node.name, succ)] = rng.randint(1, 20)
    variables: dict = {}
    dag: dict = {}
    for node in nodes:
        if streaming:
            args: list[str] = []
        else:
            args = [f"v_{p}" for p in node.preds] + [f"v_{node.name}"]
            variables.setdefault(
                f"v_{node.name}",
                {
                    "bytes": 8,
                    "is_ptr": True,
                    "ptr_alloc_bytes": _VAR_BYTES,
                    "val": [],
                },
            )
        dag[node.name] = {
            "arguments": args,
            "predecessors": [
                {"name": p, "edgecost": edge_cost[(p, node.name)]}
                for p in node.preds
            ],
            "successors": [
                {"name": s, "edgecost": edge_cost[(node.name, s)]}
                for s in node.succs
            ],
            "platforms": [
                {"name": rtype, "runfunc": _runfunc_name(node.name, rtype),
                 "nodecost": cost}
                for rtype, cost in node.platforms
            ],
        }
    if not streaming:
        # a seed input for the head nodes so results depend on initial data
        seed_val = [rng.randrange(256) for _ in range(16)]
        variables["v_seed"] = {
            "bytes": 16,
            "is_ptr": False,
            "ptr_alloc_bytes": 0,
            "val": seed_val,
        }
        for node in nodes:
            if not node.preds:
                dag[node.name]["arguments"].insert(0, "v_seed")
    doc["Variables"] = variables
    doc["DAG"] = dag
    if streaming:
        doc["Streaming"] = {
            "frames_source": None,
            "channels": {
                f"{node.name}->{succ}": _VAR_BYTES
                for node in nodes
                for succ in node.succs
            },
        }
    return doc


def _runfunc_name(node: str, resource_type: str) -> str:
    return f"{node}__{resource_type}"


_LIB_PRELUDE = '''\
"""Generated task library -- deterministic buffer mixing plus timed occupancy."""

import hashlib
import time


def _occupy(duration_s):
    """Hold the PE for the task's service time; sleeping keeps other
    worker threads runnable."""
    if duration_s > 0:
        time.sleep(duration_s)


def _mix(bufs, salt):
    """Overwrite the last buffer with a keyed hash of all the others."""
    h = hashlib.blake2b(salt)
    for b in bufs[:-1]:
        h.update(bytes(b))
    out = bufs[-1]
    digest = h.digest()
    reps = -(-len(out) // len(digest))
    out[:] = (digest * reps)[: len(out)]


def _mix_stream(bufs, n_in, salt):
    """Streaming variant: fill every output from the inputs, the frame
    index, the node salt, and the output's position."""
    frame = bytes(bufs[-1])
    for j, out in enumerate(bufs[n_in:-1]):
        h = hashlib.blake2b(salt)
        h.update(frame)
        h.update(bytes([j]))
        for b in bufs[:n_in]:
            h.update(bytes(b))
        digest = h.digest()
        reps = -(-len(out) // len(digest))
        out[:] = (digest * reps)[: len(out)]
'''


def _emit_library(
    path: str, nodes: list[_Node], streaming: bool
) -> None:
    lines = [_LIB_PRELUDE, ""]
    for node in nodes:
        salt = node.name.encode().hex()
        for rtype, cost in node.platforms:
            fn = _runfunc_name(node.name, rtype)
            if streaming:
                body = (
                    f"    _mix_stream(bufs, {len(node.preds)},"
                    f" bytes.fromhex('{salt}'))"
                )
            else:
                body = f"    _mix(bufs, bytes.fromhex('{salt}'))"
            lines.append(f"def {fn}(bufs):")
            lines.append(body)
            lines.append(f"    _occupy({cost / 1e6})")
            lines.append("    return 0")
            lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def generate_reference_workload(
    template: str,
    out_dir: str,
    seed: int = 0,
    *,
    width: int = 128,
    stages: int = 8,
    fft_speedup: float = 4.0,
    node_cost_us: Optional[int] = None,
    name: Optional[str] = None,
) -> WorkloadSpec:
    """Generate one application (JSON plus task library) into ``out_dir``.

    Templates:

    * ``rc``        -- 7 nodes, two fft-capable, ~0.82 ms serial compute
    * ``tm``        -- 11 nodes, two mmult-capable, ~4.39 ms
    * ``wifi_tx``   -- 93-node serial chain, one fft-capable node, ~16.12 ms
    * ``pd``        -- 1 + stages*width + 2 nodes (defaults give 1027),
                       fft-capable stages, ~95.83 ms
    * ``pulse``     -- single node, ``node_cost_us`` service time
    * ``fanout``    -- head + ``width`` fft-capable workers + tail
    * ``rc_stream`` -- the rc shape as a streaming (pipelined) application

    The same (template, seed, parameters) always produces byte-identical
    files.
    """
    template = _ALIASES.get(template, template)
    if template not in TEMPLATES:
        from .errors import UnknownTemplate

        raise UnknownTemplate(template)
    rng = random.Random(f"{template}:{seed}:{width}:{stages}")
    app_name = name or f"{template}_s{seed}"
    streaming = template == "rc_stream"

    if template in ("rc", "rc_stream"):
        nodes = _rc_shape()
        accel = {"rc_n3": "fft", "rc_n5": "fft"}
        target = _TARGET_US["rc"]
    elif template == "tm":
        nodes = _tm_shape()
        accel = {"tm_n04": "mmult", "tm_n05": "mmult"}
        target = _TARGET_US["tm"]
    elif template == "wifi_tx":
        nodes = _wifi_tx_shape()
        accel = {"wt_n045": "fft"}
        target = _TARGET_US["wifi_tx"]
    elif template == "pd":
        nodes = _pd_shape(width, stages)
        accel = {n.name: "fft" for n in nodes if "_s" in n.name}
        target = _TARGET_US["pd"]
    elif template == "pulse":
        nodes = _chain(["pulse_n0"])
        accel = {}
        target = None
        node_cost_us = node_cost_us or 1000
    else:  # fanout
        nodes = _fanout_shape(width)
        accel = {n.name: "fft" for n in nodes if n.name.startswith("fo_w")}
        target = None
        node_cost_us = node_cost_us or 1000

    _assign_costs(nodes, rng, target, accel, fft_speedup, node_cost_us)
    if streaming and node_cost_us is not None:
        for node in nodes:
            node.platforms = [
                (rtype, node_cost_us) for rtype, _ in node.platforms
            ]

    os.makedirs(out_dir, exist_ok=True)
    library_file = f"{app_name}_tasks.py"
    library_path = os.path.join(out_dir, library_file)
    _emit_library(library_path, nodes, streaming)
    doc = _emit_app(app_name, nodes, library_file, rng, streaming)
    app_path = os.path.join(out_dir, f"{app_name}.json")
    with open(app_path, "w") as fh:
        json.dump(doc, fh, indent=1)

    prototype = model.parse_application(json.dumps(doc))
    report = model.validate_prototype(prototype)
    assert report.clean, f"generated workload invalid: {report}"
    serial_cost = sum(n.platforms[0][1] for n in nodes)
    input_bits = 8 * sum(
        v["ptr_alloc_bytes"] if v["is_ptr"] else v["bytes"]
        for v in doc["Variables"].values()
    )
    if streaming:
        input_bits = 8 * sum(doc["Streaming"]["channels"].values())
    return WorkloadSpec(
        name=app_name,
        app_path=app_path,
        library_path=library_path,
        prototype=prototype,
        serial_cost_us=float(serial_cost),
        input_bits=input_bits,
    )
