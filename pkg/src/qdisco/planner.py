"""Tensor networks of question circuits and randomised greedy contraction paths.

Every index has dimension 2. A pairwise contraction of tensors with index
sets A and B costs 2 * 2**|A ∪ B| floating point operations. Path search
samples among the connected pairs with weights exp(-(ε - ε_min)/kT) where ε
is log2 of that cost, so with kT = 1 a move twice as expensive as the best is
taken e**-1 times as often.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circuit import Circuit, FunctorConfig, ParamStore, gate_matrix, light_cone, PARAMETRIC
from .sim import as_model

BYTES_PER_ENTRY = 16  # complex128
REFERENCE_MEMORY = 512e9


@dataclass
class TensorNetwork:
    tensors: list[tuple[np.ndarray | None, tuple[int, ...]]]
    open_indices: tuple[int, ...] = ()
    doubled: bool = False

    @property
    def index_sets(self) -> list[frozenset]:
        return [frozenset(ix) for _, ix in self.tensors]

    def check(self) -> None:
        seen: dict[int, int] = {}
        for _, ix in self.tensors:
            for i in ix:
                seen[i] = seen.get(i, 0) + 1
        bad = [i for i, c in seen.items() if c > 2]
        if bad:
            raise ValueError(f"indices used more than twice: {bad[:5]}")

    def structure_hash(self) -> str:
        text = json.dumps([list(ix) for _, ix in self.tensors]) + str(self.doubled)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ContractionPath:
    pairs: tuple[tuple[int, int], ...]  # tensor ids; each step creates id = n + step
    total_flops: float
    peak_memory: float  # bytes, largest intermediate
    largest_rank: int

    def to_json(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "total_flops": self.total_flops,
                "peak_memory": self.peak_memory, "largest_rank": self.largest_rank}

    @classmethod
    def from_json(cls, data: dict) -> "ContractionPath":
        return cls(tuple(tuple(p) for p in data["pairs"]), data["total_flops"],
                   data["peak_memory"], data["largest_rank"])


def to_tensor_network(circuit: Circuit, params=None, granularity: str = "block",
                      prune: bool = True, with_data: bool = True) -> TensorNetwork:
    """Network whose full contraction is the probability of the all-zero outcome.

    With discards the network is doubled: a ket copy, a conjugated bra copy,
    each discarded wire joining its ket and bra ends. Without discards only
    the amplitude network is built and the probability is its squared modulus.
    ``granularity`` is "block" (one tensor per word block) or "gate".
    """
    if granularity not in ("block", "gate"):
        raise ValueError("granularity must be 'block' or 'gate'")
    model = as_model(params, circuit.config) if params is not None else None
    blocks = list(circuit.blocks)
    keep = light_cone(blocks, circuit.measured) if prune else list(range(len(blocks)))
    ops: list[tuple[np.ndarray | None, tuple[int, ...]]] = []
    for i in keep:
        b = blocks[i]
        if granularity == "block":
            m = model.unitary(b.word, b.dagger) if (with_data and model) else None
            ops.append((m, b.qubits))
        else:
            for g in circuit.block_gates(b):
                m = None
                if with_data:
                    angle = g.bound_angle(params) if g.kind in PARAMETRIC else 0.0
                    m = gate_matrix(g.kind, angle)
                ops.append((m, g.qubits))
    used = sorted({q for _, qs in ops for q in qs} | set(circuit.measured))
    discarded = [q for q in used if q not in circuit.measured]
    doubled = bool(discarded)
    counter = iter(range(1 << 62))
    tensors: list[tuple[np.ndarray | None, tuple[int, ...]]] = []
    zero = np.array([1.0 + 0j, 0.0])

    def layer(conj: bool) -> dict[int, int]:
        cur = {}
        for q in used:
            cur[q] = next(counter)
            tensors.append((zero if with_data else None, (cur[q],)))
        for m, qs in ops:
            k = len(qs)
            outs = tuple(next(counter) for _ in qs)
            t = None
            if m is not None:
                t = (m.conj() if conj else m).reshape((2,) * (2 * k))
            tensors.append((t, outs + tuple(cur[q] for q in qs)))
            for q, o in zip(qs, outs):
                cur[q] = o
        for q in circuit.measured:
            tensors.append((zero if with_data else None, (cur[q],)))
        return cur

    ket = layer(False)
    if doubled:
        n_before = len(tensors)
        bra = layer(True)
        # discards: the bra end of a discarded wire reuses the ket end's label
        rename = {bra[q]: ket[q] for q in discarded}
        for k in range(n_before, len(tensors)):
            t, ix = tensors[k]
            tensors[k] = (t, tuple(rename.get(i, i) for i in ix))
    net = TensorNetwork(tensors, (), doubled)
    net.check()
    return net


# -- path search --------------------------------------------------------------------

def _one_path(sets: list[frozenset], kT: float, rng: np.random.Generator | None):
    n = len(sets)
    live: dict[int, frozenset] = dict(enumerate(sets))
    owners: dict[int, set[int]] = {}
    for t, ix in live.items():
        for i in ix:
            owners.setdefault(i, set()).add(t)
    edges: dict[tuple[int, int], int] = {}

    def add_edges(t):
        for i in live[t]:
            for o in owners[i]:
                if o != t:
                    a, b = min(o, t), max(o, t)
                    edges[(a, b)] = len(live[a] | live[b]) + 1  # log2 flops

    for t in live:
        add_edges(t)
    pairs = []
    flops = 0.0
    peak = max((len(s) for s in sets), default=0)
    nxt = n
    while len(live) > 1:
        if edges:
            keys = list(edges)
            cost = np.fromiter((edges[k] for k in keys), float, len(keys))
            if rng is None or kT <= 0:
                pick = keys[int(np.argmin(cost))]
            else:
                gumbel = rng.gumbel(size=cost.size)
                pick = keys[int(np.argmin((cost - cost.min()) / kT - gumbel))]
            a, b = pick
        else:  # disconnected pieces: outer product of the two smallest
            a, b = sorted(live, key=lambda t: (len(live[t]), t))[:2]
        sa, sb = live.pop(a), live.pop(b)
        flops += 2.0 ** (len(sa | sb) + 1)
        new = sa ^ sb
        for i in sa:
            owners[i].discard(a)
        for i in sb:
            owners[i].discard(b)
        for k in [k for k in edges if a in k or b in k]:
            del edges[k]
        live[nxt] = new
        for i in new:
            owners[i].add(nxt)
        add_edges(nxt)
        peak = max(peak, len(new))
        pairs.append((a, b))
        nxt += 1
    return ContractionPath(tuple(pairs), flops, 2.0 ** peak * BYTES_PER_ENTRY, peak)


def random_greedy_path(network: TensorNetwork, repeats: int = 128, kT: float = 1.0,
                       rng_seed: int = 0, history: list | None = None) -> ContractionPath:
    """Lowest-FLOPs path over ``repeats`` sampled greedy constructions.

    The first repeat is the deterministic greedy path. ``history`` receives
    the best FLOPs after each repeat.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    sets = network.index_sets
    rng = np.random.default_rng(rng_seed)
    best = None
    for r in range(repeats):
        path = _one_path(sets, kT, rng if r else None)
        if best is None or path.total_flops < best.total_flops:
            best = path
        if history is not None:
            history.append(best.total_flops)
    return best


def path_flops(network: TensorNetwork, path: ContractionPath) -> float:
    """Recompute the cost of ``path`` from scratch."""
    live = dict(enumerate(network.index_sets))
    nxt = len(live)
    total = 0.0
    for a, b in path.pairs:
        sa, sb = live.pop(a), live.pop(b)
        total += 2.0 ** (len(sa | sb) + 1)
        live[nxt] = sa ^ sb
        nxt += 1
    return total


def contract(network: TensorNetwork, path: ContractionPath) -> complex:
    """Reference contractor; the result is the probability for doubled networks
    and the amplitude otherwise."""
    live = {k: (t, list(ix)) for k, (t, ix) in enumerate(network.tensors)}
    nxt = len(live)
    for a, b in path.pairs:
        (ta, ia), (tb, ib) = live.pop(a), live.pop(b)
        shared = [i for i in ia if i in ib]
        t = np.tensordot(ta, tb, axes=([ia.index(i) for i in shared], [ib.index(i) for i in shared]))
        live[nxt] = (t, [i for i in ia if i not in shared] + [i for i in ib if i not in shared])
        nxt += 1
    (t, _), = live.values()
    return complex(t)


def network_probability(network: TensorNetwork, path: ContractionPath | None = None) -> float:
    path = path or random_greedy_path(network, repeats=1)
    v = contract(network, path)
    return float(v.real) if network.doubled else float(abs(v) ** 2)


def statevector_bytes(n: int) -> float:
    """Density-style simulation of n actors plus one reused ancilla."""
    return 2.0 ** (2 * (n + 1)) * BYTES_PER_ENTRY


def estimate_resources(stories, params: ParamStore | None = None, repeats: int = 128,
                       kT: float = 1.0, rng_seed: int = 0,
                       config: FunctorConfig = FunctorConfig(), cache_dir=None):
    """Per-instance FLOPs and memory of exact contraction, plus a per-width table."""
    from .circuit import build_circuits

    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
    rows = []
    for story in stories:
        pos, _ = build_circuits(story, None, config)
        net = to_tensor_network(pos, params, with_data=False)
        path = None
        key = f"{net.structure_hash()}-{repeats}-{kT}-{rng_seed}"
        if cache and (cache / f"{key}.json").exists():
            path = ContractionPath.from_json(json.loads((cache / f"{key}.json").read_text()))
        if path is None:
            path = random_greedy_path(net, repeats, kT, rng_seed)
            if cache:
                (cache / f"{key}.json").write_text(json.dumps(path.to_json()))
        rows.append({"id": story.id, "tier": story.tier, "width": story.width,
                     "tensors": len(net.tensors), "flops": path.total_flops,
                     "memory": path.peak_memory, "statevector": statevector_bytes(story.width),
                     "reference": REFERENCE_MEMORY})
    return rows, resource_table(rows)


def resource_table(rows) -> list[dict]:
    table = []
    for w in sorted({r["width"] for r in rows}):
        sel = [r for r in rows if r["width"] == w]
        lf = np.log10([r["flops"] for r in sel])
        lm = np.log10([r["memory"] for r in sel])
        table.append({"width": w, "n": len(sel),
                      "log10_flops_min": lf.min(), "log10_flops_mean": lf.mean(),
                      "log10_flops_max": lf.max(),
                      "log10_memory_min": lm.min(), "log10_memory_mean": lm.mean(),
                      "log10_memory_max": lm.max(),
                      "log10_statevector": math.log10(statevector_bytes(w))})
    return table
