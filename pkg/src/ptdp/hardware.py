"""Cluster description and placement of logical ranks onto physical devices."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, replace
from pathlib import Path

INTRA_NODE = "intra_node"
INTER_NODE = "inter_node"


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class HardwareSpec:
    gpus_per_node: int = 8
    peak_flops: float = 312e12
    intra_node_bw: float = 300e9  # bytes/s per direction
    inter_node_bw: float = 25e9  # bytes/s per link (200 Gb/s)
    links_per_node: int = 8
    efficiency: float = 0.5
    intra_latency: float = 3e-6
    inter_latency: float = 10e-6
    memory_bytes: float = 80e9

    def __post_init__(self):
        if self.gpus_per_node < 1:
            raise ValueError("gpus_per_node must be >= 1")
        if self.links_per_node < 1:
            raise ValueError("links_per_node must be >= 1")
        if self.peak_flops <= 0 or self.intra_node_bw <= 0 or self.inter_node_bw <= 0:
            raise ValueError("peak_flops and bandwidths must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"efficiency must be in (0, 1], got {self.efficiency}")
        if self.intra_latency < 0 or self.inter_latency < 0:
            raise ValueError("latencies must be non-negative")
        if self.memory_bytes <= 0:
            raise ValueError("memory_bytes must be positive")

    @property
    def sustained_flops(self) -> float:
        return self.peak_flops * self.efficiency

    def bandwidth(self, link_class: str) -> float:
        return self.intra_node_bw if link_class == INTRA_NODE else self.inter_node_bw

    def latency(self, link_class: str) -> float:
        return self.intra_latency if link_class == INTRA_NODE else self.inter_latency

    def transfer_time(self, nbytes: float, link_class: str, bandwidth: float | None = None) -> float:
        """Alpha-beta time for one message; zero bytes costs nothing."""
        if nbytes <= 0:
            return 0.0
        bw = self.bandwidth(link_class) if bandwidth is None else bandwidth
        return self.latency(link_class) + float(nbytes) / bw

    def scaled(self, factor: float) -> "HardwareSpec":
        """Same cluster with compute and every bandwidth ``factor`` times faster."""
        return replace(
            self,
            peak_flops=self.peak_flops * factor,
            intra_node_bw=self.intra_node_bw * factor,
            inter_node_bw=self.inter_node_bw * factor,
            intra_latency=self.intra_latency / factor,
            inter_latency=self.inter_latency / factor,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "HardwareSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown hardware keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "HardwareSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    # DGX A100 nodes: 8 x 80GB A100, 8 x 200 Gb/s HDR InfiniBand per node.
    "selene": HardwareSpec(),
}


def preset(name: str) -> HardwareSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown hardware preset {name!r}; known: {', '.join(PRESETS)}") from None


@dataclass(frozen=True)
class RankMapping:
    """Placement of ``(pipeline, tensor, data)`` ranks onto ``(node, local device)``.

    Tensor ranks vary fastest, then data ranks, then pipeline ranks, so a
    tensor group never straddles a node when ``t <= g`` and consecutive
    pipeline stages land on different nodes once ``t * d >= g``.
    """

    pipeline_size: int
    tensor_size: int
    data_size: int
    gpus_per_node: int
    cross_node_tensor: bool = False

    @property
    def devices(self) -> int:
        return self.pipeline_size * self.tensor_size * self.data_size

    def _check(self, pipeline_rank, tensor_rank, data_rank):
        if not (
            0 <= pipeline_rank < self.pipeline_size
            and 0 <= tensor_rank < self.tensor_size
            and 0 <= data_rank < self.data_size
        ):
            raise IndexError(
                f"rank ({pipeline_rank}, {tensor_rank}, {data_rank}) outside "
                f"({self.pipeline_size}, {self.tensor_size}, {self.data_size})"
            )

    def device(self, pipeline_rank: int, tensor_rank: int = 0, data_rank: int = 0) -> tuple[int, int]:
        self._check(pipeline_rank, tensor_rank, data_rank)
        t, g = self.tensor_size, self.gpus_per_node
        group = data_rank + self.data_size * pipeline_rank
        if self.cross_node_tensor and t > g:
            flat = tensor_rank + t * group
            return divmod(flat, g)
        # Whole tensor groups per node; leftover slots stay idle when t does not divide g.
        groups_per_node = g // t
        node, slot = divmod(group, groups_per_node)
        return node, slot * t + tensor_rank

    def node(self, pipeline_rank: int, tensor_rank: int = 0, data_rank: int = 0) -> int:
        return self.device(pipeline_rank, tensor_rank, data_rank)[0]

    def ranks(self):
        for pp in range(self.pipeline_size):
            for dp in range(self.data_size):
                for tp in range(self.tensor_size):
                    yield pp, tp, dp


def default_mapping(
    pipeline_size: int,
    tensor_size: int,
    data_size: int,
    hardware: HardwareSpec,
    allow_cross_node_tensor: bool = False,
) -> RankMapping:
    if min(pipeline_size, tensor_size, data_size) < 1:
        raise MappingError("parallel sizes must be >= 1")
    g = hardware.gpus_per_node
    if tensor_size > g and not allow_cross_node_tensor:
        raise MappingError(
            f"tensor-parallel size {tensor_size} exceeds {g} GPUs per node; "
            "cross-node tensor parallelism must be enabled explicitly"
        )
    return RankMapping(pipeline_size, tensor_size, data_size, g, cross_node_tensor=tensor_size > g)


def link_class(mapping: RankMapping, rank_a: tuple[int, int, int], rank_b: tuple[int, int, int]) -> str:
    """Ranks are ``(pipeline, tensor, data)`` triples."""
    return INTRA_NODE if mapping.node(*rank_a) == mapping.node(*rank_b) else INTER_NODE


def group_bandwidth(mapping: RankMapping, members, hardware: HardwareSpec) -> tuple[str, float]:
    """Effective (link class, bandwidth) of a collective over ``members``.

    A group inside one node runs over NVLink.  A group spanning nodes is
    limited by its thinnest node: with ``k`` members on a node, ``k`` rings
    can drive ``min(k, links_per_node)`` network links in parallel.
    """
    per_node = Counter(mapping.node(*rank) for rank in members)
    if len(per_node) <= 1:
        return INTRA_NODE, hardware.intra_node_bw
    k = min(min(per_node.values()), hardware.links_per_node)
    return INTER_NODE, k * hardware.inter_node_bw
