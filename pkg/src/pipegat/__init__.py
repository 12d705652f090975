"""Pipeline-parallel graph attention training on simulated devices."""

__version__ = "0.1.0"

from .batching import BatchTuple, SplitPlan, split_mask, split_microbatches  # noqa: E402
from .datasets import Dataset, DatasetError, load_dataset, make_planted_dataset, save_dataset  # noqa: E402
from .gat import GATLayer, GatLayerParams, LayerSeq, build_gat_model, build_mlp, gat_backward, gat_forward  # noqa: E402
from .graph import Graph, GraphError, edge_retention, from_edges, induced_subgraph  # noqa: E402
from .pipeline import GPipe, PipelineConfig, bubble_stats, partition_model, pipeline_step  # noqa: E402

__all__ = [
    "BatchTuple",
    "Dataset",
    "DatasetError",
    "GATLayer",
    "GPipe",
    "GatLayerParams",
    "Graph",
    "GraphError",
    "LayerSeq",
    "PipelineConfig",
    "SplitPlan",
    "build_gat_model",
    "build_mlp",
    "bubble_stats",
    "edge_retention",
    "from_edges",
    "gat_backward",
    "gat_forward",
    "induced_subgraph",
    "load_dataset",
    "make_planted_dataset",
    "partition_model",
    "pipeline_step",
    "save_dataset",
    "split_mask",
    "split_microbatches",
]
