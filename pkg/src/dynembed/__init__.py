"""dynembed: event-driven node embeddings for dynamic graphs.

The library ingests timestamped dyadic events (associations that grow
the graph, communications that flow over it), maintains evolving node
embeddings coupled to an attention-weighted adjacency state, trains the
model as a temporal point process, and answers link-ranking and
event-time queries.
"""

__version__ = "0.1.0"

from .events import (ASSOCIATION, COMMUNICATION, Event, EventLog, SlotSplit,
                     build_log, derive_link_status, load_adjacency, load_events,
                     save_events, split_slots)
from .graph import GraphState, init_state
from .model import (EmbeddingStore, GradientSet, ModelParams, ReplayContext,
                    aggregate, attention_coefficients, compatibility, intensity,
                    transfer, update_embedding)
from .prediction import (DensityQuery, FrozenContext, RankingResult, TimePrediction,
                         conditional_density, expected_event_time, predict_event_type,
                         predict_time, rank_link_candidates)
from .evaluation import SlotMetrics, evaluate_links, evaluate_time, report
from .synthetic import GeneratorConfig, generate, planted_config, planted_structure_check
from .training import (LossReport, TrainConfig, TrainResult, event_nll, survival_exact,
                       survival_mc, train)

__all__ = [
    "ASSOCIATION", "COMMUNICATION", "Event", "EventLog", "SlotSplit",
    "build_log", "derive_link_status", "load_adjacency", "load_events",
    "save_events", "split_slots",
    "GraphState", "init_state",
    "EmbeddingStore", "GradientSet", "ModelParams", "ReplayContext",
    "aggregate", "attention_coefficients", "compatibility", "intensity",
    "transfer", "update_embedding",
    "DensityQuery", "FrozenContext", "RankingResult", "TimePrediction",
    "conditional_density", "expected_event_time", "predict_event_type",
    "predict_time", "rank_link_candidates",
    "SlotMetrics", "evaluate_links", "evaluate_time", "report",
    "GeneratorConfig", "generate", "planted_config", "planted_structure_check",
    "LossReport", "TrainConfig", "TrainResult", "event_nll", "survival_exact",
    "survival_mc", "train",
]
