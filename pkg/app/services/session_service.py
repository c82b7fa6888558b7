#!/usr/bin/env python3
"""
Servicio de sesiones simuladas en tiempo real sobre trazas procesadas.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from app.config.pipeline import RunConfig
from app.core.exceptions import InvalidParamsError
from app.core.stream_harness import aggregate_decisions, run_session, summarize_sessions
from app.models.gbdt import GbdtModel
from app.models.session import AdversaryMode, AggregatedDecision, SessionDecision, SessionSummary
from app.models.signal import ProcessedTrace

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class SessionService:
    model: GbdtModel
    config: RunConfig = field(default_factory=RunConfig)

    def simulate(self, processed: Sequence[ProcessedTrace], adversary: AdversaryMode = AdversaryMode.NONE,
                 offset_s: float = 0.0, subjects: Optional[Sequence[str]] = None) -> List[SessionDecision]:
        """
        Sesiones legítimas de cada sujeto y, si se pide, la misma sesión bajo
        ataque. Las decisiones salen en orden de sujeto, modo y ventana.
        """
        adversary = AdversaryMode(adversary)
        available = sorted({t.subject_id for t in processed})
        subjects = list(subjects) if subjects is not None else available
        unknown = sorted(set(subjects) - set(available))
        if unknown:
            raise InvalidParamsError(f"Unknown subjects: {unknown}")
        if adversary == AdversaryMode.BASELINE and len(available) < 2:
            raise InvalidParamsError("Baseline attacks need at least 2 subjects")

        modes = [AdversaryMode.NONE] if adversary == AdversaryMode.NONE else [AdversaryMode.NONE, adversary]
        pre = self.config.preprocess
        policy = self.config.pairs
        decisions: List[SessionDecision] = []
        for subject in subjects:
            for mode in modes:
                decisions.extend(run_session(
                    processed, subject, self.model, self.config.latency, mode,
                    replay_offset_s=offset_s,
                    token_device=policy.token_device,
                    wearables=policy.wearables,
                    window_s=pre.window_feat_s,
                    preprocess=pre,
                    quality=self.config.quality,
                    tolerance_ms=policy.sync_tolerance_ms,
                ))
        summary = summarize_sessions(decisions)
        logger.info(
            f"Simulated {len(subjects)} sessions ({adversary.value}): {summary.n_decisions} decisions, "
            f"legit accept {_fmt(summary.legit_accept_rate)}, adversary accept {_fmt(summary.adversary_accept_rate)}"
        )
        return decisions

    def summarize(self, decisions: Sequence[SessionDecision]) -> SessionSummary:
        return summarize_sessions(decisions)

    def aggregate(self, decisions: Sequence[SessionDecision]) -> Optional[List[AggregatedDecision]]:
        """Agregación k-de-n si la configuración la activa"""
        k_of_n = self.config.evaluation.k_of_n
        if not k_of_n:
            return None
        if len(k_of_n) != 2:
            raise InvalidParamsError(f"k_of_n must be [k, n], got {k_of_n}")
        return aggregate_decisions(decisions, k=k_of_n[0], n=k_of_n[1])


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.3f}"
