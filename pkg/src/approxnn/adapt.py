"""Runtime adaptation: the configuration ladder and the strategies that move
along it after every inference.

The ladder orders profiled configurations from least approximate (rung 0, the
all-exact baseline) to most approximate, keyed by descending MAC cost_ratio
with ties broken by ascending measured QoS loss; outlier-flagged
configurations are excluded. Strategies observe each inference result and
move a cursor before the next event: toward more approximation when recent
behavior looks reliable, back toward exactness when it does not. Moves toward
milder configurations are always exponential (1, 2, 4, ... rungs on
consecutive same-direction moves); moves toward more aggressive ones are
linear or exponential per the cursor mode. Clamping at either end, holding,
or reversing direction resets the doubling.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .executor import InferenceResult, run_inference
from .graph import Configuration


class LadderError(ValueError):
    """The configuration ladder cannot support adaptation."""


@dataclass
class AdaptStep:
    t: float
    rung: int
    config_id: str
    predicted: int
    confidence: float
    macs: int
    wall_time: float
    label: int | None = None


class AdaptAbort(RuntimeError):
    """Inference failed mid-stream; .steps holds the partial log."""

    def __init__(self, steps, cause):
        super().__init__(f"adaptation aborted after {len(steps)} events: {cause}")
        self.steps = steps


class ConfigurationLadder:
    """Profiled configurations ordered by ascending aggressiveness."""

    def __init__(self, rungs):
        if not rungs:
            raise LadderError("empty ladder")
        if not rungs[0].is_baseline():
            raise LadderError("rung 0 must be the all-exact baseline")
        self.rungs = list(rungs)

    def __len__(self):
        return len(self.rungs)

    def __getitem__(self, i) -> Configuration:
        return self.rungs[i]

    @classmethod
    def build(cls, configs, include_outliers: bool = False) -> "ConfigurationLadder":
        """Order profiled configs by descending cost_ratio (ties: ascending
        measured qos_loss), baseline first, outliers dropped."""
        profiled = [c for c in configs if c.profile is not None]
        if not profiled:
            raise LadderError("no profiled configurations to build a ladder from")
        baseline = [c for c in profiled if c.is_baseline()]
        if not baseline:
            raise LadderError("profiled configurations lack the all-exact baseline")
        rest = [
            c
            for c in profiled
            if not c.is_baseline() and (include_outliers or not c.outlier)
        ]
        rest.sort(key=lambda c: (-c.profile.cost_ratio, c.profile.qos_loss, c.id))
        return cls(baseline[:1] + rest)


@dataclass
class LadderCursor:
    """Current rung plus the per-direction doubling state for exponential moves."""

    index: int = 0
    mode: str = "exponential"  # applies to 'more'; 'less' is always exponential
    step: int = 1              # jump size if the next move repeats last_direction
    last_direction: str | None = None

    def __post_init__(self):
        if self.mode not in ("linear", "exponential"):
            raise ValueError(f"cursor mode must be 'linear' or 'exponential', got {self.mode!r}")

    def hold(self) -> None:
        self.step = 1
        self.last_direction = None

    def move(self, direction: str, n_rungs: int) -> None:
        if direction not in ("more", "less"):
            raise ValueError(f"direction must be 'more' or 'less', got {direction!r}")
        if direction == self.last_direction:
            jump = self.step
        else:
            jump = 1
        if self.mode == "linear" and direction == "more":
            jump = 1
        target = self.index + jump if direction == "more" else self.index - jump
        clamped = min(max(target, 0), n_rungs - 1)
        moved_onto_bound = clamped != target
        self.index = clamped
        self.last_direction = direction
        # Linear 'more' never accelerates; clamping restarts the doubling.
        if moved_onto_bound or (self.mode == "linear" and direction == "more"):
            self.step = 1
        else:
            self.step = jump * 2


class Strategy:
    """Base runtime strategy: owns a cursor, observes each InferenceResult."""

    name = "strategy"

    def __init__(self, mode: str = "exponential", start_rung: int = 0):
        self.cursor = LadderCursor(index=start_rung, mode=mode)
        self.n_rungs = None  # bound by adapt_loop

    def bind(self, n_rungs: int) -> None:
        if n_rungs < 1:
            raise LadderError("strategy needs at least one rung")
        self.n_rungs = n_rungs
        self.cursor.index = min(self.cursor.index, n_rungs - 1)

    def rung(self) -> int:
        return self.cursor.index

    def observe(self, result: InferenceResult) -> None:
        raise NotImplementedError

    def describe(self) -> str:
        return f"{self.name}/{self.cursor.mode}"


class FixedStrategy(Strategy):
    """Never moves; rung 0 by default (useful as a baseline runner)."""

    name = "fixed"

    def __init__(self, rung: int = 0):
        super().__init__(mode="linear", start_rung=rung)

    def observe(self, result) -> None:
        pass

    def describe(self) -> str:
        return f"{self.name}@{self.cursor.index}"


class NaiveStrategy(Strategy):
    """Same prediction as last time -> approximate more; changed -> less."""

    name = "naive"

    def __init__(self, mode: str = "exponential"):
        super().__init__(mode=mode)
        self.prev = None

    def observe(self, result) -> None:
        pred = int(result.predicted[0])
        if self.prev is not None:
            if pred == self.prev:
                self.cursor.move("more", self.n_rungs)
            else:
                self.cursor.move("less", self.n_rungs)
        self.prev = pred


class StateDrivenStrategy(Strategy):
    """Vote-based reliability index over the last ``memory`` predictions.

    Once the FIFO is full, each inference votes: all-equal raises
    V = max(0, V) + 1, otherwise V = min(0, V) - 1, clamped to
    [-v_limit, v_limit]. Hitting +v_limit moves more approximate, -v_limit
    moves less; either trigger resets V to 0 (without a reset the saturated
    index would re-trigger every step)."""

    name = "state"

    def __init__(self, memory: int = 3, v_limit: int = 2, mode: str = "linear"):
        if memory < 2:
            raise ValueError(f"memory must be >= 2, got {memory}")
        if v_limit < 1:
            raise ValueError(f"v_limit must be >= 1, got {v_limit}")
        super().__init__(mode=mode)
        self.memory = deque(maxlen=memory)
        self.v = 0
        self.v_limit = v_limit

    def observe(self, result) -> None:
        pred = int(result.predicted[0])
        self.memory.append(pred)
        if len(self.memory) < self.memory.maxlen:
            return
        if len(set(self.memory)) == 1:
            self.v = max(0, self.v) + 1
        else:
            self.v = min(0, self.v) - 1
        self.v = min(max(self.v, -self.v_limit), self.v_limit)
        if self.v <= -self.v_limit:
            self.cursor.move("less", self.n_rungs)
            self.v = 0
        elif self.v >= self.v_limit:
            self.cursor.move("more", self.n_rungs)
            self.v = 0

    def describe(self) -> str:
        return f"{self.name}(N={self.memory.maxlen},VL={self.v_limit})/{self.cursor.mode}"


@dataclass
class ConfidenceThresholds:
    """Per-class hysteresis bounds derived from profiled confidence stats.

    For classes where both averages exist and correct > incorrect:
    less = incorrect + 0.5 * (correct - incorrect) and
    more = incorrect + 0.75 * (correct - incorrect), so
    incorrect < less < more < correct. Classes with missing or inverted
    stats are disabled: predictions of those classes hold the current rung.
    """

    less: dict = field(default_factory=dict)
    more: dict = field(default_factory=dict)

    @classmethod
    def from_profile(cls, record) -> "ConfidenceThresholds":
        less, more = {}, {}
        for cls_id, s in record.per_class.items():
            if s.correct_mean is None or s.incorrect_mean is None:
                continue
            c_minus, c_plus = s.incorrect_mean, s.correct_mean
            if c_plus <= c_minus:
                continue
            less[cls_id] = c_minus + 0.5 * (c_plus - c_minus)
            more[cls_id] = c_minus + 0.75 * (c_plus - c_minus)
        return cls(less, more)

    def action(self, cls_id: int, confidence: float) -> str:
        if cls_id not in self.less:
            return "hold"
        if confidence > self.more[cls_id]:
            return "more"
        if confidence < self.less[cls_id]:
            return "less"
        return "hold"


class ConfidenceStrategy(Strategy):
    """Move by the calibrated confidence of the preceding prediction, using
    the thresholds of the rung that produced it."""

    name = "confidence"

    def __init__(self, thresholds_by_rung, mode: str = "exponential"):
        super().__init__(mode=mode)
        self.thresholds_by_rung = list(thresholds_by_rung)

    def bind(self, n_rungs: int) -> None:
        if n_rungs != len(self.thresholds_by_rung):
            raise LadderError(
                f"{len(self.thresholds_by_rung)} threshold sets for {n_rungs} rungs"
            )
        super().bind(n_rungs)

    @classmethod
    def for_ladder(cls, ladder: ConfigurationLadder, mode: str = "exponential"):
        return cls(
            [ConfidenceThresholds.from_profile(c.profile) for c in ladder.rungs],
            mode=mode,
        )

    def observe(self, result) -> None:
        thresholds = self.thresholds_by_rung[self.cursor.index]
        action = thresholds.action(int(result.predicted[0]), float(result.top_confidence[0]))
        if action == "hold":
            self.cursor.hold()
        else:
            self.cursor.move(action, self.n_rungs)


def adapt_loop(graph, ladder: ConfigurationLadder, strategy: Strategy, events,
               temperature=None) -> list:
    """Run the adaptation loop over a stream of TraceEvents.

    Per event: run inference under the strategy's current rung (chosen from
    the state of previous inferences only), then feed the result back. On an
    inference error the partial log is flushed inside an AdaptAbort.
    """
    strategy.bind(len(ladder))
    steps = []
    for event in events:
        rung = strategy.rung()
        config = ladder[rung]
        try:
            result = run_inference(graph, config, event.input, temperature=temperature)
        except Exception as err:
            raise AdaptAbort(steps, err) from err
        steps.append(
            AdaptStep(
                t=event.t,
                rung=rung,
                config_id=config.id,
                predicted=int(result.predicted[0]),
                confidence=float(result.top_confidence[0]),
                macs=result.cost.macs,
                wall_time=result.wall_time,
                label=event.label,
            )
        )
        strategy.observe(result)
    return steps
