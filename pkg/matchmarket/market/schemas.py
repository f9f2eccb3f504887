from enum import Enum
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class Policy(str, Enum):
    """Local matching policies. The 1-sided policies keep side U inactive and side V active."""
    GREEDY2 = 'Greedy2'
    PATIENT2 = 'Patient2'
    GREEDY1 = 'Greedy1'
    PATIENT1 = 'Patient1'
    INACTIVE = 'Inactive'

    @classmethod
    def from_name(cls, name: str) -> 'Policy':
        """Case-insensitive lookup, e.g. 'greedy2' -> Policy.GREEDY2"""
        for policy in cls:
            if policy.value.lower() == name.strip().lower():
                return policy
        raise ValueError(f"Unknown policy '{name}'; expected one of {[p.value for p in cls]}")

    def is_greedy_on(self, side: 'Side') -> bool:
        """Whether agents of `side` try to match on arrival"""
        return self == Policy.GREEDY2 or (self == Policy.GREEDY1 and side == Side.V)

    def is_patient_on(self, side: 'Side') -> bool:
        """Whether agents of `side` try to match at their critical time"""
        return self == Policy.PATIENT2 or (self == Policy.PATIENT1 and side == Side.V)


MATCHING_POLICIES = (Policy.GREEDY2, Policy.PATIENT2, Policy.GREEDY1, Policy.PATIENT1)

# Row label used for the offline benchmark next to policy rows
OMNISCIENT = 'Omniscient'


class Side(str, Enum):
    U = 'U'
    V = 'V'


class MarketParams(BaseModel):
    """A market (lambda_a, lambda_b, p): two Poisson arrival streams and an edge probability"""
    model_config = ConfigDict(frozen=True)

    lambda_a: float = Field(gt=0, description="Arrivals per unit time on side U")
    lambda_b: float = Field(gt=0, description="Arrivals per unit time on side V")
    p: float = Field(gt=0, lt=1, description="Probability that a U-V pair is compatible")

    @property
    def d_a(self) -> float:
        return self.lambda_a * self.p

    @property
    def d_b(self) -> float:
        return self.lambda_b * self.p

    def swapped(self) -> 'MarketParams':
        """The same market with the roles of U and V exchanged"""
        return MarketParams(lambda_a=self.lambda_b, lambda_b=self.lambda_a, p=self.p)


class Densities(BaseModel):
    """Densities d = lambda * p and the imbalance delta"""
    model_config = ConfigDict(frozen=True)

    d_a: float = Field(gt=0, description="Density of side U")
    d_b: float = Field(gt=0, description="Density of side V")
    delta: float = Field(ge=0, le=1, description="|d_a - d_b| / (d_a + d_b)")


class Agent(BaseModel):
    """One agent of a realized trajectory and how it left the market"""
    model_config = ConfigDict(frozen=True)

    id: int = Field(description="Arrival sequence number")
    side: Side
    arrival_time: float = Field(ge=0)
    criticality_time: float = Field(description="Arrival time plus an Exp(1) lifetime")
    outcome: Literal['matched', 'perished', 'remaining']
    partner_id: Optional[int] = Field(default=None, description="Partner id when matched")
    match_time: Optional[float] = Field(default=None, description="Time of the match when matched")

    @property
    def departure_time(self) -> float:
        """End of the presence interval [arrival_time, departure_time)"""
        if self.outcome == 'matched':
            return self.match_time
        if self.outcome == 'perished':
            return self.criticality_time
        return float('inf')


class EventLog(BaseModel):
    """Full realized trajectory of one simulation run"""
    model_config = ConfigDict(frozen=True)

    params: MarketParams
    policy: Policy
    horizon: float
    seed: int
    replication: int = 0
    agents: tuple[Agent, ...] = ()
    edges: frozenset[tuple[int, int]] = Field(
        default=frozenset(),
        description="(u_id, v_id) pairs whose coin came up heads while both were in the pool"
    )
    pool_snapshots: Optional[tuple[tuple[float, int, int], ...]] = None

    def matched_pairs(self) -> list[tuple[int, int]]:
        """Matched (u_id, v_id) pairs, each listed once"""
        return [
            (agent.id, agent.partner_id)
            for agent in self.agents
            if agent.outcome == 'matched' and agent.side == Side.U
        ]


class LossReport(BaseModel):
    """Per-side and total loss estimates, with standard errors over replications"""
    model_config = ConfigDict(frozen=True)

    policy: str
    horizon: float
    burn_in: float = 0.0
    n_reps: int = 1
    loss_a: float
    loss_b: float
    loss_total: float
    perished_a: int
    perished_b: int
    matched_a: int
    matched_b: int
    remaining_a: int
    remaining_b: int
    arrived_a: int
    arrived_b: int
    se_a: float = 0.0
    se_b: float = 0.0
    se_total: float = 0.0
    zero_denominator: bool = Field(default=False, description="No agent arrived during the run")


class RateEntry(BaseModel):
    """A single transition of a pool-size chain"""
    model_config = ConfigDict(frozen=True)

    source: tuple[int, int]
    target: tuple[int, int]
    rate: float = Field(ge=0)


class PoolDistribution(BaseModel):
    """Probability mass over the truncated grid {0..A_max} x {0..B_max}"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: tuple[int, int]
    mass: np.ndarray
    leak: float = Field(ge=0)
    policy: Optional[Policy] = None
    params: Optional[MarketParams] = None
    method: str = 'manual'
    residual: Optional[float] = None

    @classmethod
    def point_mass(cls, grid: tuple[int, int], state: tuple[int, int], **kwargs) -> 'PoolDistribution':
        mass = np.zeros((grid[0] + 1, grid[1] + 1))
        mass[state] = 1.0
        return cls(grid=grid, mass=mass, leak=0.0, **kwargs)

    @property
    def marginal_a(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    @property
    def marginal_b(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    def mean(self) -> tuple[float, float]:
        """(E[A], E[B]) under the distribution"""
        a = np.arange(self.grid[0] + 1)
        b = np.arange(self.grid[1] + 1)
        return float(a @ self.marginal_a), float(b @ self.marginal_b)

    def to_csv(self) -> str:
        """CSV with header i,j,prob and a trailing '# leak=<value>' line"""
        lines = ['i,j,prob']
        for i, j in zip(*np.nonzero(self.mass)):
            lines.append(f"{i},{j},{self.mass[i, j]!r}")
        lines.append(f"# leak={self.leak!r}")
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_csv(cls, text: str, grid: tuple[int, int]) -> 'PoolDistribution':
        mass = np.zeros((grid[0] + 1, grid[1] + 1))
        leak = 0.0
        for line in text.splitlines():
            line = line.strip()
            if not line or line == 'i,j,prob':
                continue
            if line.startswith('# leak='):
                leak = float(line[len('# leak='):])
                continue
            if line.startswith('#'):
                continue
            i, j, prob = line.split(',')
            mass[int(i), int(j)] = float(prob)
        return cls(grid=grid, mass=mass, leak=leak)


class StationaryFunctionals(BaseModel):
    """Stationary expectations and the losses they reduce to"""
    model_config = ConfigDict(frozen=True)

    policy: Policy
    e_A: float = Field(ge=0, description="E[A]")
    e_B: float = Field(ge=0, description="E[B]")
    e_A_geo: float = Field(ge=0, description="E[A (1-p)^B]")
    e_B_geo: float = Field(ge=0, description="E[B (1-p)^A]")
    loss_a: float
    loss_b: float
    loss_total: float


class MixingTimeEstimate(BaseModel):
    """First sampled time within epsilon of stationarity, with the grid step that precedes it"""
    model_config = ConfigDict(frozen=True)

    time: float
    previous_time: float = Field(description="Last sampled time still above epsilon (0 when none)")
    tv: float
    epsilon: float


class RootSet(BaseModel):
    """Characteristic pool sizes, the shifted variants, and the sigma inputs they were solved with"""
    model_config = ConfigDict(frozen=True)

    k2: float
    l2: float
    k1: float
    k2_lower: Optional[float] = None
    l2_lower: Optional[float] = None
    k1_lower: Optional[float] = None
    k1_upper: Optional[float] = None
    l1: Optional[float] = None
    sigma_a: Optional[float] = None
    sigma_b: Optional[float] = None


class RootChecks(BaseModel):
    """Outcome of every sandwich/ordering inequality, on the oriented market"""
    model_config = ConfigDict(frozen=True)

    roots: RootSet
    swapped: bool
    checks: dict[str, bool]
    flags: list[str] = Field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return all(self.checks.values())


class UpperBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    greedy2_upper_a: float
    greedy2_upper_b: float
    greedy2_upper_total: float
    patient2_upper_a: float
    patient2_upper_b: float
    patient2_upper_total: float
    patient2_balanced_exponent: Optional[float] = Field(
        default=None, description="Exponent of the balanced-case form, whose constant is unknown"
    )
    alg1_upper_a: float
    alg1_upper_b: float
    alg1_upper_total: float
    swapped: bool = False
    regime_flags: list[str] = Field(default_factory=list)


class LowerBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    opt_lower: Optional[float] = None
    opt_lower_asymptotic: Optional[float] = None
    omn_lower: Optional[float] = None
    omn_lower_balanced: Optional[float] = None
    greedy1_lower: Optional[float] = None
    patient1_lower: Optional[float] = None
    delta_lower: float
    delta_floor_a: float
    delta_floor_b: float
    swapped: bool = False
    regime_flags: list[str] = Field(default_factory=list)


class BoundSet(BaseModel):
    """Every theoretical bound for one parameterization; values are asymptotic"""
    model_config = ConfigDict(frozen=True)

    lambda_a: float
    lambda_b: float
    p: float
    d_a: float
    d_b: float
    greedy2_upper_a: float
    greedy2_upper_b: float
    greedy2_upper_total: float
    patient2_upper_a: float
    patient2_upper_b: float
    patient2_upper_total: float
    patient2_balanced_exponent: Optional[float] = None
    alg1_upper_a: float
    alg1_upper_b: float
    alg1_upper_total: float
    opt_lower: Optional[float] = None
    opt_lower_asymptotic: Optional[float] = None
    omn_lower: Optional[float] = None
    omn_lower_balanced: Optional[float] = None
    greedy1_lower: Optional[float] = None
    patient1_lower: Optional[float] = None
    delta_lower: float
    delta_floor_a: float
    delta_floor_b: float
    swapped: bool = False
    asymptotic: bool = True
    regime_flags: list[str] = Field(default_factory=list)

    def upper_for(self, policy: str) -> Optional[float]:
        """Total-loss upper bound that applies to a policy row"""
        return {
            Policy.GREEDY2.value: self.greedy2_upper_total,
            Policy.PATIENT2.value: self.patient2_upper_total,
            Policy.GREEDY1.value: self.alg1_upper_total,
            Policy.PATIENT1.value: self.alg1_upper_total,
            Policy.INACTIVE.value: 1.0,
        }.get(policy)

    def lower_for(self, policy: str) -> float:
        """Total-loss lower bound that applies to a policy row (Delta when out of regime)"""
        value = {
            Policy.GREEDY2.value: self.opt_lower,
            Policy.PATIENT2.value: self.omn_lower,
            Policy.GREEDY1.value: self.greedy1_lower,
            Policy.PATIENT1.value: self.patient1_lower,
            OMNISCIENT: self.omn_lower,
        }.get(policy)
        return self.delta_lower if value is None else value


class PropositionCheck(BaseModel):
    """One measured tail event against its pass threshold"""
    model_config = ConfigDict(frozen=True)

    proposition: str
    region: str
    tail_mass: Optional[float] = Field(default=None, ge=0, le=1)
    threshold: float
    passed: Optional[bool] = None
    skipped: bool = False
    note: str = ''


class ConcentrationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    policy: Policy
    params: MarketParams
    sigma_a: float
    sigma_b: float
    region: str
    tail_mass_outside: float = Field(ge=0, le=1)
    entries: list[PropositionCheck]

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries if not entry.skipped)


class BalanceResiduals(BaseModel):
    """Largest |flux out - flux in| over each family of cuts"""
    model_config = ConfigDict(frozen=True)

    vertical: float
    horizontal: float
    diagonal: Optional[float] = None

    @property
    def worst(self) -> float:
        return max(v for v in (self.vertical, self.horizontal, self.diagonal) if v is not None)


class SimulationConsistency(BaseModel):
    model_config = ConfigDict(frozen=True)

    policy: Policy
    reference_kind: Literal['stationary_loss', 'inactive_mean_pool']
    simulated: float
    simulated_se: float
    reference: float
    z_score: float = Field(description="|simulated - reference| in standard errors")
    within_tolerance: bool


class SweepSpec(BaseModel):
    """A (d_a, d_b) grid; lambdas follow from a fixed p or a fixed lambda_b"""
    d_a: list[float] = Field(min_length=1)
    d_b: Optional[list[float]] = Field(default=None, description="None sweeps the balanced diagonal d_b = d_a")
    p: Optional[float] = None
    lambda_b: Optional[float] = None
    policies: Optional[list[str]] = None


class RunConfig(BaseModel):
    """Effective configuration of a command run, echoed into its output"""
    model_config = ConfigDict(extra='forbid')

    lambda_a: float = 100.0
    lambda_b: float = 100.0
    p: float = 0.05
    policy: str = Policy.GREEDY2.value
    horizon: float = Field(default=100.0, gt=0)
    replications: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    burn_in: float = Field(default=0.0, ge=0)
    grid: Optional[tuple[int, int]] = None
    sigma_a: Optional[float] = Field(default=None, gt=0)
    sigma_b: Optional[float] = Field(default=None, gt=0)
    format: Literal['csv', 'json'] = 'csv'
    method: Literal['auto', 'direct', 'power'] = 'auto'
    sweep: Optional[SweepSpec] = None
