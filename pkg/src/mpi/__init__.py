"""Master Patient Index: PHN issuance and validation, HL7 v2 exchange,
probabilistic record linkage, merge stewardship, and the registry service.
"""

from .identity import (  # noqa: F401
    Identifier,
    IdentifierKind,
    DemographicProfile,
    PatientRecord,
    RecordStatus,
    issue_phn,
    normalize_identifier,
    phn_for_sequence,
    validate_phn,
)
from .matching import (  # noqa: F401
    ComparatorConfig,
    Decision,
    MatchResult,
    Thresholds,
    dedup_scan,
    score_pair,
)
from .registry import Registry  # noqa: F401

__version__ = "0.1.0"
