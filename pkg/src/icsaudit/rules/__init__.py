"""CVE applicability rules: predicate language, rule-set loading and matching."""
from .conditions import (
    Always,
    And,
    BannerContains,
    Condition,
    FieldContains,
    FirmwareSatisfies,
    MatchOutcome,
    ModelIn,
    Op,
    Or,
    PortOpen,
    ServicePresent,
    VersionConstraint,
    compare_version,
    evaluate_condition,
    parse_constraint,
)
from .matching import DeviceAssessment, Exposure, VulnFinding, exposure_signature, match_cves
from .ruleset import (
    Certainty,
    CveRule,
    PrevalenceKey,
    RuleSet,
    format_stride,
    load_bundled_ruleset,
    load_bundled_rulesets,
    load_ruleset,
)
