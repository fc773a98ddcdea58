"""Python bindings for the hexfleet dispatching library."""

from ._core import (
    CheckpointError,
    ConfigError,
    DependencyError,
    DomainError,
    ParseError,
    __version__,
    canonical_config,
    config_hash,
    evaluate,
    generate_corpus,
    geo_loss,
    geohash,
    geohash_decode,
    gradient_suite,
    haversine_km,
    simulate,
    train,
)
