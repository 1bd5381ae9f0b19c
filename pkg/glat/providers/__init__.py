"""Feature providers standing in for pretrained backbones."""

from glat.providers.feature_provider import (
    FeatureProvider,
    identity_projections,
    local_extract,
    make_frozen_projections,
)

__all__ = ["FeatureProvider", "identity_projections", "local_extract", "make_frozen_projections"]
