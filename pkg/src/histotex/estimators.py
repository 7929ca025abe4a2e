"""Scikit-learn style estimator wrappers around the synthesis pipeline.

The wrappers follow the fit/transform protocol (plus get_params /
set_params) so they compose with sklearn pipelines and parameter search,
without requiring sklearn itself.
"""

from __future__ import annotations

import inspect

import numpy as np

from .network import NetworkSpec, random_filter_bank
from .synthesis import SynthesisConfig, style_transfer, synthesize_texture


class _ParamsMixin:
    """get_params/set_params over __init__ keyword arguments."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def _check_fitted(self):
        if not getattr(self, "fitted_", False):
            raise RuntimeError(f"{type(self).__name__} is not fitted yet")


def _as_image(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected one (C, H, W) image, got shape {X.shape}")
    return X


class TextureSynthesizer(_ParamsMixin):
    """Learns the statistics of one exemplar texture; samples new ones.

    fit(X) ingests the exemplar image (C, H, W); transform() / sample()
    synthesizes a texture of `output_size` (defaults to the exemplar's).
    """

    def __init__(self, network: NetworkSpec | None = None, backend_seed: int = 0,
                 iterations: int = 700, pyramid_levels: int = 3, seed: int = 0,
                 output_size=None, config: SynthesisConfig | None = None):
        self.network = network
        self.backend_seed = backend_seed
        self.iterations = iterations
        self.pyramid_levels = pyramid_levels
        self.seed = seed
        self.output_size = output_size
        self.config = config

    def _resolved(self) -> SynthesisConfig:
        config = self.config or SynthesisConfig()
        config = SynthesisConfig.from_dict(config.to_dict())
        config.iterations = self.iterations
        config.pyramid_levels = self.pyramid_levels
        config.seed = self.seed
        config.output_size = self.output_size
        return config

    def fit(self, X, y=None):
        self.exemplar_ = _as_image(X)
        self.network_ = self.network or random_filter_bank(self.backend_seed)
        self.fitted_ = True
        return self

    def sample(self, seed: int | None = None):
        self._check_fitted()
        config = self._resolved()
        if seed is not None:
            config.seed = seed
        image, report = synthesize_texture(self.exemplar_, self.network_, config)
        self.report_ = report
        return image

    def transform(self, X=None):
        """Synthesize; X is ignored (kept for pipeline compatibility)."""
        return self.sample()

    def fit_transform(self, X, y=None):
        return self.fit(X).transform()


class StyleTransferrer(_ParamsMixin):
    """Learns a style exemplar with fit(); transform(content) stylizes."""

    def __init__(self, network: NetworkSpec | None = None, backend_seed: int = 0,
                 iterations: int = 700, pyramid_levels: int = 3, seed: int = 0,
                 config: SynthesisConfig | None = None):
        self.network = network
        self.backend_seed = backend_seed
        self.iterations = iterations
        self.pyramid_levels = pyramid_levels
        self.seed = seed
        self.config = config

    def _resolved(self) -> SynthesisConfig:
        config = self.config or SynthesisConfig()
        config = SynthesisConfig.from_dict(config.to_dict())
        config.iterations = self.iterations
        config.pyramid_levels = self.pyramid_levels
        config.seed = self.seed
        config.output_size = None
        return config

    def fit(self, X, y=None):
        self.style_ = _as_image(X)
        self.network_ = self.network or random_filter_bank(self.backend_seed)
        self.fitted_ = True
        return self

    def transform(self, X):
        self._check_fitted()
        content = _as_image(X)
        image, report = style_transfer(content, self.style_, self.network_,
                                       self._resolved())
        self.report_ = report
        return image
