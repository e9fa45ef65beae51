"""Deterministic encoder/decoder between data space and latent space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass
class Codec:
    kind: str
    data_dim: int
    latent_dim: int
    encode_matrix: np.ndarray | None = None  # m x d
    decode_matrix: np.ndarray | None = None  # d x m
    mean: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "identity":
            if self.latent_dim != self.data_dim:
                raise ConfigError("identity codec needs latent_dim == data_dim")
        elif self.kind == "linear":
            m, d = self.latent_dim, self.data_dim
            if self.encode_matrix.shape != (m, d) or self.decode_matrix.shape != (d, m) or self.mean.shape != (d,):
                raise DimensionError("linear codec matrices are dimensionally inconsistent")
        else:
            raise ConfigError(f"unknown codec kind {self.kind!r}")

    def encode(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.data_dim:
            raise DimensionError(f"codec expects data of dimension {self.data_dim}, got {x.shape[-1]}")
        if self.kind == "identity":
            return x.astype(np.float32, copy=True)
        centred = x.astype(np.float64) - self.mean
        return (centred @ self.encode_matrix.T).astype(np.float32)

    def decode(self, z):
        z = np.asarray(z)
        if z.shape[-1] != self.latent_dim:
            raise DimensionError(f"codec expects latents of dimension {self.latent_dim}, got {z.shape[-1]}")
        if self.kind == "identity":
            return z.astype(np.float32, copy=True)
        return (z.astype(np.float64) @ self.decode_matrix.T + self.mean).astype(np.float32)

    def tensors(self):
        if self.kind == "identity":
            return {}
        return {"codec/encode": self.encode_matrix.astype(np.float32),
                "codec/decode": self.decode_matrix.astype(np.float32),
                "codec/mean": self.mean.astype(np.float32)}

    def describe(self):
        return {"kind": self.kind, "data_dim": self.data_dim, "latent_dim": self.latent_dim}

    @classmethod
    def from_parts(cls, desc, tensors):
        if desc["kind"] == "identity":
            return cls("identity", desc["data_dim"], desc["latent_dim"])
        return cls("linear", desc["data_dim"], desc["latent_dim"],
                   np.asarray(tensors["codec/encode"], np.float64),
                   np.asarray(tensors["codec/decode"], np.float64),
                   np.asarray(tensors["codec/mean"], np.float64))


def fit_codec(kind, data, m=None):
    """Identity codec, or the least-squares linear autoencoder of rank ``m``.

    The linear codec projects onto the top-``m`` eigenvectors of the data
    covariance, which minimizes mean squared reconstruction error.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError("fit_codec needs a non-empty (n, d) data matrix")
    d = data.shape[1]
    m = d if m is None else int(m)
    if m > d or m < 1:
        raise ConfigError(f"latent dimension {m} must lie in 1..{d}")
    if kind == "identity":
        return Codec("identity", d, d)
    if kind != "linear":
        raise ConfigError(f"unknown codec kind {kind!r}")
    mean = data.mean(axis=0)
    cov = np.cov(data - mean, rowvar=False, bias=True).reshape(d, d)
    evals, evecs = np.linalg.eigh(cov)
    top = evecs[:, np.argsort(evals)[::-1][:m]]
    # fix eigenvector signs so fitting is reproducible across LAPACK builds
    signs = np.sign(top[np.abs(top).argmax(axis=0), np.arange(m)])
    top = top * signs
    return Codec("linear", d, m, top.T.copy(), top.copy(), mean)


def encode(codec, x):
    return codec.encode(x)


def decode(codec, z):
    return codec.decode(z)


def reconstruction_error(codec, data):
    """Mean over samples of the squared reconstruction error."""
    data = np.asarray(data, dtype=np.float64)
    rec = codec.decode(codec.encode(data)).astype(np.float64)
    return float(((rec - data) ** 2).sum(axis=1).mean())
