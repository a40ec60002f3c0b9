"""Evidence lower bounds and auxiliary losses.

Every objective is a maximization target returning per-sample values of shape
(B,) wrapped in an :class:`ElboBreakdown`, so that relations between the
objectives can be audited term by term. Noise is always passed in explicitly;
given parameters, inputs and noise the results are deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields

import torch

from . import gaussian as G
from .masking import split_foreground_background

DEFAULT_LAMBDA = 0.01


@dataclass
class ElboBreakdown:
    """Named per-sample terms.

    ``total = recon_image + pose_likelihood + recognizer_entropy
    - kl_appearance - kl_scene - kl_primitive + lambda_term`` with absent terms
    zero. ``recognizer_entropy`` is the entropy of q(s|x), i.e. minus the
    expected log-density, so it enters with a plus sign.
    """

    recon_image: torch.Tensor
    pose_likelihood: torch.Tensor
    recognizer_entropy: torch.Tensor
    kl_appearance: torch.Tensor
    kl_scene: torch.Tensor
    kl_primitive: torch.Tensor
    recognizer_loglik: torch.Tensor
    lambda_term: torch.Tensor
    total: torch.Tensor

    TERMS = (
        "recon_image",
        "pose_likelihood",
        "recognizer_entropy",
        "kl_appearance",
        "kl_scene",
        "kl_primitive",
        "recognizer_loglik",
        "lambda_term",
    )

    @classmethod
    def build(cls, batch: int, like: torch.Tensor, **terms) -> "ElboBreakdown":
        zero = torch.zeros(batch, dtype=like.dtype, device=like.device)
        values = {name: terms.get(name, zero) for name in cls.TERMS}
        values["total"] = (
            values["recon_image"]
            + values["pose_likelihood"]
            + values["recognizer_entropy"]
            - values["kl_appearance"]
            - values["kl_scene"]
            - values["kl_primitive"]
            + values["lambda_term"]
        )
        return cls(**values)

    def signed_sum(self) -> torch.Tensor:
        return (
            self.recon_image
            + self.pose_likelihood
            + self.recognizer_entropy
            - self.kl_appearance
            - self.kl_scene
            - self.kl_primitive
            + self.lambda_term
        )

    def as_dict(self, reduce: str = "mean") -> dict[str, float]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name).detach()
            out[f.name] = float(v.mean() if reduce == "mean" else v.sum())
        return out

    def index(self, idx) -> "ElboBreakdown":
        return ElboBreakdown(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    @classmethod
    def scatter(cls, batch: int, like: torch.Tensor, parts) -> "ElboBreakdown":
        """Assemble per-sample values from (row_indices, breakdown) parts."""
        values = {}
        for f in fields(cls):
            out = torch.zeros(batch, dtype=like.dtype, device=like.device)
            for rows, part in parts:
                out = out.index_put((rows,), getattr(part, f.name))
            values[f.name] = out
        return cls(**values)


@dataclass
class Noise:
    """Standard-normal draws for one sample of s, a, g and z per batch row."""

    s: torch.Tensor
    a: torch.Tensor
    g: torch.Tensor
    z: torch.Tensor

    def index(self, idx) -> "Noise":
        return Noise(self.s[idx], self.a[idx], self.g[idx], self.z[idx])

    @classmethod
    def zeros(cls, cfg, batch: int, dtype=torch.float32) -> "Noise":
        return cls(
            torch.zeros(batch, *cfg.pose_shape, dtype=dtype),
            torch.zeros(batch, *cfg.latent_shape, dtype=dtype),
            torch.zeros(batch, *cfg.latent_shape, dtype=dtype),
            torch.zeros(batch, *cfg.latent_shape, dtype=dtype),
        )


def draw_noise(cfg, batch: int, generator: torch.Generator | None = None, dtype=torch.float32) -> Noise:
    def randn(shape):
        return torch.randn(batch, *shape, generator=generator, dtype=dtype)

    return Noise(randn(cfg.pose_shape), randn(cfg.latent_shape), randn(cfg.latent_shape), randn(cfg.latent_shape))


def _joint_mask(visible: torch.Tensor | None, pose: torch.Tensor) -> torch.Tensor | None:
    if visible is None:
        return None
    return visible.to(pose.dtype)[:, :, None, None]


def recognizer_loss(pose_gt: torch.Tensor, q_pose: G.DiagonalGaussian, visible: torch.Tensor | None = None) -> torch.Tensor:
    """log q(s|x) summed over the cells of visible joints; shape (B,).

    Samples without any visible joint contribute 0 and trigger a warning.
    """
    if visible is not None and not bool(visible.any(dim=1).all()):
        warnings.warn("recognizer_loss: sample with no visible joints contributes 0", RuntimeWarning)
    return G.log_prob_diag(pose_gt, q_pose, event_ndim=3, mask=_joint_mask(visible, pose_gt))


def recognizer_objective(image, pose_gt, nets, visible=None) -> ElboBreakdown:
    """Pose-recognizer pretraining target as a breakdown (weight 1 on log q)."""
    loglik = recognizer_loss(pose_gt, nets.recognize_pose(image), visible)
    return ElboBreakdown.build(len(image), loglik, recognizer_loglik=loglik, lambda_term=loglik)


def pose_vae_elbo(pose, nets, noise_z, visible=None) -> ElboBreakdown:
    """E[log p(s|z)] - KL(q(z|s) || p(z)) with a single reparameterized z."""
    q_z = nets.encode_primitive(pose)
    z = G.sample_reparam(q_z, noise_z)
    pose_lik = G.log_prob_diag(pose, nets.generate_pose(z), event_ndim=3, mask=_joint_mask(visible, pose))
    kl = G.kl_to_standard_normal(q_z, event_ndim=3)
    return ElboBreakdown.build(len(pose), pose_lik, pose_likelihood=pose_lik, kl_primitive=kl)


def _image_terms(image, pose, nets, noise_a, noise_g):
    pair = split_foreground_background(image, pose, nets)
    q_a = nets.encode_appearance(pair.foreground, pose)
    q_g = nets.encode_scene(pair.background, pose)
    a = G.sample_reparam(q_a, noise_a)
    g = G.sample_reparam(q_g, noise_g)
    recon = G.log_prob_diag(image, nets.generate_image(pose, a, g), event_ndim=3)
    return recon, G.kl_to_standard_normal(q_a, event_ndim=3), G.kl_to_standard_normal(q_g, event_ndim=3)


def image_vae_elbo(image, pose, nets, noise_a, noise_g) -> ElboBreakdown:
    """E[log p(x|s,a,g)] - KL(q(a|s,x) || p(a)) - KL(q(g|s,x) || p(g))."""
    recon, kl_a, kl_g = _image_terms(image, pose, nets, noise_a, noise_g)
    return ElboBreakdown.build(len(image), recon, recon_image=recon, kl_appearance=kl_a, kl_scene=kl_g)


def _mirror_terms(image, pose, nets, noise: Noise, visible=None) -> dict:
    recon, kl_a, kl_g = _image_terms(image, pose, nets, noise.a, noise.g)
    q_z = nets.encode_primitive(pose)
    z = G.sample_reparam(q_z, noise.z)
    pose_lik = G.log_prob_diag(pose, nets.generate_pose(z), event_ndim=3, mask=_joint_mask(visible, pose))
    return dict(
        recon_image=recon,
        pose_likelihood=pose_lik,
        kl_appearance=kl_a,
        kl_scene=kl_g,
        kl_primitive=G.kl_to_standard_normal(q_z, event_ndim=3),
    )


def unsupervised_elbo(image, nets, noise: Noise) -> ElboBreakdown:
    """Lower bound on log p(x) for an unannotated image.

    s is drawn from q(s|x) first; a, g and z are then drawn conditioned on that
    single s, which also stands in for the outer expectations over q(s|x).
    """
    q_s = nets.recognize_pose(image)
    s = G.sample_reparam(q_s, noise.s)
    terms = _mirror_terms(image, s, nets, noise)
    terms["recognizer_entropy"] = G.entropy(q_s, event_ndim=3)
    return ElboBreakdown.build(len(image), image, **terms)


def supervised_elbo(image, pose_gt, nets, noise: Noise, visible=None) -> ElboBreakdown:
    """Lower bound on log p(x, s) with s given; the recognizer does not appear."""
    return ElboBreakdown.build(len(image), image, **_mirror_terms(image, pose_gt, nets, noise, visible))


def supervised_elbo_lambda(image, pose_gt, nets, noise: Noise, visible=None, lam: float = DEFAULT_LAMBDA) -> ElboBreakdown:
    """supervised_elbo + lam * log q(s|x)."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    terms = _mirror_terms(image, pose_gt, nets, noise, visible)
    loglik = recognizer_loss(pose_gt, nets.recognize_pose(image), visible)
    terms["recognizer_loglik"] = loglik
    terms["lambda_term"] = lam * loglik
    return ElboBreakdown.build(len(image), image, **terms)


def semisupervised_objective(images, poses, visible, annotated, nets, noise: Noise, lam: float = DEFAULT_LAMBDA):
    """Sum of the unsupervised bound over unannotated rows and the
    lambda-augmented supervised bound over annotated rows.

    Returns ``(total, breakdown)`` where ``breakdown`` holds per-sample values
    in batch order.
    """
    batch = len(images)
    if batch == 0:
        raise ValueError("semisupervised_objective needs a nonempty batch")
    annotated = torch.as_tensor(annotated, dtype=torch.bool)
    parts = []
    sup_rows = torch.nonzero(annotated).flatten()
    unsup_rows = torch.nonzero(~annotated).flatten()
    if len(sup_rows):
        vis = None if visible is None else visible[sup_rows]
        parts.append(
            (sup_rows, supervised_elbo_lambda(images[sup_rows], poses[sup_rows], nets, noise.index(sup_rows), vis, lam))
        )
    if len(unsup_rows):
        parts.append((unsup_rows, unsupervised_elbo(images[unsup_rows], nets, noise.index(unsup_rows))))
    breakdown = ElboBreakdown.scatter(batch, images, parts)
    return breakdown.total.sum(), breakdown
