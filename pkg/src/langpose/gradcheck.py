"""Central finite-difference checks of every differentiable operation, in float64."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import losses as L
from .model import (
    HeatmapHead,
    InstanceDecoupling,
    LanguagePoseNet,
    ModelConfig,
    ProjectionHead,
    TwoBranchBackbone,
    channel_recalibration,
    compute_instance_mask,
    sample_instance_features,
    spatial_recalibration,
)
from .text import TextDecoderLayer

# scalar-valued closure plus the leaf tensors it is differentiated against
Check = Tuple[Callable[[], torch.Tensor], Sequence[torch.Tensor]]


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    entries_checked: int
    passed: bool


@dataclass
class GradCheckReport:
    results: List[GradCheckResult]
    tolerance: float
    step: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> List[GradCheckResult]:
        return [r for r in self.results if not r.passed]

    def to_text(self) -> str:
        width = max(len(r.name) for r in self.results)
        lines = [f"{r.name:<{width}}  {r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}  ({r.entries_checked} entries)"
                 for r in self.results]
        lines.append(f"{len(self.results) - len(self.failures())}/{len(self.results)} passed "
                     f"(tol {self.tolerance:g}, step {self.step:g}, {self.seconds:.1f}s)")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({"tolerance": self.tolerance, "step": self.step, "seconds": self.seconds,
                           "passed": self.passed, "results": [asdict(r) for r in self.results]}, indent=2)


def _entries(t: torch.Tensor, limit: Optional[int], rng: np.random.Generator) -> np.ndarray:
    n = t.numel()
    if limit is None or n <= limit:
        return np.arange(n)
    return np.sort(rng.choice(n, size=limit, replace=False))


def check_gradients(name: str, fn: Callable[[], torch.Tensor], tensors: Sequence[torch.Tensor],
                    step: float = 1e-5, tol: float = 1e-4, max_entries: Optional[int] = None,
                    seed: int = 0) -> GradCheckResult:
    """Compare autograd against central differences of ``fn()`` w.r.t. each tensor.

    The error of one tensor is ``|g_auto - g_fd| / max(|g_auto|, |g_fd|)`` over
    the checked entries (Euclidean norms); the result holds the worst tensor.
    """
    rng = np.random.default_rng(seed)
    tensors = list(tensors)
    grads = torch.autograd.grad(fn(), tensors, allow_unused=True)
    worst, count = 0.0, 0
    for t, g in zip(tensors, grads):
        g = torch.zeros_like(t) if g is None else g
        idx = _entries(t, max_entries, rng)
        flat = t.data.view(-1)
        fd = np.empty(len(idx))
        with torch.no_grad():
            for k, i in enumerate(idx):
                old = flat[i].item()
                flat[i] = old + step
                up = fn().item()
                flat[i] = old - step
                down = fn().item()
                flat[i] = old
                fd[k] = (up - down) / (2 * step)
        an = g.detach().reshape(-1)[torch.as_tensor(idx)].numpy()
        scale = max(np.linalg.norm(an), np.linalg.norm(fd))
        err = np.linalg.norm(an - fd) / scale if scale > 1e-12 else np.linalg.norm(an - fd)
        worst = max(worst, float(err)) if np.isfinite(err) else float("inf")
        count += len(idx)
    return GradCheckResult(name, worst, count, worst < tol)


def _module_check(module: torch.nn.Module, fn, *inputs) -> Check:
    return fn, list(inputs) + [p for p in module.parameters()]


def default_checks(seed: int = 0, size: int = 8, joints: int = 4, instances: int = 2,
                   embed_dim: int = 16, channels: int = 8):
    """Named checks on tiny float64 shapes: ``size`` x ``size`` feature maps,
    ``joints`` joints, ``instances`` instances, ``embed_dim`` embedding width."""
    torch.manual_seed(seed)
    g = torch.Generator().manual_seed(seed)
    dt = torch.float64

    def rand(*shape, scale=1.0):
        return (torch.randn(*shape, generator=g, dtype=dt) * scale).requires_grad_(True)

    def weights(*shape):
        return torch.randn(*shape, generator=g, dtype=dt)

    def proj(out, w):
        return (out * w).sum()

    h = w = size
    n, m, C, E = instances, joints, channels, embed_dim
    checks = []

    backbone = TwoBranchBackbone((4, 8), C).to(dt)
    img = rand(1, 3, 4 * h, 4 * w)
    wb = weights(1, C, h, w)
    checks.append(("backbone", _module_check(backbone, lambda: proj(backbone(img), wb), img)))

    F_map = rand(n, C, h, w)
    centers = (torch.rand(n, 2, generator=g, dtype=dt) * (size - 2) + 0.5).requires_grad_(True)
    wf = weights(n, C)
    checks.append(("sample_instance_features",
                   (lambda: proj(sample_instance_features(F_map, centers), wf), [F_map, centers])))

    f = rand(n, C)
    log_gamma = torch.tensor(np.log(5.0), dtype=dt, requires_grad=True)
    wm = weights(n, h, w)
    checks.append(("instance_mask",
                   (lambda: proj(compute_instance_mask(F_map, f, log_gamma.exp()), wm), [F_map, f, log_gamma])))

    M = torch.rand(n, h, w, generator=g, dtype=dt).requires_grad_(True)
    ws = weights(n, C, h, w)
    checks.append(("spatial_recalibration", (lambda: proj(spatial_recalibration(F_map, M), ws), [F_map, M])))
    checks.append(("channel_recalibration", (lambda: proj(channel_recalibration(F_map, f), ws), [F_map, f])))

    dec = InstanceDecoupling(C, C).to(dt)
    F_s, F_c = rand(n, C, h, w), rand(n, C, h, w)
    checks.append(("fuse_recalibrations",
                   _module_check(dec, lambda: proj(dec.fuse_recalibrations(F_s, F_c), ws), F_s, F_c)))

    F_one = rand(1, C, h, w)
    index = torch.zeros(n, dtype=torch.long)
    checks.append(("instance_decoupling",
                   _module_check(dec, lambda: proj(dec(F_one, centers, index)["F_sc"], ws), F_one, centers)))

    img_head = ProjectionHead(C, E, num_heads=2).to(dt)
    we = weights(1, E, h, w)
    checks.append(("image_projection", _module_check(img_head, lambda: proj(img_head(F_one), we), F_one)))
    ins_head = ProjectionHead(C, E, num_heads=2).to(dt)
    wi = weights(n, E, h, w)
    checks.append(("instance_projection", _module_check(ins_head, lambda: proj(ins_head(F_s), wi), F_s)))

    hm_head = HeatmapHead(C, m).to(dt)
    wh = weights(n, m, h, w)
    checks.append(("heatmap_head", _module_check(hm_head, lambda: proj(hm_head(F_s), wh), F_s)))

    decoder = TextDecoderLayer(E, num_heads=2).to(dt)
    P_ins, ctx = rand(n, E), rand(h * w, E)
    wd = weights(n, E)
    checks.append(("text_decoder", _module_check(decoder, lambda: proj(decoder(P_ins, ctx), wd), P_ins, ctx)))

    reduce = torch.nn.Conv2d(C, 1, 1).to(dt)
    wr = weights(n, h, w)
    checks.append(("instance_reduction", _module_check(reduce, lambda: proj(reduce(F_s)[:, 0], wr), F_s)))

    def unit(t):
        return (t / t.norm(dim=1, keepdim=True)).detach().requires_grad_(True)

    F_img = unit(torch.randn(E, h, w, generator=g, dtype=dt))
    J = rand(E)
    checks.append(("instance_similarity_map",
                   (lambda: proj(L.instance_similarity_map(F_img, J), wm[0]), [F_img, J])))
    F_ins = rand(E, h, w)
    jl = (torch.rand(m, 2, generator=g, dtype=dt) * (size - 2) + 0.5).requires_grad_(True)
    wk = weights(m, E)
    checks.append(("sample_keypoint_features",
                   (lambda: proj(L.sample_keypoint_features(F_ins, jl)[0], wk), [F_ins, jl])))
    F_kp, J_kp = rand(m, E), rand(m, E)
    wmm = weights(m, m)
    checks.append(("keypoint_similarity", (lambda: proj(L.keypoint_similarity(F_kp, J_kp), wmm), [F_kp, J_kp])))
    wp = weights(m, h, w)
    checks.append(("pixel_similarity", (lambda: proj(L.pixel_similarity(F_ins, J_kp), wp), [F_ins, J_kp])))

    checks.append(("contrastive_instance_loss", (lambda: L.contrastive_instance_loss(f, 0.5), [f])))
    p = (torch.rand(m, h, w, generator=g, dtype=dt) * 0.9 + 0.05).requires_grad_(True)
    hg = torch.rand(m, h, w, generator=g, dtype=dt) * 0.9
    hg[:, 2, 3] = 1.0
    checks.append(("focal_heatmap_loss", (lambda: L.focal_heatmap_loss(p, hg), [p])))
    S_ins, R = rand(n, h, w), rand(n, h, w)
    checks.append(("instance_prompt_loss", (lambda: L.instance_prompt_loss(S_ins, R), [S_ins, R])))
    S_kp = (torch.rand(m, m, generator=g, dtype=dt) * 2 - 1).requires_grad_(True)
    valid = torch.tensor([True] * (m - 1) + [False])
    checks.append(("keypoint_prompt_loss", (lambda: L.keypoint_prompt_loss(S_kp, 0.07, valid), [S_kp])))
    S_px = torch.rand(n, m, h, w, generator=g, dtype=dt).requires_grad_(True)
    hp = torch.rand(n, m, h, w, generator=g, dtype=dt)
    checks.append(("pixel_prompt_loss", (lambda: L.pixel_prompt_loss(S_px, hp), [S_px])))
    comps = [rand(()) for _ in L.COMPONENTS]
    lw = L.LossWeights(0.5, 1.0, 2.0, 0.25, 1.5)
    checks.append(("total_loss", (lambda: L.total_loss(dict(zip(L.COMPONENTS, comps)), lw), comps)))

    checks.append(("full_model", _full_model_check(g, size, m, n, E, C)))
    return checks


def _full_model_check(g: torch.Generator, size: int, m: int, n: int, E: int, C: int) -> Check:
    from .types import render_center_heatmap

    dt = torch.float64
    cfg = ModelConfig(backbone_channels=(4, 8), feature_dim=C, fused_dim=C, embed_dim=E, num_joints=m,
                      attention_heads=2)
    model = LanguagePoseNet(cfg).to(dt)
    centers = torch.tensor([[2.0, 3.0], [5.0, 4.0]], dtype=dt)[:n]
    joints = torch.rand(n, m, 2, generator=g, dtype=dt) * (size - 1)
    unit = lambda t: t / t.norm(dim=-1, keepdim=True)
    inputs = {
        "images": torch.rand(1, 3, 4 * size, 4 * size, generator=g, dtype=dt).requires_grad_(True),
        "centers": centers,
        "image_index": torch.zeros(n, dtype=torch.long),
        "instance_text": unit(torch.randn(n, E, generator=g, dtype=dt)),
        "joint_text": unit(torch.randn(m, E, generator=g, dtype=dt)),
        "joints": joints,
        "joint_valid": torch.ones(n, m, dtype=torch.bool),
    }
    heat = torch.rand(n, m, size, size, generator=g, dtype=dt) * 0.5
    heat[:, :, 1, 1] = 1.0
    tgt = {
        "image_index": inputs["image_index"],
        "heatmaps": heat,
        "center_heatmaps": torch.as_tensor(render_center_heatmap(centers.numpy(), (size, size), 2.0), dtype=dt),
        "joint_valid": inputs["joint_valid"],
        "batch_size": 1,
    }

    def fn():
        return L.total_loss(L.batch_losses(model(**inputs), tgt))

    return fn, [inputs["images"]] + list(model.parameters())


def run_gradcheck(seed: int = 0, step: float = 1e-5, tol: float = 1e-4, max_entries: Optional[int] = None,
                  model_max_entries: Optional[int] = 64, extra_checks=None,
                  only: Optional[Sequence[str]] = None) -> GradCheckReport:
    """Run every default check (plus ``extra_checks``) and collect a report.

    ``max_entries`` caps the coordinates probed per tensor (randomly chosen);
    the end-to-end ``full_model`` check uses ``model_max_entries`` instead.
    """
    start = time.perf_counter()
    checks = default_checks(seed) + list(extra_checks or [])
    results = []
    for name, (fn, tensors) in checks:
        if only is not None and name not in only:
            continue
        limit = model_max_entries if name == "full_model" else max_entries
        results.append(check_gradients(name, fn, tensors, step, tol, limit, seed))
    return GradCheckReport(results, tol, step, time.perf_counter() - start)
