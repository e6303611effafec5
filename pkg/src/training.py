"""
两阶段训练

1. train_base：文本条件扩散主干，条件 dropout 以支持 CFG
2. train_adapters：冻结主干，IEA / TCA adapter 在区域掩码损失下联合训练
另含有限差分梯度检查 grad_check。
"""

from __future__ import annotations
import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .config import RunConfig
from .diffusion import add_noise, make_schedule
from .errors import ParameterError, StateError, TrainingDivergedError
from .fusion import (
    PathwaySpec, dual_path_forward, loss_fusion, loss_iea, loss_tca, total_loss,
)
from .logger import RunLogger, get_logger
from .models import AdapterRole, GradCheckEntry, GradCheckReport, NULL_TOKEN
from .network import (
    ImageAdapter, ModelBundle, build_adapter, build_unet, encode_face, encode_faces,
    flip_embedding,
)
from .toy.dataset import ToyDataset
from .toy.world import Sample

BASE_LOSS_COLUMNS = ["step", "loss"]
ADAPTER_LOSS_COLUMNS = ["step", "l_iea", "l_tca", "l_fusion", "total"]

# (当前步, 总步数, 本步损失)
ProgressFn = Callable[[int, int, dict[str, float]], None]


@dataclass
class TrainResult:
    bundle: ModelBundle
    stage: str
    history: list[dict[str, float]] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return BASE_LOSS_COLUMNS if self.stage == "base" else ADAPTER_LOSS_COLUMNS


# ============ 工具函数 ============

def _grad_norm(params: list[torch.nn.Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().double().pow(2).sum())
    return math.sqrt(total)


def _ensure_finite(
    loss: Tensor, stage: str, step: int, lr: float,
    grad_norm: Optional[float], logger: RunLogger,
):
    if torch.isfinite(loss).all():
        return
    logger.train_diverged(stage, step, lr, grad_norm)
    raise TrainingDivergedError(
        f"{stage} training diverged at step {step} (loss={float(loss)})",
        step=step, lr=lr, grad_norm=grad_norm,
    )


def _face_embeddings(data: dict[str, Tensor], dataset: ToyDataset) -> Tensor:
    bboxes = [s.face_bbox for s in dataset]
    return encode_faces(data["images"], bboxes, data["masks"][:, 0])


def write_loss_csv(result: TrainResult, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=result.columns)
        writer.writeheader()
        for row in result.history:
            writer.writerow({k: row[k] for k in result.columns})


def parameter_partition(bundle: ModelBundle) -> tuple[list[str], list[str]]:
    """(可训练参数名, 冻结参数名)，名称与检查点条目一致"""
    trainable, frozen = [], []
    modules = {"base": bundle.unet, **bundle.adapters()}
    for group, module in modules.items():
        for name, p in module.named_parameters():
            (trainable if p.requires_grad else frozen).append(f"{group}.{name}")
    return trainable, frozen


# ============ 阶段一：主干 ============

def train_base(
    dataset: ToyDataset,
    cfg: RunConfig,
    logger: Optional[RunLogger] = None,
    progress: Optional[ProgressFn] = None,
) -> TrainResult:
    """
    训练文本条件主干：MSE(noise, ε_θ(x_t, t, C))

    Raises:
        StateError: 数据集为空
        TrainingDivergedError: 损失出现 NaN / Inf
    """
    logger = logger or get_logger()
    if len(dataset) == 0:
        raise StateError("cannot train on an empty dataset")

    tc = cfg.training
    schedule = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    unet = build_unet(cfg)
    params = list(unet.parameters())
    optimizer = torch.optim.Adam(params, lr=tc.lr)
    gen = torch.Generator().manual_seed(cfg.seed)

    data = dataset.stack()
    n = len(dataset)
    history: list[dict[str, float]] = []
    grad_norm: Optional[float] = None

    for step in range(1, tc.base_steps + 1):
        idx = torch.randint(n, (tc.batch_size,), generator=gen)
        x0 = data["images"][idx]
        tokens = data["tokens"][idx].clone()
        dropped = torch.rand(tc.batch_size, generator=gen) < tc.cond_dropout
        tokens[dropped] = NULL_TOKEN

        t = torch.randint(0, schedule.T, (tc.batch_size,), generator=gen)
        noise = torch.randn(x0.shape, generator=gen)
        x_t = add_noise(x0, noise, t, schedule)

        loss = F.mse_loss(unet(x_t, t, tokens).eps, noise)
        _ensure_finite(loss, "base", step, tc.lr, grad_norm, logger)

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        grad_norm = _grad_norm(params)
        optimizer.step()

        row = {"step": step, "loss": float(loss)}
        history.append(row)
        if step % tc.log_every == 0 or step == tc.base_steps:
            logger.train_step("base", step, {"loss": row["loss"]}, tc.lr)
        if progress:
            progress(step, tc.base_steps, row)

    return TrainResult(bundle=ModelBundle(unet=unet), stage="base", history=history)


# ============ 阶段二：adapters ============

def _accumulate(loss: Tensor, params: list[torch.nn.Parameter]):
    grads = torch.autograd.grad(loss, params, retain_graph=True, allow_unused=True)
    for p, g in zip(params, grads):
        if g is None:
            continue
        p.grad = g.clone() if p.grad is None else p.grad + g


def train_adapters(
    dataset: ToyDataset,
    base: ModelBundle,
    cfg: RunConfig,
    logger: Optional[RunLogger] = None,
    progress: Optional[ProgressFn] = None,
) -> TrainResult:
    """
    冻结主干，训练 IEA + TCA（或 single_adapter 模式下的单个 adapter）

    每步：采样 (x0, m, 人脸)，抽取 t 与噪声，双通路前向，
    L_IEA + L_TCA + L_fusion 只更新 adapter 参数。
    strict_routing 时 L_IEA 只回传到 IEA、L_TCA 只回传到 TCA。
    """
    logger = logger or get_logger()
    if len(dataset) == 0:
        raise StateError("cannot train on an empty dataset")

    tc = cfg.training
    schedule = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    unet = base.unet
    unet.requires_grad_(False)

    iea = build_adapter(cfg, AdapterRole.IEA, unet)
    tca = None if tc.single_adapter else build_adapter(cfg, AdapterRole.TCA, unet)
    iea_params = list(iea.parameters())
    tca_params = list(tca.parameters()) if tca is not None else []
    all_params = iea_params + tca_params
    optimizer = torch.optim.Adam(all_params, lr=tc.lr)
    gen = torch.Generator().manual_seed(cfg.seed + 1)

    data = dataset.stack()
    faces = _face_embeddings(data, dataset)
    n = len(dataset)
    weights = (tc.w_iea, tc.w_tca, tc.w_fusion)
    history: list[dict[str, float]] = []
    grad_norm: Optional[float] = None

    for step in range(1, tc.adapter_steps + 1):
        idx = torch.randint(n, (tc.batch_size,), generator=gen)
        x0 = data["images"][idx]
        m = data["masks"][idx]
        tokens = data["tokens"][idx].clone()
        face = faces[idx].clone()

        flipped = torch.rand(tc.batch_size, generator=gen) < cfg.adapter.flip_prob
        face[flipped] = flip_embedding(face[flipped])
        face[torch.rand(tc.batch_size, generator=gen) < tc.image_drop_prob] = 0.0
        tokens[torch.rand(tc.batch_size, generator=gen) < tc.text_drop_prob] = NULL_TOKEN

        t = torch.randint(0, schedule.T, (tc.batch_size,), generator=gen)
        noise = torch.randn(x0.shape, generator=gen)
        x_t = add_noise(x0, noise, t, schedule)

        optimizer.zero_grad(set_to_none=True)
        if tca is None:
            eps = unet(x_t, t, tokens, iea, iea.project(face), 1.0).eps
            total = F.mse_loss(eps, noise)
            _ensure_finite(total, "adapters", step, tc.lr, grad_norm, logger)
            total.backward()
            row = {"step": step, "l_iea": float(total), "l_tca": 0.0, "l_fusion": 0.0, "total": float(total)}
        else:
            out = dual_path_forward(
                unet, x_t, t, tokens, face,
                PathwaySpec(iea, cfg.adapter.iea_alpha, "iea"),
                PathwaySpec(tca, cfg.adapter.tca_alpha, "tca"),
                m, cfg.fusion.mode, cfg.fusion.private_streams,
            )
            l_iea = loss_iea(noise, out.eps_iea, m)
            l_tca = loss_tca(noise, out.eps_tca, m)
            l_fus = loss_fusion(noise, out.eps_fused)
            fusion_term = l_fus.detach() if tc.fusion_stop_gradient else l_fus
            total = total_loss(l_iea, l_tca, fusion_term, weights)
            _ensure_finite(total, "adapters", step, tc.lr, grad_norm, logger)

            if tc.strict_routing:
                _accumulate(tc.w_iea * l_iea, iea_params)
                _accumulate(tc.w_tca * l_tca, tca_params)
                if not tc.fusion_stop_gradient:
                    _accumulate(tc.w_fusion * l_fus, all_params)
            else:
                total.backward()
            row = {
                "step": step, "l_iea": float(l_iea), "l_tca": float(l_tca),
                "l_fusion": float(l_fus), "total": float(total),
            }

        grad_norm = _grad_norm(all_params)
        optimizer.step()

        history.append(row)
        if step % tc.log_every == 0 or step == tc.adapter_steps:
            logger.train_step("adapters", step, {k: v for k, v in row.items() if k != "step"}, tc.lr)
        if progress:
            progress(step, tc.adapter_steps, row)

    bundle = ModelBundle(unet=unet, iea=iea, tca=tca)
    return TrainResult(bundle=bundle, stage="adapters", history=history)


# ============ 梯度检查 ============

def _double(module: Optional[ImageAdapter]) -> Optional[ImageAdapter]:
    return None if module is None else copy.deepcopy(module).double()


def grad_check(
    bundle: ModelBundle,
    sample: Sample,
    cfg: RunConfig,
    epsilon: float = 1e-4,
    n_params: int = 24,
    zero_loss: bool = False,
) -> GradCheckReport:
    """
    总损失对 adapter 参数的解析梯度 vs 中心差分（float64）

    Args:
        bundle: 含 IEA 与 TCA 的模型
        sample: 单个训练样本
        epsilon: 差分步长
        n_params: 随机抽取的标量参数个数（≥ 20）
        zero_loss: 把目标噪声设为当前融合预测，使总损失为零
    """
    if n_params < 20:
        raise ParameterError(f"n_params must be >= 20, got {n_params}")
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    if bundle.iea is None or bundle.tca is None:
        raise ParameterError("grad_check needs both iea and tca adapters")

    unet = copy.deepcopy(bundle.unet).double().requires_grad_(False)
    iea, tca = _double(bundle.iea), _double(bundle.tca)
    iea.requires_grad_(True)
    tca.requires_grad_(True)
    schedule = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    gen = torch.Generator().manual_seed(cfg.seed)

    x0 = sample.image[None].double()
    m = sample.face_mask[None, None].double()
    tokens = torch.tensor([sample.caption.tokens()], dtype=torch.long)
    face = encode_face(sample.image, sample.face_bbox, sample.face_mask)[None].double()
    t = schedule.T // 2
    noise = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
    x_t = add_noise(x0, noise, t, schedule)
    path_a = PathwaySpec(iea, cfg.adapter.iea_alpha, "iea")
    path_b = PathwaySpec(tca, cfg.adapter.tca_alpha, "tca")
    weights = (cfg.training.w_iea, cfg.training.w_tca, cfg.training.w_fusion)

    def evaluate(target: Tensor):
        out = dual_path_forward(
            unet, x_t, t, tokens, face, path_a, path_b, m,
            cfg.fusion.mode, cfg.fusion.private_streams,
        )
        loss = total_loss(
            loss_iea(target, out.eps_iea, m),
            loss_tca(target, out.eps_tca, m),
            loss_fusion(target, out.eps_fused),
            weights,
        )
        return out, loss

    target = noise
    if zero_loss:
        with torch.no_grad():
            out, _ = evaluate(noise)
        target = out.eps_fused.detach()

    named = [
        (f"{group}.{name}", p)
        for group, adapter in (("iea", iea), ("tca", tca))
        for name, p in adapter.named_parameters()
    ]
    params = [p for _, p in named]
    _, loss = evaluate(target)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(cfg.seed)
    picks = np.sort(rng.choice(int(offsets[-1]), size=min(n_params, int(offsets[-1])), replace=False))

    entries = []
    with torch.no_grad():
        for flat_index in picks:
            k = int(np.searchsorted(offsets, flat_index, side="right") - 1)
            j = int(flat_index - offsets[k])
            flat = params[k].data.view(-1)
            original = float(flat[j])

            flat[j] = original + epsilon
            _, loss_plus = evaluate(target)
            flat[j] = original - epsilon
            _, loss_minus = evaluate(target)
            flat[j] = original

            numeric = (float(loss_plus) - float(loss_minus)) / (2 * epsilon)
            analytic = float(grads[k].view(-1)[j])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            entries.append(GradCheckEntry(
                name=named[k][0], index=j, analytic=analytic, numeric=numeric, rel_error=rel,
            ))

    return GradCheckReport(
        epsilon=epsilon,
        entries=entries,
        max_rel_error=max(e.rel_error for e in entries),
        max_abs_grad=max(float(g.abs().max()) for g in grads),
        checked_groups=["iea", "tca"],
        frozen_groups=["base", "face_encoder"],
    )
