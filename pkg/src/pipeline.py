"""
端到端生成流水线与评估

generate：阶段一用 TCA 通路推断人脸掩码，阶段二从同一初始噪声做双通路 DDIM。
evaluate / ablate / alpha_sweep 都是 generate 在不同配置变体下的批量调用。
"""

from __future__ import annotations
import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from scipy.stats import spearmanr
from torch import Tensor

from .checkpoint import load_checkpoint
from .config import RunConfig
from .diffusion import EpsFn, cfg_combine, make_schedule, run_ddim
from .errors import ParameterError
from .fusion import PathwaySpec, dual_path_forward, fuse_noise
from .logger import RunLogger, get_logger
from .masking import MaskResult, generate_mask
from .models import (
    AblationRow, Caption, EvalRow, FusionMode, GenerationReport, PathwaySelection,
    SweepRow,
)
from .network import ModelBundle, UNet, encode_face
from .png import save_heatmap_png, save_image_png, save_mask_png
from .toy.dataset import ToyDataset
from .toy.metrics import score_image
from .toy.world import Sample, render_sample

EVAL_COLUMNS = ["identity_id", "caption_tokens", "face_score", "text_match", "seed"]

ABLATION_SETTINGS: list[tuple[str, dict]] = [
    ("IEA", {"fusion.pathways": PathwaySelection.IEA_ONLY.value}),
    ("TCA", {"fusion.pathways": PathwaySelection.TCA_ONLY.value}),
    ("IEA+TCA", {
        "fusion.pathways": PathwaySelection.DUAL.value,
        "fusion.mode": FusionMode.INDEPENDENT.value,
    }),
    ("IEA+TCA+FFB", {
        "fusion.pathways": PathwaySelection.DUAL.value,
        "fusion.mode": FusionMode.BLENDED.value,
    }),
]

ProgressFn = Callable[[int, int], None]


@dataclass
class GenerationResult:
    image: Tensor          # (3, S, S)
    mask: Tensor           # (S, S)，第一阶段掩码
    report: GenerationReport
    mask_result: MaskResult
    eval_mask: Tensor      # (S, S)，打分用，取自生成图像


# ============ 模型与通路 ============

def load_bundle(path: Path, cfg: RunConfig) -> ModelBundle:
    bundle = ModelBundle.from_entries(load_checkpoint(path), cfg)
    bundle.unet.eval()
    return bundle


def resolve_pathways(bundle: ModelBundle, cfg: RunConfig) -> tuple[PathwaySpec, PathwaySpec]:
    """
    返回 (强注入通路, 弱注入通路)

    训练得到的双 adapter：(IEA, α_iea) 与 (TCA, α_tca)；
    training_free：同一个 adapter 的 α_strong 与 α_weak。

    Raises:
        ParameterError: 检查点参数组与模式不匹配
    """
    fc = cfg.fusion
    adapters = bundle.adapters()
    if fc.training_free:
        if len(adapters) != 1:
            raise ParameterError(
                f"training-free mode needs exactly one adapter in the checkpoint, found {len(adapters)}"
            )
        if fc.alpha_strong < fc.alpha_weak:
            raise ParameterError(
                f"alpha_strong ({fc.alpha_strong}) must be >= alpha_weak ({fc.alpha_weak})"
            )
        adapter = next(iter(adapters.values()))
        return (
            PathwaySpec(adapter, fc.alpha_strong, "strong"),
            PathwaySpec(adapter, fc.alpha_weak, "weak"),
        )
    if bundle.iea is None or bundle.tca is None:
        raise ParameterError(
            "checkpoint lacks the iea/tca adapter pair; use fusion.training_free for single-adapter checkpoints"
        )
    return (
        PathwaySpec(bundle.iea, cfg.adapter.iea_alpha, "iea"),
        PathwaySpec(bundle.tca, cfg.adapter.tca_alpha, "tca"),
    )


def reference_embedding(ref: Sample) -> Tensor:
    """参考样本 → (1, 48) 人脸嵌入"""
    return encode_face(ref.image, ref.face_bbox, ref.face_mask)[None]


# ============ 生成 ============

def _guided_eps(
    unet: UNet,
    paths: tuple[PathwaySpec, PathwaySpec],
    cfg: RunConfig,
    tokens: Tensor,
    face: Tensor,
    m: Tensor,
) -> EpsFn:
    path_a, path_b = paths
    selection = cfg.fusion.pathways
    scale = cfg.sampler.guidance_scale
    per_pathway = cfg.sampler.per_pathway_cfg
    null_tokens = torch.zeros_like(tokens)
    zero_face = torch.zeros_like(face)

    if selection == PathwaySelection.DUAL:
        def eps_fn(x: Tensor, t: int, i: int) -> Tensor:
            out = dual_path_forward(
                unet, x, t, tokens, face, path_a, path_b, m,
                cfg.fusion.mode, cfg.fusion.private_streams,
            )
            if per_pathway:
                un = dual_path_forward(
                    unet, x, t, null_tokens, zero_face, path_a, path_b, m,
                    cfg.fusion.mode, cfg.fusion.private_streams,
                )
                return fuse_noise(
                    cfg_combine(un.eps_iea, out.eps_iea, scale),
                    cfg_combine(un.eps_tca, out.eps_tca, scale),
                    m,
                )
            return cfg_combine(unet(x, t, null_tokens).eps, out.eps_fused, scale)
        return eps_fn

    path = path_a if selection == PathwaySelection.IEA_ONLY else path_b
    image_tokens = path.adapter.project(face)
    null_image_tokens = path.adapter.project(zero_face)

    def single_eps(x: Tensor, t: int, i: int) -> Tensor:
        cond = unet(x, t, tokens, path.adapter, image_tokens, path.alpha).eps
        if per_pathway:
            uncond = unet(x, t, null_tokens, path.adapter, null_image_tokens, path.alpha).eps
        else:
            uncond = unet(x, t, null_tokens).eps
        return cfg_combine(uncond, cond, scale)
    return single_eps


def dump_mask_stages(result: MaskResult, dump_dir: Path, tag: str):
    dump_dir = Path(dump_dir)
    save_heatmap_png(result.heatmap, dump_dir / f"{tag}_heatmap.png")
    save_mask_png(result.thresholded, dump_dir / f"{tag}_thresholded.png")
    save_mask_png(result.filtered, dump_dir / f"{tag}_filtered.png")
    save_mask_png(result.mask, dump_dir / f"{tag}_final.png")


@torch.no_grad()
def generate(
    prompt: Caption,
    ref: Sample,
    bundle: ModelBundle,
    cfg: RunConfig,
    seed: Optional[int] = None,
    dump_dir: Optional[Path] = None,
    logger: Optional[RunLogger] = None,
) -> GenerationResult:
    """
    两阶段生成

    Args:
        prompt: 文本描述
        ref: 参考人脸样本（图像、bbox、掩码、身份）
        bundle: 已加载的模型
        seed: 初始噪声种子，默认 cfg.seed
        dump_dir: 给定时写出掩码各阶段 PNG

    Returns:
        GenerationResult：图像、最终掩码、报告
        报告中的指标按生成图像中定位到的人脸区域打分
    """
    logger = logger or get_logger()
    seed = cfg.seed if seed is None else seed
    size = cfg.backbone.image_size
    if ref.size != size:
        raise ParameterError(f"reference is {ref.size}x{ref.size}, model expects {size}x{size}")

    schedule = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    paths = resolve_pathways(bundle, cfg)
    unet = bundle.unet

    gen = torch.Generator().manual_seed(seed)
    x_T = torch.randn((1, 3, size, size), generator=gen)
    tokens = torch.tensor([prompt.tokens()], dtype=torch.long)
    face = reference_embedding(ref)
    timings: dict[str, float] = {}

    start = time.perf_counter()
    mask_result = generate_mask(unet, paths[1], tokens, face, schedule, cfg, x_T, gen)
    timings["mask_ms"] = (time.perf_counter() - start) * 1000
    logger.mask_generated(
        mask_result.stats.coverage, mask_result.threshold, mask_result.fallback, timings["mask_ms"]
    )
    if mask_result.fallback:
        logger.warning("MASK_FALLBACK", seed=seed, caption=prompt.token_key())

    m = mask_result.mask[None, None]
    start = time.perf_counter()
    eps_fn = _guided_eps(unet, paths, cfg, tokens, face, m)
    image = run_ddim(x_T, eps_fn, schedule, cfg.sampler.steps, cfg.sampler.eta, gen)
    image = image.clamp(-1.0, 1.0)[0]
    timings["sample_ms"] = (time.perf_counter() - start) * 1000

    mask = mask_result.mask
    face, text, eval_mask = score_image(image, prompt, ref.identity)
    report = GenerationReport(
        seed=seed,
        caption=prompt.text(),
        identity_id=ref.identity.id,
        pathways=cfg.fusion.pathways,
        mode=cfg.fusion.mode,
        training_free=cfg.fusion.training_free,
        face_score=face,
        text_match=text,
        mask=mask_result.stats,
        timings=timings,
    )
    logger.generation_done(
        seed, cfg.fusion.pathways.value, cfg.fusion.mode.value, report.model_dump(mode="json")
    )

    if dump_dir is not None:
        tag = f"id{ref.identity.id}_{prompt.token_key()}_s{seed}"
        dump_mask_stages(mask_result, dump_dir, tag)
        save_image_png(mask_result.image[0], Path(dump_dir) / f"{tag}_phase1.png")

    return GenerationResult(
        image=image, mask=mask, report=report, mask_result=mask_result, eval_mask=eval_mask
    )


def save_generation(result: GenerationResult, out_dir: Path, stem: str = "generated") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    image_path = out_dir / f"{stem}.png"
    mask_path = out_dir / f"{stem}_mask.png"
    save_image_png(result.image, image_path)
    save_mask_png(result.mask, mask_path)
    return image_path, mask_path


# ============ 评估 ============

def evaluation_prompts(dataset: ToyDataset, cfg: RunConfig) -> list[tuple[Sample, Caption]]:
    """每个身份取首个样本作参考，并确定性地抽取 captions_per_identity 个描述"""
    identities = dataset.identities()
    if cfg.eval.max_identities is not None:
        identities = identities[: cfg.eval.max_identities]
    captions = Caption.all()
    k = min(cfg.eval.captions_per_identity, len(captions))
    rng = np.random.default_rng(cfg.seed)

    prompts = []
    for identity in identities:
        ref = dataset.reference_for(identity.id)
        for index in sorted(rng.choice(len(captions), size=k, replace=False)):
            prompts.append((ref, captions[int(index)]))
    return prompts


def evaluate(
    dataset: ToyDataset,
    bundle: Optional[ModelBundle],
    cfg: RunConfig,
    ground_truth: bool = False,
    logger: Optional[RunLogger] = None,
    progress: Optional[ProgressFn] = None,
    table: str = "eval",
) -> list[EvalRow]:
    """
    每个 (身份, 描述) 生成 images_per_prompt 张图并打分

    ground_truth 时直接对渲染样本打分（指标上限），不需要模型。
    """
    logger = logger or get_logger()
    if not ground_truth and bundle is None:
        raise ParameterError("evaluate needs a checkpoint unless ground_truth is set")

    prompts = evaluation_prompts(dataset, cfg)
    total = len(prompts) * cfg.eval.images_per_prompt
    rows: list[EvalRow] = []
    for ref, caption in prompts:
        for k in range(cfg.eval.images_per_prompt):
            seed = cfg.seed + k
            if ground_truth:
                rendered = render_sample(ref.identity, caption, seed, ref.size)
                face, text, _ = score_image(rendered.image, caption, ref.identity)
            else:
                result = generate(caption, ref, bundle, cfg, seed=seed, logger=logger)
                face, text = result.report.face_score, result.report.text_match

            row = EvalRow(
                identity_id=ref.identity.id,
                caption_tokens=caption.token_key(),
                face_score=face,
                text_match=text,
                seed=seed,
            )
            rows.append(row)
            logger.eval_row(table, row.model_dump())
            if progress:
                progress(len(rows), total)
    return rows


def summarize(rows: list[EvalRow]) -> tuple[float, float]:
    """(平均 face_score, 平均 text_match)；空表返回 (nan, nan)"""
    if not rows:
        return math.nan, math.nan
    return (
        float(np.mean([r.face_score for r in rows])),
        float(np.mean([r.text_match for r in rows])),
    )


def write_eval_csv(rows: list[EvalRow], path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=EVAL_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump())


def ablate(
    dataset: ToyDataset,
    bundle: ModelBundle,
    cfg: RunConfig,
    logger: Optional[RunLogger] = None,
    progress: Optional[ProgressFn] = None,
) -> list[AblationRow]:
    """IEA / TCA / IEA+TCA（噪声空间融合）/ IEA+TCA+FFB 四行"""
    out = []
    for setting, updates in ABLATION_SETTINGS:
        rows = evaluate(
            dataset, bundle, cfg.with_updates(updates),
            logger=logger, progress=progress, table=f"ablate:{setting}",
        )
        face, text = summarize(rows)
        out.append(AblationRow(setting=setting, face_score=face, text_match=text, n=len(rows)))
    return out


def rank_correlation(x: list[float], y: list[float]) -> float:
    """
    Spearman 秩相关

    少于两点、含 nan 或 x 全相同时为 nan；y 全相同（指标不随 α 变化）时为 0。
    """
    if len(x) != len(y):
        raise ParameterError(f"series lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 2 or np.isnan(x).any() or np.isnan(y).any() or np.ptp(x) == 0:
        return math.nan
    if np.ptp(y) == 0:
        return 0.0
    rho = float(spearmanr(x, y)[0])
    return 0.0 if math.isnan(rho) else rho


def alpha_sweep(
    dataset: ToyDataset,
    bundle: ModelBundle,
    cfg: RunConfig,
    logger: Optional[RunLogger] = None,
    progress: Optional[ProgressFn] = None,
) -> tuple[list[SweepRow], dict[str, float]]:
    """
    单 IEA 通路在各 α 下生成

    Returns:
        (每个 α 的平均指标, {"text_match": ρ, "face_score": ρ}) ，ρ 为 α 与指标的 Spearman 相关
    """
    alpha_key = "fusion.alpha_strong" if cfg.fusion.training_free else "adapter.iea_alpha"
    rows = []
    for alpha in cfg.eval.alpha_sweep:
        variant = cfg.with_updates({
            "fusion.pathways": PathwaySelection.IEA_ONLY.value,
            alpha_key: alpha,
        })
        if cfg.fusion.training_free:
            variant = variant.with_updates({"fusion.alpha_weak": min(alpha, variant.fusion.alpha_weak)})
        evaluated = evaluate(
            dataset, bundle, variant, logger=logger, progress=progress, table=f"alpha:{alpha:g}",
        )
        face, text = summarize(evaluated)
        rows.append(SweepRow(alpha=alpha, face_score=face, text_match=text, n=len(evaluated)))

    alphas = [r.alpha for r in rows]
    correlations = {
        "text_match": rank_correlation(alphas, [r.text_match for r in rows]),
        "face_score": rank_correlation(alphas, [r.face_score for r in rows]),
    }
    return rows, correlations
