"""Two-stage training: matching first, then the uncertainty head on a frozen
matcher.

Everything here is deterministic for a fixed config: model init, the data
stream, and the optimizer trajectory.  Checkpoints round-trip the full
optimizer state, so save -> load -> step is bit-identical to stepping
through.  Stage two never touches matching parameters — that is asserted at
the byte level, not assumed.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from itertools import islice
from pathlib import Path

import numpy as np
import torch

from ..netcore import (
    MatchModel,
    NetConfig,
    build_model,
    config_fingerprint,
    config_from_dict,
    load_checkpoint,
    loss_matching,
    parameter_bytes,
    save_checkpoint,
)
from ..uncertainty import UncertaintyHead, build_head, loss_uncertainty, predict, residuals
from .config import TrainConfig
from .sampler import load_batch, mix_sampler

log = logging.getLogger(__name__)

COSINE_FLOOR = 0.05  # schedule decays to 5% of the peak step size


class NumericalFailure(RuntimeError):
    """Training produced a non-finite loss; the offending batch was dumped."""


@dataclass
class TrainResult:
    model: MatchModel
    head: UncertaintyHead | None
    losses: list                 # (step, loss) pairs
    checkpoint_path: Path
    matching_hash_before: str = ""
    matching_hash_after: str = ""
    matching_grad_norm: float = 0.0


def cosine_lr(step: int, peak: float, horizon: int) -> float:
    """Cosine decay from `peak` at step 0 to COSINE_FLOOR * peak at `horizon`."""
    t = min(max(step, 0), horizon) / max(horizon, 1)
    return peak * (COSINE_FLOOR + (1.0 - COSINE_FLOOR) * 0.5 * (1.0 + math.cos(math.pi * t)))


def matching_hash(model: torch.nn.Module) -> str:
    return hashlib.sha256(parameter_bytes(model)).hexdigest()


# --- optimizer state <-> checkpoint entries ---------------------------------

def _pack_optimizer(opt: torch.optim.Optimizer, names) -> dict:
    out = {}
    params = [p for g in opt.param_groups for p in g["params"]]
    assert len(params) == len(names)
    for name, p in zip(names, params):
        state = opt.state.get(p)
        if not state:
            continue
        out[f"optim/{name}/step"] = torch.as_tensor(state["step"], dtype=torch.float32)
        out[f"optim/{name}/exp_avg"] = state["exp_avg"]
        out[f"optim/{name}/exp_avg_sq"] = state["exp_avg_sq"]
    return out


def _unpack_optimizer(opt: torch.optim.Optimizer, names, tensors: dict) -> None:
    params = [p for g in opt.param_groups for p in g["params"]]
    for name, p in zip(names, params):
        key = f"optim/{name}/step"
        if key not in tensors:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(tensors[key]), dtype=torch.float32),
            "exp_avg": torch.from_numpy(tensors[f"optim/{name}/exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(tensors[f"optim/{name}/exp_avg_sq"].copy()),
        }


def save_train_checkpoint(path, model: MatchModel, opt, step: int, config: TrainConfig,
                          net_config: NetConfig, head: UncertaintyHead | None = None,
                          head_opt=None) -> Path:
    path = Path(path)
    tensors = {k: v for k, v in model.state_dict().items()}
    names = [n for n, _ in model.named_parameters()]
    if opt is not None:
        tensors.update(_pack_optimizer(opt, names))
    if head is not None:
        tensors.update({f"head/{k}": v for k, v in head.state_dict().items()})
        if head_opt is not None:
            head_names = [f"head/{n}" for n, _ in head.named_parameters()]
            tensors.update(_pack_optimizer(head_opt, head_names))
    manifest = {
        "step": step,
        "stage": config.stage,
        "seed": config.seed,
        "net_config": net_config.to_dict(),
        "fingerprint": config_fingerprint(net_config),
        "head_channels": head.in_channels if head is not None else 0,
    }
    save_checkpoint(path, tensors, manifest)
    return path


def restore_model(tensors: dict, manifest: dict) -> MatchModel:
    net_config = config_from_dict(manifest["net_config"])
    model = MatchModel(net_config)
    state = {
        k: torch.from_numpy(v.copy())
        for k, v in tensors.items()
        if not k.startswith(("optim/", "head/"))
    }
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise ValueError(f"checkpoint is missing matching parameters: {sorted(missing)[:4]}...")
    model.load_state_dict(state)
    return model


def restore_head(tensors: dict, manifest: dict) -> UncertaintyHead | None:
    channels = int(manifest.get("head_channels", 0))
    if channels == 0:
        return None
    head = UncertaintyHead(channels)
    state = {
        k[len("head/"):]: torch.from_numpy(v.copy())
        for k, v in tensors.items()
        if k.startswith("head/") and not k.startswith("head/optim/")
    }
    head.load_state_dict(state)
    return head


# --- the training loops ------------------------------------------------------

def _open_loss_csv(out_dir: Path, resume: bool):
    path = out_dir / "loss_curve.csv"
    exists = path.exists()
    f = open(path, "a" if resume and exists else "w", newline="")
    writer = csv.writer(f)
    if f.tell() == 0:
        writer.writerow(["step", "loss", "stage"])
    return f, writer


def _dump_diagnostic(out_dir: Path, step: int, batch: dict, loss_value: float) -> Path:
    path = out_dir / f"diagnostic_step{step:06d}.npz"
    np.savez(
        path,
        ref=batch["ref"].numpy(),
        tgt=batch["tgt"].numpy(),
        flow=batch["flow"].numpy(),
        valid=batch["valid"].numpy(),
        modes=np.array(batch["modes"]),
        loss=np.array(loss_value),
        step=np.array(step),
    )
    return path


def _batch_matching_loss(prediction, batch, gamma: float) -> torch.Tensor:
    """Dense and sparse samples can share one batch, so the supervision
    branch is chosen per sample and the loss averaged over the batch."""
    flows = prediction.flows
    total = None
    for i, mode in enumerate(batch["modes"]):
        per = [f[i:i + 1] for f in flows]
        term = loss_matching(per, batch["flow"][i:i + 1], batch["valid"][i:i + 1], mode,
                             gamma=gamma)
        total = term if total is None else total + term
    return total / len(batch["modes"])


def train_stage1(config: TrainConfig, net_config: NetConfig, manifests, out_dir,
                 resume=None) -> TrainResult:
    """Learn matching from mixed dense/sparse datasets; stage one of two."""
    if config.stage != "matching":
        raise ValueError(f"train_stage1 requires stage='matching', got {config.stage!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    start_step = 0
    if resume is not None:
        tensors, manifest = load_checkpoint(resume)
        if manifest["fingerprint"] != config_fingerprint(net_config):
            raise ValueError("resume checkpoint was built for a different network config")
        model = restore_model(tensors, manifest)
        start_step = int(manifest["step"])
    else:
        model = build_model(net_config, config.seed)
    model.train()

    opt = torch.optim.AdamW(model.parameters(), lr=config.lr,
                            weight_decay=config.weight_decay, eps=1e-8)
    names = [n for n, _ in model.named_parameters()]
    if resume is not None:
        _unpack_optimizer(opt, names, tensors)

    horizon = config.decay_steps or config.total_steps
    sampler = mix_sampler(manifests, config.mixture, config.seed)
    # resuming must continue the same draw sequence where it left off
    if start_step:
        next(islice(sampler, start_step * config.batch_size - 1, None))

    csv_file, writer = _open_loss_csv(out_dir, resume is not None)
    losses = []
    checkpoint_path = out_dir / "final.rmck"
    try:
        for step in range(start_step, config.total_steps):
            batch = load_batch(manifests, list(islice(sampler, config.batch_size)),
                               resolution=config.resolution)
            for group in opt.param_groups:
                group["lr"] = cosine_lr(step, config.lr, horizon)
            prediction = model(batch["ref"], batch["tgt"])
            loss = _batch_matching_loss(prediction, batch, net_config.gamma)
            value = float(loss.detach())
            if not math.isfinite(value):
                dump = _dump_diagnostic(out_dir, step, batch, value)
                raise NumericalFailure(
                    f"non-finite matching loss {value} at step {step}; batch saved to {dump}"
                )
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            losses.append((step, value))
            writer.writerow([step, f"{value:.8f}", config.stage])
            csv_file.flush()
            if (step + 1) % config.checkpoint_every == 0 and step + 1 < config.total_steps:
                save_train_checkpoint(out_dir / f"step_{step + 1:06d}.rmck", model, opt,
                                      step + 1, config, net_config)
        save_train_checkpoint(checkpoint_path, model, opt, config.total_steps,
                              config, net_config)
    finally:
        csv_file.close()
    return TrainResult(model=model, head=None, losses=losses, checkpoint_path=checkpoint_path)


def train_stage2(config: TrainConfig, checkpoint, manifests, out_dir) -> TrainResult:
    """Train the uncertainty head against validity masks; matching stays frozen."""
    if config.stage != "uncertainty":
        raise ValueError(f"train_stage2 requires stage='uncertainty', got {config.stage!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tensors, manifest = load_checkpoint(checkpoint)
    model = restore_model(tensors, manifest)  # raises if matching weights are absent
    net_config = config_from_dict(manifest["net_config"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)

    hash_before = matching_hash(model)
    head_channels = 3 + net_config.widths[2] + 1  # RGB + half-scale features + flag
    head = build_head(head_channels, config.seed)
    head.train()
    head_opt = torch.optim.AdamW(head.parameters(), lr=config.lr,
                                 weight_decay=config.weight_decay, eps=1e-8)
    head_names = [f"head/{n}" for n, _ in head.named_parameters()]

    horizon = config.decay_steps or config.total_steps
    sampler = mix_sampler(manifests, config.mixture, config.seed)
    csv_file, writer = _open_loss_csv(out_dir, resume=False)
    losses = []
    matching_grad_norm = 0.0
    checkpoint_path = out_dir / "final.rmck"

    # The matcher is frozen and eval-mode deterministic, so each sample's
    # residual stack is a constant of the run; recomputing it every epoch
    # would swamp head training on small datasets.  Cached per sample with a
    # byte budget so large datasets degrade to the uncached cost, never OOM.
    stack_cache: OrderedDict[tuple, tuple] = OrderedDict()
    cache_bytes = 0
    cache_budget = 256 * 1024 * 1024

    def sample_stack(d: int, s: int, supervision: str) -> tuple:
        nonlocal cache_bytes
        key = (d, s)
        hit = stack_cache.get(key)
        if hit is not None:
            stack_cache.move_to_end(key)
            return hit
        one = load_batch(manifests, [(d, s, supervision)], resolution=config.resolution)
        with torch.no_grad():
            prediction = model(one["ref"], one["tgt"])
            feats_r = model.half_scale_features(one["ref"])
            feats_t = model.half_scale_features(one["tgt"])
            stack = residuals(one["ref"], one["tgt"], feats_r, feats_t,
                              prediction.final)
        cost = stack.numel() * stack.element_size() + one["valid"].numel()
        while stack_cache and cache_bytes + cost > cache_budget:
            _, (old_stack, old_valid) = stack_cache.popitem(last=False)
            cache_bytes -= old_stack.numel() * old_stack.element_size() + old_valid.numel()
        stack_cache[key] = (stack, one["valid"])
        cache_bytes += cost
        return stack_cache[key]

    try:
        for step in range(config.total_steps):
            draws = list(islice(sampler, config.batch_size))
            parts = [sample_stack(*draw) for draw in draws]
            stack = torch.cat([p[0] for p in parts])
            valid = torch.cat([p[1] for p in parts])
            for group in head_opt.param_groups:
                group["lr"] = cosine_lr(step, config.lr, horizon)
            p_hat = predict(stack, head)
            loss = loss_uncertainty(p_hat, valid)
            value = float(loss.detach())
            if not math.isfinite(value):
                dump = _dump_diagnostic(
                    out_dir, step,
                    load_batch(manifests, draws, resolution=config.resolution), value)
                raise NumericalFailure(
                    f"non-finite uncertainty loss {value} at step {step}; batch saved to {dump}"
                )
            head_opt.zero_grad()
            loss.backward()
            matching_grad_norm += sum(
                float(p.grad.norm()) for p in model.parameters() if p.grad is not None
            )
            torch.nn.utils.clip_grad_norm_(head.parameters(), config.grad_clip)
            head_opt.step()
            losses.append((step, value))
            writer.writerow([step, f"{value:.8f}", config.stage])
            csv_file.flush()
            if (step + 1) % config.checkpoint_every == 0 and step + 1 < config.total_steps:
                save_train_checkpoint(out_dir / f"step_{step + 1:06d}.rmck", model, None,
                                      step + 1, config, net_config, head, head_opt)
        save_train_checkpoint(checkpoint_path, model, None, config.total_steps,
                              config, net_config, head, head_opt)
    finally:
        csv_file.close()

    hash_after = matching_hash(model)
    if hash_after != hash_before:
        raise RuntimeError("matching parameters changed during stage two")
    if matching_grad_norm != 0.0:
        raise RuntimeError(
            f"gradient leaked into frozen matching parameters (norm {matching_grad_norm})"
        )
    return TrainResult(model=model, head=head, losses=losses,
                       checkpoint_path=checkpoint_path,
                       matching_hash_before=hash_before,
                       matching_hash_after=hash_after,
                       matching_grad_norm=matching_grad_norm)
