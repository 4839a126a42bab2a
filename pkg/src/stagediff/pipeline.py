"""End-to-end edit orchestration.

A run is a fixed phase machine: ingest, deterministic inversion of the
source under the source prompt, deterministic pilot pass, stage discernment
and weight initialization, the guided edit pass, optional derivative-free
weight tuning (re-running the edit pass), then metrics and persistence.
Every phase failure is reported with its phase name, and whatever trace
exists by then is still written.  One guided predictor (backend + guidance
scale) serves all phases, so the pilot is an exact reconstruction pass.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .blobs import condition_table, class_mean_images, make_dataset, prompt_for, single_sample, split_label
from .denoiser import (
    GaussianMixtureWorld,
    IdentityDecoder,
    LatentCode,
    ToyDenoiser,
    UpsampleDecoder,
    AnalyticBackend,
    decode,
)
from .objective import (
    AlignedJointEncoder,
    LossReport,
    ToyJointEncoder,
    ToyPerceptualNet,
    directional_loss,
    optimize_lambda,
    perceptual_loss,
    total_loss,
)
from .pgmio import read_pgm, write_pgm
from .promptmix import (
    MixSchedule,
    PromptEmbedding,
    cond_provider,
    covdiff,
    embed_text,
    load_embeddings,
    mix,
    pad_align,
)
from .sampler import GuidedBackend, Trajectory, invert, sample
from .schedule import Schedule, build_schedule
from .stagefinder import LambdaInit, StagePlan, discern_from_traces, discern_stages, init_lambda

_PROFILES = ("linear-beta", "cosine")
_BACKENDS = ("analytic", "toy")
_ENCODERS = ("aligned", "random")
_DECODERS = ("identity", "upsample2")
_GRAD_METRICS = ("temporal", "spatial")


class PipelineError(RuntimeError):
    """A phase failure; carries the phase name, chains the cause."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"phase {phase!r} failed: {cause}")
        self.phase = phase


@dataclasses.dataclass
class EditConfig:
    """Everything a run needs, JSON-serializable and echoed verbatim into
    the trace.  File-path fields are checked for existence at validation."""

    T: int = 50
    profile: str = "linear-beta"
    eta: float = 1.0
    backend: str = "toy"
    weights: Optional[str] = None
    world: Optional[dict] = None
    source: Optional[str] = None
    target_ref: Optional[str] = None
    mask: Optional[str] = None
    src_text: Optional[str] = None
    tgt_text: Optional[str] = None
    src_emb: Optional[str] = None
    tgt_emb: Optional[str] = None
    embed_dim: int = 16
    embed_seed: int = 0
    freq_quantile: float = 0.75
    grad_quantile: float = 0.25
    hf_radius: float = 0.25
    lambda_prime: float = 0.2
    covdiff_floor: float = 0.1
    centered_cov: bool = False
    grad_metric: str = "temporal"
    cfg_scale: float = 5.0
    seed: int = 0
    out_dir: Optional[str] = None
    optimize_lambda: bool = False
    opt_iters: int = 3
    opt_step: float = 5e-2
    gamma_perc: float = 1.0
    encoder: str = "aligned"
    encoder_seed: int = 0
    alt_encoder_seed: int = 1
    decoder: str = "identity"
    blob_size: int = 16
    blob_seed: int = 0
    blob_per_class: int = 8
    dump_frames: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "EditConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "EditConfig":
        if self.profile not in _PROFILES:
            raise ValueError(f"profile must be one of {_PROFILES}, got {self.profile!r}")
        if self.backend not in _BACKENDS:
            raise ValueError(f"backend must be one of {_BACKENDS}, got {self.backend!r}")
        if self.encoder not in _ENCODERS:
            raise ValueError(f"encoder must be one of {_ENCODERS}, got {self.encoder!r}")
        if self.decoder not in _DECODERS:
            raise ValueError(f"decoder must be one of {_DECODERS}, got {self.decoder!r}")
        if self.grad_metric not in _GRAD_METRICS:
            raise ValueError(f"grad_metric must be one of {_GRAD_METRICS}, got {self.grad_metric!r}")
        for name in ("weights", "src_emb", "tgt_emb", "mask"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ValueError(f"config key {name!r} points at a missing file: {path}")
        for name in ("source", "target_ref"):
            path = getattr(self, name)
            if path and not path.startswith("blob:") and path != "alt" and not Path(path).exists():
                raise ValueError(f"config key {name!r} points at a missing file: {path}")
        return self


def masked_rmse(a, b, mask=None) -> float:
    """RMSE between two grids, restricted to True mask positions (a (H, W)
    mask broadcasts over channels); no mask means all positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            mask = np.broadcast_to(mask, a.shape)
        diff = diff[mask]
        if diff.size == 0:
            return 0.0
    return float(np.sqrt(np.mean(diff**2)))


def psnr(reference, reconstruction) -> float:
    """Peak signal-to-noise ratio in dB; peak = value range of the reference.
    Infinite for an exact match, 0.0 for a constant reference."""
    ref = np.asarray(reference, dtype=np.float64)
    peak = float(ref.max() - ref.min())
    if peak == 0.0:
        return 0.0
    mse = float(np.mean((ref - np.asarray(reconstruction, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def _cosine(u: np.ndarray, v: np.ndarray, flags: Optional[dict] = None, name: str = "") -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        if flags is not None:
            flags[f"zero_norm_{name}"] = True
        return 0.0
    return float(u @ v / (nu * nv))


def score_metrics(
    src_img,
    edit_img,
    tgt_ref_img,
    src_emb: PromptEmbedding,
    tgt_emb: PromptEmbedding,
    enc,
    alt_enc,
    mask=None,
) -> dict:
    """Cosine-similarity metric map: image-image on the main encoder,
    image-text on the main encoder, image-image on the alternate encoder;
    plus target alignment and off-edit error when a reference/mask exists."""
    flags: dict = {}
    out = {
        "clip_i": _cosine(enc.encode_image(src_img), enc.encode_image(edit_img), flags, "clip_i"),
        "clip_t": _cosine(enc.encode_image(edit_img), enc.encode_text(tgt_emb), flags, "clip_t"),
        "dino_i": _cosine(
            alt_enc.encode_image(src_img), alt_enc.encode_image(edit_img), flags, "dino_i"
        ),
    }
    if tgt_ref_img is not None:
        out["target_alignment"] = _cosine(
            enc.encode_image(edit_img), enc.encode_image(tgt_ref_img), flags, "target_alignment"
        )
    if mask is not None:
        out["off_edit_rmse"] = masked_rmse(src_img, edit_img, ~np.asarray(mask, dtype=bool))
        out["on_edit_rmse"] = masked_rmse(src_img, edit_img, np.asarray(mask, dtype=bool))
    if flags:
        out["flags"] = flags
    return out


@dataclasses.dataclass
class RunTrace:
    """Self-contained run record; reproducible from this plus input files."""

    config: dict
    stage_plan: dict
    lambda_init: list
    lambda_final: list
    covdiff: list
    covdiff_disabled: bool
    mixed_tokens: list
    steps: list
    loss: Optional[dict]
    loss_history: list
    metrics: dict
    recon_error: float
    images: dict
    flags: dict
    timing: dict
    error: Optional[dict] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def comparable_dict(self) -> dict:
        """Everything determinism covers: the trace minus wall-clock."""
        d = self.to_dict()
        d.pop("timing", None)
        return d

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.json").write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (out / "metrics.json").write_text(
            json.dumps(self.metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        with open(out / "distances.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "d_src", "d_tgt"])
            for step in self.steps:
                writer.writerow(
                    [step["t"], repr(step["d_src"]), "" if step["d_tgt"] is None else repr(step["d_tgt"])]
                )
        if self.images.get("edited") is not None:
            frames = out / "frames"
            frames.mkdir(exist_ok=True)
            write_pgm(frames / "edited.pgm", np.asarray(self.images["edited"])[0])

    @classmethod
    def from_file(cls, path) -> "RunTrace":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**d)


def _build_schedule_pair(cfg: EditConfig):
    """The run schedule plus its deterministic twin (same alphas, eta = 0)
    used for inversion."""
    sched = build_schedule(cfg.T, cfg.profile, cfg.eta)
    if cfg.eta == 0.0:
        return sched, sched
    det = Schedule(
        T=sched.T, alphas=np.array(sched.alphas), eta=0.0, sigmas=np.zeros(sched.T)
    )
    return sched, det


def _build_backend(cfg: EditConfig, schedule: Schedule):
    if cfg.backend == "analytic":
        if not cfg.world:
            raise ValueError("analytic backend needs a 'world' config entry")
        world = GaussianMixtureWorld(
            means=np.asarray(cfg.world["means"], dtype=np.float64),
            weights=np.asarray(cfg.world["weights"], dtype=np.float64),
            variance=float(cfg.world["variance"]),
            shape=tuple(cfg.world["shape"]),
        )
        return AnalyticBackend(world=world, schedule=schedule)
    if not cfg.weights:
        raise ValueError("toy backend needs a 'weights' config entry")
    net = ToyDenoiser.load(cfg.weights)
    if net.T != schedule.T:
        raise ValueError(f"weights trained for T={net.T}, config says T={schedule.T}")
    return net


def _build_decoder(cfg: EditConfig):
    return IdentityDecoder() if cfg.decoder == "identity" else UpsampleDecoder(2)


def _load_prompts(cfg: EditConfig):
    def one(emb_path, text, which):
        if emb_path:
            return load_embeddings(emb_path)
        if text:
            return embed_text(text, dim=cfg.embed_dim, seed=cfg.embed_seed)
        raise ValueError(f"no {which} prompt: set {which}_text or {which}_emb")

    src = one(cfg.src_emb, cfg.src_text, "src")
    tgt = one(cfg.tgt_emb, cfg.tgt_text, "tgt")
    return pad_align(src, tgt)


def _load_grid(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".npy"):
        arr = np.asarray(np.load(path), dtype=np.float64)
    elif path.endswith(".pgm"):
        arr, _ = read_pgm(path)
    else:
        raise ValueError(f"unsupported image format: {path} (use .npy or .pgm)")
    if arr.ndim == 2:
        arr = arr[None, :, :]
    return arr


def _ingest_source(cfg: EditConfig):
    """Resolve the source latent plus, when available, the target reference
    image and edit mask.  blob:<label>:<index> sources pull a deterministic
    benchmark instance whose other-amplitude twin is the reference."""
    if not cfg.source:
        raise ValueError("no source image: set the 'source' config key")
    if cfg.source.startswith("blob:"):
        parts = cfg.source.split(":")
        if len(parts) != 3:
            raise ValueError(f"blob source must be blob:<label>:<index>, got {cfg.source!r}")
        label, index = parts[1], int(parts[2])
        s = single_sample(label, index, cfg.blob_size, cfg.blob_seed)
        tgt_ref = s.alt_latent() if cfg.target_ref in (None, "alt") else None
        if tgt_ref is None and cfg.target_ref:
            tgt_ref = LatentCode(data=_load_grid(cfg.target_ref), timestep=0)
        mask = s.mask if cfg.mask is None else np.load(cfg.mask).astype(bool)
        return s.latent(), tgt_ref, mask
    source = LatentCode(data=_load_grid(cfg.source), timestep=0)
    tgt_ref = None
    if cfg.target_ref and cfg.target_ref != "alt":
        tgt_ref = LatentCode(data=_load_grid(cfg.target_ref), timestep=0)
    mask = np.load(cfg.mask).astype(bool) if cfg.mask else None
    return source, tgt_ref, mask


def _build_encoders(cfg: EditConfig, image_shape, embed_dim):
    alt = ToyJointEncoder(image_shape, embed_dim, seed=cfg.alt_encoder_seed)
    if cfg.encoder == "random":
        return ToyJointEncoder(image_shape, embed_dim, seed=cfg.encoder_seed), alt
    expected = (1, cfg.blob_size, cfg.blob_size)
    if tuple(image_shape) != expected:
        raise ValueError(
            f"aligned encoder calibrates on {expected} benchmark images, source is {tuple(image_shape)}"
        )
    samples = make_dataset(cfg.blob_per_class, cfg.blob_size, cfg.blob_seed)
    means = class_mean_images(samples)
    table = condition_table(cfg.embed_dim, cfg.embed_seed)
    # Calibrate on the classes the edit moves between when both prompts name
    # benchmark classes; pooled prompts of a single pair are independent, so
    # the text map hits those class means exactly.  Otherwise use all classes.
    by_prompt = {prompt_for(lbl): lbl for lbl in means}
    chosen = sorted({by_prompt[p] for p in (cfg.src_text, cfg.tgt_text) if p in by_prompt})
    if len(chosen) < 2:
        chosen = sorted(means)
    pairs = [(table[lbl], means[lbl]) for lbl in chosen]
    enc = AlignedJointEncoder(image_shape, embed_dim, pairs, seed=cfg.encoder_seed)
    return enc, alt


def run_edit(
    cfg: EditConfig,
    *,
    source: Optional[LatentCode] = None,
    tgt_ref: Optional[LatentCode] = None,
    mask=None,
    backend=None,
    enc=None,
    alt_enc=None,
) -> RunTrace:
    """Execute one full edit; see the module docstring for the phase list.

    The keyword overrides let callers inject in-memory sources, backends,
    and encoders; anything not supplied is built from the config.
    Deterministic end-to-end for a fixed config and seed.
    """
    cfg.validate()
    timing: dict = {}
    partial: dict = {"config": cfg.to_dict()}

    def phase(name, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except Exception as e:
            if cfg.out_dir:
                partial["error"] = {"phase": name, "message": str(e)}
                out = Path(cfg.out_dir)
                out.mkdir(parents=True, exist_ok=True)
                (out / "trace.json").write_text(
                    json.dumps(partial, indent=2, sort_keys=True, default=_json_fallback) + "\n",
                    encoding="utf-8",
                )
            raise PipelineError(name, e) from e
        finally:
            timing[name] = time.perf_counter() - t0

    def ingest():
        nonlocal source, tgt_ref, mask, backend, enc, alt_enc
        if source is None:
            source, auto_ref, auto_mask = _ingest_source(cfg)
            tgt_ref = tgt_ref if tgt_ref is not None else auto_ref
            mask = mask if mask is not None else auto_mask
        src_e, tgt_e = _load_prompts(cfg)
        sched, sched_det = _build_schedule_pair(cfg)
        if backend is None:
            backend = _build_backend(cfg, sched)
        guided = GuidedBackend(backend=backend, scale=cfg.cfg_scale)
        decoder = _build_decoder(cfg)
        src_img = decode(source, decoder)
        if enc is None or alt_enc is None:
            built_enc, built_alt = _build_encoders(cfg, src_img.shape, src_e.dim)
            enc = enc or built_enc
            alt_enc = alt_enc or built_alt
        return src_e, tgt_e, sched, sched_det, guided, decoder, src_img

    src_e, tgt_e, sched, sched_det, guided, decoder, src_img = phase("ingest", ingest)

    def provider_const(emb):
        return lambda t: emb

    inv = phase("inversion", lambda: invert(guided, sched_det, src_e, source))
    z_T = inv.z_T

    pilot = phase(
        "pilot",
        lambda: sample(guided, sched, provider_const(src_e), z_T, cfg.seed, t_boost=0),
    )
    recon_error = float(
        np.max(np.abs(pilot.final.data - source.data))
    )

    def discern():
        plan = discern_stages(
            pilot,
            freq_quantile=cfg.freq_quantile,
            grad_quantile=cfg.grad_quantile,
            radius_fraction=cfg.hf_radius,
            decoder=decoder,
            grad_metric=cfg.grad_metric,
        )
        lam = init_lambda(plan, cfg.lambda_prime)
        cd = covdiff(src_e, tgt_e, centered=cfg.centered_cov)
        return plan, lam, cd

    plan, lam0, cd = phase("discern", discern)
    partial["stage_plan"] = plan.to_dict()

    def edit_pass(lam: LambdaInit) -> Trajectory:
        ms = MixSchedule(
            lambda_values=lam.values,
            lambda_prime=cfg.lambda_prime,
            covdiff=cd,
            t_edit=plan.t_edit,
            covdiff_floor=cfg.covdiff_floor,
        )
        provider = cond_provider(ms, src_e, tgt_e)
        return sample(guided, sched, provider, z_T, cfg.seed, t_boost=plan.t_boost)

    pnet = ToyPerceptualNet()
    loss_flags: dict = {}

    def loss_for(traj: Trajectory) -> LossReport:
        edit_img = decode(traj.final, decoder)
        dclip = directional_loss(enc, src_img, edit_img, src_e, tgt_e, flags=loss_flags)
        perc = perceptual_loss(pnet, src_img, edit_img)
        return total_loss(dclip, perc, cfg.gamma_perc)

    traj = phase("edit", lambda: edit_pass(lam0))

    lam_final = lam0
    loss_history: list = []
    if cfg.optimize_lambda:

        def optimize():
            return optimize_lambda(
                lambda lam: loss_for(edit_pass(lam)),
                lam0,
                iterations=cfg.opt_iters,
                step=cfg.opt_step,
                rng_seed=cfg.seed,
            )

        lam_final, loss_history = phase("optimize", optimize)
        if lam_final is not lam0:
            traj = phase("edit-final", lambda: edit_pass(lam_final))

    def finish():
        edit_img = decode(traj.final, decoder)
        loss = loss_for(traj)
        tgt_img = decode(tgt_ref, decoder) if tgt_ref is not None else None
        metrics = score_metrics(src_img, edit_img, tgt_img, src_e, tgt_e, enc, alt_enc, mask=mask)
        v_src = enc.encode_image(src_img)
        v_tgt = enc.encode_image(tgt_img) if tgt_img is not None else None
        modulated = not cd.degenerate
        steps = []
        for t in range(1, sched.T + 1):
            mixed = mix(src_e, tgt_e, float(lam_final.values[t - 1]))
            v_mix = enc.encode_text(mixed)
            steps.append(
                {
                    "t": t,
                    "freq": float(plan.freq_trace[t - 1]),
                    "grad": float(plan.grad_trace[t - 1]),
                    "noise_on": bool(t < plan.t_boost),
                    "covdiff_on": bool(modulated and t >= plan.t_edit),
                    "mixed_matrix": mixed.matrix.tolist(),
                    "d_src": float(np.linalg.norm(v_mix - v_src)),
                    "d_tgt": None if v_tgt is None else float(np.linalg.norm(v_mix - v_tgt)),
                }
            )
        images = {
            "src": src_img.tolist(),
            "edited": edit_img.tolist(),
            "tgt_ref": None if tgt_img is None else tgt_img.tolist(),
            "mask": None if mask is None else np.asarray(mask, dtype=bool).tolist(),
        }
        flags = {
            "freq_fallback": plan.freq_fallback,
            "grad_fallback": plan.grad_fallback,
            "lambda_degenerate": lam0.degenerate,
            "covdiff_disabled": cd.degenerate,
        }
        flags.update(loss_flags)
        trace = RunTrace(
            config=cfg.to_dict(),
            stage_plan=plan.to_dict(),
            lambda_init=lam0.values.tolist(),
            lambda_final=lam_final.values.tolist(),
            covdiff=cd.values.tolist(),
            covdiff_disabled=cd.degenerate,
            mixed_tokens=list(mix(src_e, tgt_e, 1.0).tokens),
            steps=steps,
            loss=loss.to_dict(),
            loss_history=list(loss_history),
            metrics=metrics,
            recon_error=recon_error,
            images=images,
            flags=flags,
            timing=timing,
        )
        return trace

    trace = phase("metrics", finish)
    if cfg.out_dir:
        trace.save(cfg.out_dir)
        if cfg.dump_frames:
            frames = Path(cfg.out_dir) / "frames"
            frames.mkdir(parents=True, exist_ok=True)
            for t in range(0, sched.T + 1):
                frame = decode(traj.latent_at(t), decoder)
                write_pgm(frames / f"z_{t:03d}.pgm", frame.mean(axis=0))
    return trace


def _json_fallback(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def trace_embedding_distances(run: RunTrace, enc):
    """Recompute per-step (d_src, d_tgt) from the stored mixed embeddings
    and images; the analysis behind the distance-shift figure.

    Returns rows of (t, d_src, d_tgt or None); fails if the trace lacks the
    per-step records.
    """
    if not run.steps or "mixed_matrix" not in run.steps[0]:
        raise ValueError("trace lacks per-step mixed-embedding records")
    if run.images.get("src") is None:
        raise ValueError("trace lacks the source image record")
    v_src = enc.encode_image(np.asarray(run.images["src"], dtype=np.float64))
    v_tgt = None
    if run.images.get("tgt_ref") is not None:
        v_tgt = enc.encode_image(np.asarray(run.images["tgt_ref"], dtype=np.float64))
    tokens = tuple(run.mixed_tokens)
    rows = []
    for step in run.steps:
        emb = PromptEmbedding(tokens=tokens, matrix=np.asarray(step["mixed_matrix"]))
        v = enc.encode_text(emb)
        d_src = float(np.linalg.norm(v - v_src))
        d_tgt = None if v_tgt is None else float(np.linalg.norm(v - v_tgt))
        rows.append((step["t"], d_src, d_tgt))
    return rows


def write_distances_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "d_src", "d_tgt"])
        for t, d_src, d_tgt in rows:
            writer.writerow([t, repr(d_src), "" if d_tgt is None else repr(d_tgt)])


def quantile_sweep(
    cfg: EditConfig,
    freq_qs,
    grad_qs,
    *,
    source: Optional[LatentCode] = None,
    tgt_ref: Optional[LatentCode] = None,
    mask=None,
    backend=None,
    enc=None,
    alt_enc=None,
) -> dict:
    """Re-discern and re-edit over a quantile grid, tabulating the stage
    boundaries, off-edit reconstruction error, and target alignment per
    cell.  Inversion and the pilot run are shared across cells; a failing
    cell records its error and the sweep continues.
    """
    freq_qs = list(freq_qs)
    grad_qs = list(grad_qs)
    if not freq_qs or not grad_qs:
        raise ValueError("quantile lists must be nonempty")
    cfg.validate()
    if source is None:
        source, auto_ref, auto_mask = _ingest_source(cfg)
        tgt_ref = tgt_ref if tgt_ref is not None else auto_ref
        mask = mask if mask is not None else auto_mask
    src_e, tgt_e = _load_prompts(cfg)
    sched, sched_det = _build_schedule_pair(cfg)
    if backend is None:
        backend = _build_backend(cfg, sched)
    guided = GuidedBackend(backend=backend, scale=cfg.cfg_scale)
    decoder = _build_decoder(cfg)
    src_img = decode(source, decoder)
    if enc is None or alt_enc is None:
        built_enc, built_alt = _build_encoders(cfg, src_img.shape, src_e.dim)
        enc = enc or built_enc
        alt_enc = alt_enc or built_alt

    inv = invert(guided, sched_det, src_e, source)
    z_T = inv.z_T
    pilot = sample(guided, sched, lambda t: src_e, z_T, cfg.seed, t_boost=0)
    from .stagefinder import high_freq_energy, noise_gradient_trace

    freq_trace = np.array(
        [
            high_freq_energy(decode(pilot.latent_at(t), decoder), cfg.hf_radius)
            for t in range(1, sched.T + 1)
        ]
    )
    grad_trace = noise_gradient_trace(pilot, metric=cfg.grad_metric)
    cd = covdiff(src_e, tgt_e, centered=cfg.centered_cov)
    tgt_img = decode(tgt_ref, decoder) if tgt_ref is not None else None

    rows = []
    for fq in freq_qs:
        for gq in grad_qs:
            row = {"freq_quantile": fq, "grad_quantile": gq}
            try:
                plan = discern_from_traces(freq_trace, grad_trace, fq, gq)
                lam = init_lambda(plan, cfg.lambda_prime)
                ms = MixSchedule(
                    lambda_values=lam.values,
                    lambda_prime=cfg.lambda_prime,
                    covdiff=cd,
                    t_edit=plan.t_edit,
                    covdiff_floor=cfg.covdiff_floor,
                )
                provider = cond_provider(ms, src_e, tgt_e)
                traj = sample(guided, sched, provider, z_T, cfg.seed, t_boost=plan.t_boost)
                edit_img = decode(traj.final, decoder)
                row.update(
                    {
                        "t_edit": plan.t_edit,
                        "t_boost": plan.t_boost,
                        "noise_steps": max(plan.t_boost - 1, 0),
                        "edit_steps": plan.T - plan.t_edit + 1,
                        "freq_fallback": plan.freq_fallback,
                        "grad_fallback": plan.grad_fallback,
                    }
                )
                if mask is not None:
                    row["off_edit_rmse"] = masked_rmse(
                        src_img, edit_img, ~np.asarray(mask, dtype=bool)
                    )
                if tgt_img is not None:
                    row["target_alignment"] = _cosine(
                        enc.encode_image(edit_img), enc.encode_image(tgt_img)
                    )
            except Exception as e:
                row["error"] = f"{type(e).__name__}: {e}"
            rows.append(row)
    return {"config": cfg.to_dict(), "rows": rows}


def write_sweep_csv(report: dict, path) -> None:
    rows = report["rows"]
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
