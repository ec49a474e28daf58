"""Deterministic end-to-end pipeline: synth, pretrain, sample, preview, score, pairs, dpo, eval."""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .config import PipelineConfig
from .dpo import (DpoConfig, PreferencePair, build_preference_pairs, dpo_train, epoch_generator,
                  heldout_mis_rate, pair_candidates, sample_candidates)
from .errors import ClampWarning, MissingArtifact, NoPairs
from .geometry import SubjectProxy, Trajectory
from .metrics import EvalReport, evaluate_trajectories
from .model import (ModelDescriptor, PolicyModel, PretrainHyper, cross_entropy, load_checkpoint, pretrain,
                    save_checkpoint)
from .preview import emit_preview
from .scoring import (Prompt, RegressionHyper, RegressionScorer, ScoreRecord, ScoringContext, Strategy,
                      build_regression_dataset, score_candidates, train_regression_scorer)
from .storage import atomic_write_text, blob_hash, file_hash, read_jsonl, write_jsonl
from .synth import DatasetSpec, load_dataset, record_seed, synth_dataset, trajectory_rows
from .taxonomy import ShotTags, caption_from_tags, sample_tags
from .tokenizer import TokenizedTrajectory, TokenSpec, detokenize, tokenize

log = logging.getLogger("shotpref")

STAGES = ("synth", "pretrain", "sample", "preview", "score", "pairs", "dpo", "eval")

# artifact -> producing stage
ARTIFACTS = {
    "data/train.jsonl": "synth",
    "data/reference.jsonl": "synth",
    "data/prompts.jsonl": "synth",
    "data/heldout.jsonl": "synth",
    "checkpoints/pretrain.ckpt": "pretrain",
    "logs/pretrain.json": "pretrain",
    "samples/pretrain.jsonl": "sample",
    "scores/regression.json": "score",
    "scores/candidates.jsonl": "score",
    "pairs/pairs.jsonl": "pairs",
    "checkpoints/dpo.ckpt": "dpo",
    "logs/dpo.json": "dpo",
    "eval/report.json": "eval",
    "eval/report.txt": "eval",
}


@dataclass(frozen=True)
class RunSpec:
    """One DPO run: the main one or an ablation."""

    name: str
    strategy: str
    beta: float


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


class Pipeline:
    def __init__(self, config: PipelineConfig, out: str | os.PathLike | None = None):
        self.config = config
        self.out = os.fspath(out if out is not None else config.paths.out)
        self.subject = SubjectProxy(height=config.dataset.subject_height)
        self.aspect = config.dataset.aspect
        self.spec = TokenSpec(bins=config.tokenizer.bins)

    # -- paths ---------------------------------------------------------------

    def path(self, rel: str) -> str:
        return os.path.join(self.out, rel)

    def require(self, *rels: str) -> None:
        for rel in rels:
            if not os.path.exists(self.path(rel)):
                raise MissingArtifact(rel, ARTIFACTS.get(rel, _producer(rel)))

    # -- shared pieces -------------------------------------------------------

    def dataset_spec(self, count: int) -> DatasetSpec:
        d = self.config.dataset
        return DatasetSpec(count=count, frames_per_traj=d.frames_per_traj, fps=d.fps, seed=self.config.seeds.dataset,
                           tag_distribution=d.tag_distribution, jitter=d.jitter, subject_height=d.subject_height,
                           aspect=d.aspect)

    def dpo_config(self, beta: float | None = None) -> DpoConfig:
        c = self.config.dpo
        return DpoConfig(beta=c.beta if beta is None else beta, candidates=c.candidates, min_gap=c.min_gap,
                         temperature=c.temperature, top_k=c.top_k, lr=c.lr, pairs_per_step=c.pairs_per_step,
                         epochs=c.epochs, seed=self.config.seeds.dpo, sample_chunk=c.sample_chunk,
                         grad_clip=c.grad_clip)

    def load_prompts(self, rel: str) -> list[Prompt]:
        return [Prompt(r["text"], ShotTags.from_dict(r["tags"])) for r in read_jsonl(self.path(rel))]

    def runs(self) -> list[RunSpec]:
        main = self.config.scorer.strategy
        beta = self.config.dpo.beta
        out = [RunSpec("dpo", main, beta)]
        for s in self.config.eval.strategy_ablation:
            if s != main:
                out.append(RunSpec(f"ablation_{s}_beta{beta:g}", s, beta))
        for b in self.config.eval.beta_sweep:
            if float(b) != beta:
                out.append(RunSpec(f"ablation_{main}_beta{float(b):g}", main, float(b)))
        return out

    def scoring_context(self, strategy: str) -> ScoringContext:
        sc = self.config.scorer
        regression = None
        if strategy == "regression":
            self.require("scores/regression.json")
            with open(self.path("scores/regression.json"), encoding="utf-8") as fh:
                regression = RegressionScorer.from_json(fh.read())
        return ScoringContext(subject=self.subject, aspect=self.aspect, regression=regression,
                              endpoint=sc.remote_endpoint, timeout=sc.timeout, caption_seed=sc.caption_seed)

    def score_fn(self, prompts: list[Prompt], strategy: str):
        ctx = self.scoring_context(strategy)

        def fn(i: int, trajs: list[Trajectory]) -> list[float]:
            return [r.value for r in score_candidates(prompts[i], trajs, strategy, ctx)]

        return fn

    # -- stages --------------------------------------------------------------

    def synth(self) -> None:
        cfg = self.config
        n_train, n_ref = cfg.dataset.count, cfg.eval.eval_samples
        synth_dataset(self.dataset_spec(n_train), self.path("data/train.jsonl"))
        # reference draw continues the record stream, so it never overlaps training
        synth_dataset(self.dataset_spec(n_ref), self.path("data/reference.jsonl"), start=n_train)
        for rel, seed, n in (("data/prompts.jsonl", cfg.seeds.dpo, cfg.dpo.prompts),
                             ("data/heldout.jsonl", cfg.seeds.eval, cfg.eval.heldout_prompts)):
            rng = np.random.default_rng(record_seed(seed, hash_tag(rel)))
            records = []
            for _ in range(n):
                tags = sample_tags(rng, cfg.dataset.tag_distribution)
                records.append({"tags": tags.to_dict(), "text": caption_from_tags(tags, int(rng.integers(2**31)))})
            write_jsonl(self.path(rel), records)
        log.info("synth: %d training, %d reference samples", n_train, n_ref)

    def pretrain(self) -> None:
        self.require("data/train.jsonl")
        cfg = self.config
        samples = load_dataset(self.path("data/train.jsonl"))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ClampWarning)
            tokens = [tokenize(s.trajectory, s.tags, self.spec) for s in samples]
        clamped = sum(t.clamped for t in tokens)
        if clamped:
            log.warning("pretrain: %d trajectory values clamped to token ranges", clamped)
        m = cfg.model
        model = PolicyModel(ModelDescriptor(cfg.dataset.frames_per_traj, m.width, m.depth, m.heads, m.mlp_ratio),
                            self.spec, cfg.seeds.model)
        p = cfg.pretrain
        hyper = PretrainHyper(lr=p.lr, batch_size=p.batch_size, epochs=p.epochs, tag_dropout=p.tag_dropout,
                              weight_decay=p.weight_decay)
        probe = torch.from_numpy(np.stack([t.tokens for t in tokens[:256]]))
        with torch.no_grad():
            initial = cross_entropy(model, probe).item()
        model, curve = pretrain(model, tokens, hyper, seed=cfg.seeds.model, log=log.info)
        save_checkpoint(model, self.path("checkpoints/pretrain.ckpt"), {"stage": "pretrain"})
        atomic_write_text(self.path("logs/pretrain.json"),
                          _json({"initial_loss": initial, "loss": curve, "clamped_values": clamped,
                                 "parameters": model.n_params}))

    def sample(self) -> None:
        self.require("checkpoints/pretrain.ckpt", "data/heldout.jsonl")
        policy = load_checkpoint(self.path("checkpoints/pretrain.ckpt"))
        prompts = self.load_prompts("data/heldout.jsonl")
        c = self.config.dpo
        g = torch.Generator().manual_seed(self.config.seeds.eval)
        seqs = sample_candidates(policy, [p.tags for p in prompts], 1, c.temperature, c.top_k, g, c.sample_chunk)
        records = []
        for p, s in zip(prompts, seqs[:, 0]):
            traj = detokenize(s, policy.spec, self.config.dataset.fps)
            records.append({"tags": p.tags.to_dict(), "text": p.text, "tokens": [int(t) for t in s],
                            "trajectory": trajectory_rows(traj), "fps": traj.fps})
        write_jsonl(self.path("samples/pretrain.jsonl"), records)
        log.info("sample: %d held-out trajectories", len(records))

    def preview(self) -> None:
        self.require("samples/pretrain.jsonl")
        records = read_jsonl(self.path("samples/pretrain.jsonl"))
        res = tuple(int(x) for x in self.config.eval.preview_resolution)
        for i, rec in enumerate(records[: self.config.eval.previews]):
            traj = detokenize(rec["tokens"], self.spec, rec["fps"])
            emit_preview(traj, self.subject, self.aspect, self.path(f"previews/sample_{i:03d}"), res)
        log.info("preview: %d sequences", min(len(records), self.config.eval.previews))

    def score(self) -> None:
        self.require("checkpoints/pretrain.ckpt", "data/prompts.jsonl", "data/train.jsonl")
        cfg = self.config
        samples = load_dataset(self.path("data/train.jsonl"))
        r = cfg.scorer.regression
        feats, targets, _ = build_regression_dataset([s.tags for s in samples], [s.trajectory for s in samples],
                                                     r.samples, cfg.seeds.model, self.subject, self.aspect)
        scorer, curve = train_regression_scorer(feats, targets, RegressionHyper(r.hidden, r.lr, r.epochs),
                                                cfg.seeds.model)
        atomic_write_text(self.path("scores/regression.json"), scorer.to_json())
        log.info("score: regression scorer loss %.4f -> %.4f", curve[0], curve[-1])

        policy = load_checkpoint(self.path("checkpoints/pretrain.ckpt"))
        prompts = self.load_prompts("data/prompts.jsonl")
        dc = self.dpo_config()
        seqs = sample_candidates(policy, [p.tags for p in prompts], dc.candidates, dc.temperature, dc.top_k,
                                 epoch_generator(dc.seed, 0), dc.sample_chunk)
        strategy = cfg.scorer.strategy
        ctx = self.scoring_context(strategy)
        records = []
        for i, (p, cands) in enumerate(zip(prompts, seqs)):
            trajs = [detokenize(s, policy.spec, cfg.dataset.fps) for s in cands]
            recs = score_candidates(p, trajs, strategy, ctx)
            records.append({"index": i, "strategy": strategy, "tokens": cands.tolist(),
                            "scores": [x.value for x in recs], "captions": [x.caption for x in recs]})
        write_jsonl(self.path("scores/candidates.jsonl"), records)
        log.info("score: %d prompts x %d candidates (%s)", len(prompts), dc.candidates, strategy)

    def pairs(self) -> None:
        self.require("scores/candidates.jsonl", "data/prompts.jsonl")
        prompts = self.load_prompts("data/prompts.jsonl")
        strategy = Strategy(self.config.scorer.strategy)
        gap = self.dpo_config().gap(strategy)
        out = []
        for rec in read_jsonl(self.path("scores/candidates.jsonl")):
            scored = [(TokenizedTrajectory(t), ScoreRecord(strategy, v)) for t, v in zip(rec["tokens"], rec["scores"])]
            try:
                out.extend(build_preference_pairs(scored, gap, prompts[rec["index"]].tags))
            except NoPairs:
                continue
        write_jsonl(self.path("pairs/pairs.jsonl"), [p.to_record() for p in out])
        log.info("pairs: %d preference pairs", len(out))

    def dpo(self) -> None:
        self.require("checkpoints/pretrain.ckpt", "pairs/pairs.jsonl", "scores/candidates.jsonl",
                     "data/prompts.jsonl", "data/heldout.jsonl")
        cfg = self.config
        prompts = self.load_prompts("data/prompts.jsonl")
        tags = [p.tags for p in prompts]
        heldout = [p.tags for p in self.load_prompts("data/heldout.jsonl")]
        stored = [PreferencePair.from_record(r) for r in read_jsonl(self.path("pairs/pairs.jsonl"))]
        candidates = np.array([r["tokens"] for r in read_jsonl(self.path("scores/candidates.jsonl"))])
        for run in self.runs():
            reference = load_checkpoint(self.path("checkpoints/pretrain.ckpt"))
            policy = load_checkpoint(self.path("checkpoints/pretrain.ckpt"))
            dc = self.dpo_config(run.beta)
            fn = self.score_fn(prompts, run.strategy)
            strategy = Strategy(run.strategy)
            if run.strategy == cfg.scorer.strategy:
                initial = stored
            else:
                # same first-epoch candidates as the main run, ranked by this run's scorer
                initial = pair_candidates(candidates, tags, fn, strategy, dc.gap(strategy), reference,
                                          cfg.dataset.fps)[0]
            log.info("dpo %s: strategy %s beta %g", run.name, run.strategy, run.beta)
            policy, logs = dpo_train(policy, reference, tags, fn, strategy, dc, heldout, self.subject, self.aspect,
                                     cfg.dataset.fps, log=log.info, initial_pairs=initial)
            extra = {"stage": "dpo", "strategy": run.strategy, "beta": run.beta}
            save_checkpoint(policy, self.path(f"checkpoints/{run.name}.ckpt"), extra)
            atomic_write_text(self.path(f"logs/{run.name}.json"),
                              _json({**extra, "epochs": [entry.to_dict() for entry in logs]}))

    def evaluate(self) -> None:
        runs = self.runs()
        self.require("checkpoints/pretrain.ckpt", "data/reference.jsonl", "data/heldout.jsonl",
                     *[f"checkpoints/{r.name}.ckpt" for r in runs])
        cfg = self.config
        reference = load_dataset(self.path("data/reference.jsonl"))
        heldout = [p.tags for p in self.load_prompts("data/heldout.jsonl")]
        ref_trajs = [s.trajectory for s in reference]
        texts = [s.caption for s in reference]
        c = cfg.dpo

        def generate(policy: PolicyModel) -> list[Trajectory]:
            g = torch.Generator().manual_seed(cfg.seeds.eval)
            seqs = sample_candidates(policy, [s.tags for s in reference], 1, c.temperature, c.top_k, g,
                                     c.sample_chunk)[:, 0]
            return [detokenize(s, policy.spec, cfg.dataset.fps) for s in seqs]

        def misr(policy: PolicyModel) -> float:
            return heldout_mis_rate(policy, heldout, self.subject, self.aspect, c.temperature, c.top_k,
                                    cfg.seeds.eval, cfg.dataset.fps)

        models = {"pretrain": "checkpoints/pretrain.ckpt", **{r.name: f"checkpoints/{r.name}.ckpt" for r in runs}}
        reports: dict[str, EvalReport] = {
            "reference": evaluate_trajectories(ref_trajs, texts, ref_trajs, self.subject, self.aspect, cfg.eval.k),
        }
        heldout_misr = {}
        for name, rel in models.items():
            policy = load_checkpoint(self.path(rel))
            if name in ("pretrain", "dpo"):
                reports[name] = evaluate_trajectories(generate(policy), texts, ref_trajs, self.subject, self.aspect,
                                                      cfg.eval.k)
            heldout_misr[name] = misr(policy)
            log.info("eval %s: held-out MisR %.4f", name, heldout_misr[name])

        main = cfg.scorer.strategy
        by_run = {r.name: r for r in runs}
        strategy_ablation = {r.strategy: heldout_misr[n] for n, r in by_run.items() if r.beta == c.beta}
        beta_sweep = {f"{r.beta:g}": heldout_misr[n] for n, r in by_run.items() if r.strategy == main}
        inputs = {rel: file_hash(self.path(rel)) for rel in
                  ("data/train.jsonl", "data/reference.jsonl", "data/heldout.jsonl", "data/prompts.jsonl",
                   *models.values())}
        report = {
            "config": cfg.to_dict(),
            "inputs": inputs,
            "inputs_hash": blob_hash(_json(inputs).encode("utf-8")),
            "reports": {k: v.to_dict() for k, v in reports.items()},
            "heldout_mis_rate": heldout_misr,
            "strategy_ablation": strategy_ablation,
            "beta_sweep": beta_sweep,
        }
        atomic_write_text(self.path("eval/report.json"), _json(report))
        atomic_write_text(self.path("eval/report.txt"), report_table(reports, heldout_misr, strategy_ablation,
                                                                      beta_sweep))
        log.info("eval: report hash %s", file_hash(self.path("eval/report.json")))

    # -- driver --------------------------------------------------------------

    def run(self, stage: str) -> None:
        if stage not in STAGES + ("all",):
            raise ValueError(f"unknown stage {stage!r}")
        os.makedirs(self.out, exist_ok=True)
        atomic_write_text(self.path("config.json"), self.config.to_json())
        for s in STAGES if stage == "all" else (stage,):
            log.info("stage %s", s)
            getattr(self, "evaluate" if s == "eval" else s)()


def hash_tag(name: str) -> int:
    """Stable small integer from a string, used to separate seed streams."""
    return int(blob_hash(name.encode("utf-8"))[:8], 16)


def _producer(rel: str) -> str:
    if rel.startswith("checkpoints/") or rel.startswith("logs/"):
        return "dpo"
    return "unknown"


def report_table(reports: dict[str, EvalReport], heldout_misr: dict[str, float], strategy_ablation: dict,
                 beta_sweep: dict) -> str:
    head = f"{'Method':<12}{'FCD':>10}{'CS':>8}{'P':>7}{'R':>7}{'D':>7}{'C':>7}{'MisR':>8}{'MisR(held)':>12}"
    lines = [head, "-" * len(head)]
    for name, r in reports.items():
        held = heldout_misr.get(name)
        held_s = f"{held:>12.4f}" if held is not None else f"{'-':>12}"
        lines.append(f"{name:<12}{r.fcd:>10.4f}{r.clatr_score_sub:>8.2f}{r.precision:>7.3f}{r.recall:>7.3f}"
                     f"{r.density:>7.3f}{r.coverage:>7.3f}{r.mis_rate_mean:>8.4f}{held_s}")
    lines.append("")
    lines.append("held-out MisR by scorer: " + ", ".join(f"{k}={v:.4f}" for k, v in sorted(strategy_ablation.items())))
    lines.append("held-out MisR by beta:   " + ", ".join(f"{k}={v:.4f}" for k, v in
                                                        sorted(beta_sweep.items(), key=lambda kv: float(kv[0]))))
    return "\n".join(lines) + "\n"


def run_stage(config: PipelineConfig, stage: str, out: str | os.PathLike | None = None) -> Pipeline:
    pipe = Pipeline(config, out)
    pipe.run(stage)
    return pipe
