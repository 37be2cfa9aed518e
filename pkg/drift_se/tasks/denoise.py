"""Paired enhancement on the synthetic corpus, with held-out SI-SDR and PCA snapshots."""

from __future__ import annotations

import pathlib
import typing

import numpy as np

from ..data import SignalCorpus
from ..logging import get_logger
from ..metrics import metric_report, mmd2, project_groups, si_sdr
from ..models import MetricReport, Waveform
from ..reporting import write_summary, write_snapshot, write_trace
from ..schemas import ExperimentConfig, Pairing
from ..settings import Settings
from ..signal import write_wav
from ..trainer import SpeechPipeline, Trainer, enhance, speech_pipeline
from .common import maybe_checkpoint, make_trainer, prepare_output, run_seeds

logger = get_logger()


class Evaluation(typing.NamedTuple):
    report: MetricReport
    enhanced: np.ndarray
    layers: dict[str, np.ndarray]

    @property
    def si_sdr_db(self) -> float:
        return self.report.si_sdr_db

    @property
    def mmd2(self) -> float:
        return self.report.mmd2


class SpeechExperiment:
    """Training loop shared by the paired and unpaired speech tasks.

    ``reference`` is the clean set the generated frames are compared with for MMD:
    the held-out cleans for paired training, the clean pool for unpaired training.
    """

    def __init__(
        self,
        cfg: ExperimentConfig,
        corpus: SignalCorpus,
        out_dir: pathlib.Path,
        *,
        unpaired: bool = False,
        settings: Settings | None = None,
        resume: pathlib.Path | None = None,
        label: str = '',
    ):
        self.cfg = cfg
        self.corpus = corpus
        self.out_dir = out_dir
        self.unpaired = unpaired
        self.settings = settings
        self.label = label
        self.pipeline: SpeechPipeline = speech_pipeline(
            cfg.stft, cfg.compression, cfg.encoder, cfg.train, input_dim=cfg.generator.input_dim
        )
        self.trainer: Trainer = make_trainer(cfg, self.pipeline, out_dir, resume=resume)
        self.eval_seed = run_seeds(cfg.seed).evaluation

        # every waveform that is scored or encoded is cropped to the fully overlapped region
        self.test_noisy = corpus.test_noisy
        self.test_noisy_valid = self.pipeline.crop(corpus.test_noisy)
        self.test_clean = self.pipeline.crop(corpus.test_clean)
        reference = corpus.pool if unpaired else corpus.test_clean
        self.reference_frames = self.deepest(self.pipeline.encode_targets(reference))
        self.noisy_frames = self.deepest(self.pipeline.encode(self.test_noisy_valid))
        self.noisy_si_sdr = float(
            np.mean(
                si_sdr(
                    self.test_noisy_valid,
                    self.test_clean,
                    zero_mean=cfg.metrics.si_sdr_zero_mean,
                )
            )
        )

    @property
    def checkpoint_name(self) -> str:
        return f'{self.label}_checkpoint.bin' if self.label else 'checkpoint.bin'

    @staticmethod
    def deepest(layers: tuple[np.ndarray, ...]) -> np.ndarray:
        return layers[-1].reshape(-1, layers[-1].shape[-1])

    def evaluate(self, *, mean_drift_norm: tuple[float, ...] = ()) -> Evaluation:
        rng = np.random.default_rng(self.eval_seed)
        enhanced = enhance(self.trainer.generator, self.test_noisy, self.pipeline, rng=rng)
        score = float(
            np.mean(si_sdr(enhanced, self.test_clean, zero_mean=self.cfg.metrics.si_sdr_zero_mean))
        )
        generated = self.deepest(self.pipeline.encode(enhanced))
        report = metric_report(
            si_sdr_db=score,
            mmd2=mmd2(generated, self.reference_frames, self.cfg.metrics.mmd_tau),
            mean_drift_norm=mean_drift_norm,
        )
        layers = {
            'clean': self.reference_frames,
            'noisy': self.noisy_frames,
            'generated': generated,
        }
        return Evaluation(report, enhanced, layers)

    def snapshot(self, epoch: int, evaluation: Evaluation) -> float:
        """Write the epoch's frame-distribution snapshot; returns generated-to-clean distance."""
        groups = project_groups(evaluation.layers)
        centroids = write_snapshot(
            self.out_dir / self.label if self.label else self.out_dir,
            epoch,
            groups,
            settings=self.settings,
        )
        row = centroids.set_index('group').loc['generated']
        return float(row['distance_to_clean'])

    def run(self) -> dict[str, typing.Any]:
        cfg = self.cfg
        trainer = self.trainer
        tag = f'[{self.label}] ' if self.label else ''
        initial = self.evaluate()
        logger.info(
            f'📊 {tag}Noisy SI-SDR {self.noisy_si_sdr:.3f} dB, initial enhanced '
            f'{initial.si_sdr_db:.3f} dB, MMD² {initial.mmd2:.6g}'
        )
        epochs = [
            {
                'epoch': trainer.state.epoch,
                'step': trainer.state.step,
                'loss': np.nan,
                'si_sdr': initial.si_sdr_db,
                'mmd': initial.mmd2,
            }
        ]
        snapshots = set(cfg.snapshot_epochs)
        distances: dict[int, float] = {}
        latest = initial

        while trainer.state.epoch < cfg.train.epochs:
            batches = self.corpus.batches(
                trainer.rng, cfg.train.batch_size, unpaired=self.unpaired
            )
            metrics = trainer.run_epoch(batches)
            epoch = trainer.state.epoch
            row = {
                'epoch': epoch,
                'step': trainer.state.step,
                'loss': float(np.mean([m.loss for m in metrics])),
                'si_sdr': np.nan,
                'mmd': np.nan,
            }
            if epoch % cfg.eval_every == 0 or epoch in snapshots or epoch == cfg.train.epochs:
                drift_norms = np.mean([m.mean_drift_norm for m in metrics], axis=0)
                latest = self.evaluate(mean_drift_norm=tuple(float(x) for x in drift_norms))
                row.update(si_sdr=latest.si_sdr_db, mmd=latest.mmd2)
                trainer.record(mmd=latest.mmd2, si_sdr=latest.si_sdr_db)
                logger.info(
                    f"📊 {tag}Epoch {epoch}: loss={row['loss']:.6g} "
                    f'SI-SDR={latest.si_sdr_db:.3f} dB MMD²={latest.mmd2:.6g}'
                )
                if epoch in snapshots:
                    distances[epoch] = self.snapshot(epoch, latest)
                    latest = latest._replace(
                        report=latest.report.model_copy(
                            update={'centroid_distance': distances[epoch]}
                        )
                    )
            epochs.append(row)
            maybe_checkpoint(
                trainer, self.out_dir, settings=self.settings, name=self.checkpoint_name
            )

        prefix = f'{self.label}_' if self.label else ''
        maybe_checkpoint(
            trainer, self.out_dir, settings=self.settings, final=True, name=self.checkpoint_name
        )
        write_trace(trainer.rows, self.out_dir / f'{prefix}steps.csv', settings=self.settings)
        write_trace(epochs, self.out_dir / f'{prefix}epochs.csv', settings=self.settings)
        self.write_examples(latest.enhanced, prefix)

        first, last = (min(distances), max(distances)) if distances else (None, None)
        return {
            'noisy_si_sdr': self.noisy_si_sdr,
            'initial_si_sdr': initial.si_sdr_db,
            'final_si_sdr': latest.si_sdr_db,
            'si_sdr_improvement': latest.si_sdr_db - self.noisy_si_sdr,
            'initial_mmd2': initial.mmd2,
            'final_mmd2': latest.mmd2,
            'centroid_distance': {str(epoch): value for epoch, value in sorted(distances.items())},
            'centroid_ratio': distances[last] / distances[first]
            if distances and distances[first] > 0
            else None,
            'steps': trainer.state.step,
            'final_report': latest.report.model_dump(),
        }

    def write_examples(self, enhanced: np.ndarray, prefix: str, count: int = 2) -> None:
        wav_dir = self.out_dir / 'wav'
        wav_dir.mkdir(parents=True, exist_ok=True)
        rate = self.cfg.stft.sample_rate
        for index in range(min(count, enhanced.shape[0])):
            for name, samples in (
                ('noisy', self.test_noisy_valid[index]),
                ('clean', self.test_clean[index]),
                ('enhanced', enhanced[index]),
            ):
                path = wav_dir / f'{prefix}item{index}_{name}.wav'
                write_wav(path, Waveform(samples=samples, sample_rate=rate))


def run_denoise(
    cfg: ExperimentConfig,
    *,
    settings: Settings | None = None,
    resume: pathlib.Path | None = None,
) -> dict[str, typing.Any]:
    out_dir = prepare_output(cfg)
    unpaired = cfg.train.pairing == Pairing.unpaired
    corpus = SignalCorpus.build(cfg.data, cfg.seed, with_pool=unpaired)
    results = SpeechExperiment(
        cfg, corpus, out_dir, unpaired=unpaired, settings=settings, resume=resume
    ).run()
    summary = {'task': cfg.task.value, 'seed': cfg.seed, **results}
    write_summary(out_dir / 'summary.json', summary)
    logger.info(
        f"✅ denoise finished: SI-SDR {results['noisy_si_sdr']:.3f} -> "
        f"{results['final_si_sdr']:.3f} dB"
    )
    return summary
